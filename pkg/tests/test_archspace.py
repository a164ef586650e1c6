"""Genome coding, search-space cardinality, and the analytic size model."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastic_nas.archspace import (
    ArchGenome,
    BytePolicy,
    GenomeParseError,
    InvalidEncodingError,
    InvalidGenomeError,
    cardinality,
    decode,
    encode,
    enumerate_genomes,
    full_genome,
    llama2_7b_space,
    model_bytes,
    param_count,
    parse_genome,
    phenotype,
    sample_random,
    toy_space,
)
from elastic_nas.rng import substream


@pytest.fixture(scope="module")
def toy():
    return toy_space()


@pytest.fixture(scope="module")
def llama():
    return llama2_7b_space()


def genomes(space):
    idx = st.integers(0, len(space.inter_choices) - 1)
    return st.builds(
        lambda lc, widths: ArchGenome(
            layer_count=space.layer_choices[lc],
            inter_sizes=tuple(space.inter_choices[i] for i in widths),
        ),
        st.integers(0, len(space.layer_choices) - 1),
        st.tuples(*([idx] * space.dims.max_layers)),
    )


class TestGenomeText:
    def test_roundtrip_full(self, toy):
        g = full_genome(toy)
        assert g.to_text() == "8:" + ",".join(["128"] * 8)
        assert parse_genome(g.to_text(), toy) == g

    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_roundtrip_random(self, data, toy):
        g = data.draw(genomes(toy))
        assert parse_genome(g.to_text(), toy) == g

    def test_parse_without_space(self):
        g = parse_genome("6:128,128,128,128,64,64,64,128")
        assert g.layer_count == 6 and len(g.inter_sizes) == 8

    def test_parse_errors_report_position(self, toy):
        with pytest.raises(GenomeParseError, match="position"):
            parse_genome("6:128,128,x,128,64,64,64,128", toy)
        with pytest.raises(GenomeParseError):
            parse_genome("no-colon-here", toy)
        with pytest.raises(GenomeParseError):
            parse_genome("6:128", toy)

    def test_invalid_choices_rejected(self, toy):
        with pytest.raises(GenomeParseError):
            parse_genome("5:128,128,128,128,64,64,64,128", toy)
        with pytest.raises(GenomeParseError):
            parse_genome("6:128,128,128,128,64,64,64,99", toy)


class TestEncoding:
    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_encode_decode_roundtrip(self, data, toy):
        g = data.draw(genomes(toy))
        assert decode(encode(g, toy), toy) == g

    def test_encode_is_choice_indices(self, toy):
        g = parse_genome("4:64,128,64,128,64,128,64,128", toy)
        assert encode(g, toy) == [0, 0, 1, 0, 1, 0, 1, 0, 1]

    def test_decode_rejects_bad_vectors(self, toy):
        with pytest.raises(InvalidEncodingError):
            decode([0] * 8, toy)
        with pytest.raises(InvalidEncodingError):
            decode([0, 2, 0, 0, 0, 0, 0, 0, 0], toy)


class TestPhenotype:
    def test_prefix_truncation(self, toy):
        g = parse_genome("4:64,128,64,128,128,128,128,128", toy)
        assert phenotype(g, toy) == (64, 128, 64, 128)

    def test_distinct_genomes_share_phenotype(self, toy):
        a = parse_genome("4:64,64,64,64,64,64,64,64", toy)
        b = parse_genome("4:64,64,64,64,128,128,128,128", toy)
        assert a != b and phenotype(a, toy) == phenotype(b, toy)

    def test_toy_distinct_phenotypes(self, toy):
        phenos = {phenotype(g, toy) for g in enumerate_genomes(toy)}
        assert len(phenos) == 336  # sum over l of 2^l


class TestCardinality:
    def test_toy(self, toy):
        assert cardinality(toy) == 768
        assert sum(1 for _ in enumerate_genomes(toy)) == 768

    def test_llama2_7b(self, llama):
        assert cardinality(llama) == 12_884_901_888
        assert abs(cardinality(llama) / 1.3e10 - 1) < 0.01

    def test_sample_random_uniform_support(self, toy):
        gen = substream(7, "samples")
        seen = {sample_random(toy, gen).to_text() for _ in range(5000)}
        assert len(seen) > 700  # nearly all 768 genomes reachable


class TestSizeModel:
    def test_param_formula_matches_breakdown(self, toy):
        d = toy.dims.hidden_dim
        v = toy.dims.vocab_size
        for g in (full_genome(toy), parse_genome("4:64,64,64,64,64,64,64,64", toy)):
            ph = phenotype(g, toy)
            expected = 2 * v * d + sum(4 * d * d + 3 * d * s + 2 * d for s in ph) + d
            assert param_count(ph, toy.dims) == expected

    def test_full_7b_params(self, llama):
        ph = phenotype(full_genome(llama), llama)
        assert param_count(ph, llama.dims) == 6_738_415_616

    def test_fp16_bytes_double_params(self, toy):
        ph = phenotype(full_genome(toy), toy)
        bd = model_bytes(ph, toy.dims, BytePolicy.FP16_ALL)
        assert bd.bytes == 2 * bd.total_params

    def test_int8_linear_bytes(self, toy):
        d = toy.dims.hidden_dim
        ph = phenotype(full_genome(toy), toy)
        fp16 = model_bytes(ph, toy.dims, BytePolicy.FP16_ALL)
        int8 = model_bytes(ph, toy.dims, BytePolicy.INT8_LINEAR)
        linear_params = sum(4 * d * d + 3 * d * s for s in ph)
        scale_floats = sum(4 * d + 2 * s + d for s in ph)
        expected = (
            linear_params
            + 2 * scale_floats
            + 2 * (fp16.total_params - linear_params)
        )
        assert int8.bytes == expected

    def test_display_gb_binary_one_decimal(self, llama):
        ph = phenotype(full_genome(llama), llama)
        bd = model_bytes(ph, llama.dims, BytePolicy.FP16_ALL)
        assert bd.display_gb == round(bd.bytes / 2**30, 1) == 12.6

    def test_monotone_in_genome(self, toy):
        small = phenotype(parse_genome("4:64,64,64,64,64,64,64,64", toy), toy)
        big = phenotype(full_genome(toy), toy)
        assert param_count(small, toy.dims) < param_count(big, toy.dims)


class TestValidation:
    def test_bad_layer_count(self, toy):
        with pytest.raises(InvalidGenomeError):
            phenotype(ArchGenome(5, (128,) * 8), toy)

    def test_bad_width(self, toy):
        with pytest.raises(InvalidGenomeError):
            phenotype(ArchGenome(4, (99,) * 8), toy)

    def test_wrong_gene_length(self, toy):
        with pytest.raises(InvalidGenomeError):
            phenotype(ArchGenome(4, (128,) * 7), toy)
