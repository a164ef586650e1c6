"""Architecture search space: genome encoding, sampling, and size arithmetic.

A genome selects a layer count and one MLP intermediate size per layer slot.
Genomes always carry `max_layers` intermediate-size genes; slots at or beyond
the layer count are genotype-only and do not affect the instantiated network
(the phenotype keeps the first `layer_count` slots).

All size accounting is exact integer arithmetic. Two byte policies exist:
``FP16_ALL`` (2 bytes per parameter) and ``INT8_LINEAR`` (1 byte per decoder
linear weight plus a 2-byte scale per output channel; embeddings, output head
and norms stay at 2 bytes per parameter).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from .rng import substream

MAX_COUNT = 2**63 - 1
_GIB = 2**30


class InvalidGenomeError(ValueError):
    """Genome is not a member of the search space."""


class InvalidEncodingError(ValueError):
    """Integer encoding contains an out-of-range index."""


class GenomeParseError(ValueError):
    """Genome text is malformed; `position` is the character offset of the failure."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class ModelDims:
    """Fixed dimensions of the transformer family being searched."""

    vocab_size: int
    hidden_dim: int
    num_heads: int
    max_layers: int
    tied_embeddings: bool = False

    def __post_init__(self):
        for name in ("vocab_size", "hidden_dim", "num_heads", "max_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_json_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "max_layers": self.max_layers,
            "tied_embeddings": self.tied_embeddings,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelDims":
        return cls(**doc)


@dataclass(frozen=True)
class SearchSpaceSpec:
    """Choice lists for the two searchable parameters plus the model dims."""

    layer_choices: tuple[int, ...]
    inter_choices: tuple[int, ...]
    dims: ModelDims

    def __post_init__(self):
        object.__setattr__(self, "layer_choices", tuple(self.layer_choices))
        object.__setattr__(self, "inter_choices", tuple(self.inter_choices))
        for name, choices in (("layer_choices", self.layer_choices), ("inter_choices", self.inter_choices)):
            if not choices:
                raise ValueError(f"{name} must be non-empty")
            if list(choices) != sorted(set(choices)):
                raise ValueError(f"{name} must be strictly ascending and unique")
            if any(c < 1 for c in choices):
                raise ValueError(f"{name} entries must be >= 1")
        if max(self.layer_choices) != self.dims.max_layers:
            raise ValueError("max(layer_choices) must equal dims.max_layers")

    def to_json_dict(self) -> dict:
        return {
            "dims": self.dims.to_json_dict(),
            "layer_choices": list(self.layer_choices),
            "inter_choices": list(self.inter_choices),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SearchSpaceSpec":
        return cls(
            layer_choices=tuple(doc["layer_choices"]),
            inter_choices=tuple(doc["inter_choices"]),
            dims=ModelDims.from_json_dict(doc["dims"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "SearchSpaceSpec":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class ArchGenome:
    """One point of the search space: a layer count plus per-slot widths."""

    layer_count: int
    inter_sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "inter_sizes", tuple(self.inter_sizes))

    def to_text(self) -> str:
        return f"{self.layer_count}:{','.join(str(s) for s in self.inter_sizes)}"


# The instantiated architecture: active per-layer intermediate sizes.
ArchPhenotype = tuple[int, ...]


class BytePolicy(Enum):
    FP16_ALL = "fp16"
    INT8_LINEAR = "int8"


@dataclass(frozen=True)
class SizeBreakdown:
    """Parameter and byte accounting for one phenotype.

    The per-layer fields are totals over all active layers; `total_params`
    is exactly the sum of the six parameter fields.
    """

    embed_params: int
    head_params: int
    per_layer_attn_params: int
    per_layer_mlp_params: int
    per_layer_norm_params: int
    final_norm_params: int
    total_params: int
    bytes: int
    display_gb: float


def toy_space() -> SearchSpaceSpec:
    """Desk-scale preset: 3 * 2^8 = 768 genomes."""
    return SearchSpaceSpec(
        layer_choices=(4, 6, 8),
        inter_choices=(64, 128),
        dims=ModelDims(vocab_size=256, hidden_dim=64, num_heads=4, max_layers=8),
    )


def llama2_7b_space() -> SearchSpaceSpec:
    """7B-dimension preset: 3 * 2^32 genomes."""
    return SearchSpaceSpec(
        layer_choices=(24, 28, 32),
        inter_choices=(5504, 11008),
        dims=ModelDims(vocab_size=32000, hidden_dim=4096, num_heads=32, max_layers=32),
    )


PRESETS = {"toy": toy_space, "llama2-7b": llama2_7b_space}


def validate_genome(genome: ArchGenome, space: SearchSpaceSpec) -> None:
    if genome.layer_count not in space.layer_choices:
        raise InvalidGenomeError(
            f"layer count {genome.layer_count} not in choices {list(space.layer_choices)}"
        )
    if len(genome.inter_sizes) != space.dims.max_layers:
        raise InvalidGenomeError(
            f"genome carries {len(genome.inter_sizes)} width genes, expected {space.dims.max_layers}"
        )
    for i, s in enumerate(genome.inter_sizes):
        if s not in space.inter_choices:
            raise InvalidGenomeError(
                f"slot {i}: width {s} not in choices {list(space.inter_choices)}"
            )


def cardinality(space: SearchSpaceSpec) -> int:
    """Number of genomes: |layer_choices| * |inter_choices| ** max_layers.

    Raises OverflowError when the count exceeds a 63-bit signed range; sizes
    beyond that are reported, never silently saturated.
    """
    n = len(space.layer_choices) * len(space.inter_choices) ** space.dims.max_layers
    if n > MAX_COUNT:
        raise OverflowError(f"search space cardinality {n} exceeds {MAX_COUNT}")
    return n


def sample_random(space: SearchSpaceSpec, rng: int | np.random.Generator) -> ArchGenome:
    """Uniform genome: each gene drawn independently from its choice list."""
    gen = substream(rng, "sample") if isinstance(rng, int) else rng
    layer = space.layer_choices[int(gen.integers(len(space.layer_choices)))]
    inters = tuple(
        space.inter_choices[int(i)]
        for i in gen.integers(len(space.inter_choices), size=space.dims.max_layers)
    )
    return ArchGenome(layer_count=layer, inter_sizes=inters)


def phenotype(genome: ArchGenome, space: SearchSpaceSpec) -> ArchPhenotype:
    """Active widths: the first `layer_count` slots of the genome."""
    validate_genome(genome, space)
    return genome.inter_sizes[: genome.layer_count]


def enumerate_genomes(space: SearchSpaceSpec) -> Iterator[ArchGenome]:
    """All genomes in deterministic (encoding-lexicographic) order.

    Only valid for spaces whose cardinality fits in memory-sane bounds;
    callers guard with `cardinality`.
    """
    n_inter = len(space.inter_choices)
    max_layers = space.dims.max_layers
    for layer in space.layer_choices:
        for code in range(n_inter**max_layers):
            sizes = []
            c = code
            for _ in range(max_layers):
                sizes.append(space.inter_choices[c % n_inter])
                c //= n_inter
            yield ArchGenome(layer_count=layer, inter_sizes=tuple(sizes))


def param_count(pheno: ArchPhenotype, dims: ModelDims) -> int:
    """Exact parameter count of the deployed network.

    Counts the token embedding, untied output head, per-layer attention
    projections (q/k/v/o), gated MLP (gate/up/down), two per-layer norm
    scales, and the final norm scale.
    """
    if any(s < 1 for s in pheno):
        raise ValueError("intermediate sizes must be positive")
    d = dims.hidden_dim
    v = dims.vocab_size
    embed_and_head = (1 if dims.tied_embeddings else 2) * v * d
    per_layer = sum(4 * d * d + 3 * d * s + 2 * d for s in pheno)
    return embed_and_head + per_layer + d


def model_bytes(pheno: ArchPhenotype, dims: ModelDims, policy: BytePolicy) -> SizeBreakdown:
    """Deployment byte size of a phenotype under the given precision policy."""
    d = dims.hidden_dim
    v = dims.vocab_size
    embed_params = v * d
    head_params = v * d if not dims.tied_embeddings else 0
    attn_params = len(pheno) * 4 * d * d
    mlp_params = sum(3 * d * s for s in pheno)
    norm_params = len(pheno) * 2 * d
    final_norm = d
    total = embed_params + head_params + attn_params + mlp_params + norm_params + final_norm

    if policy is BytePolicy.FP16_ALL:
        nbytes = 2 * total
    elif policy is BytePolicy.INT8_LINEAR:
        # Decoder linears at 1 byte/weight; per-output-channel FP16 scales:
        # q/k/v/o each have d output channels, gate/up have s, down has d.
        scale_channels = sum(4 * d + 2 * s + d for s in pheno)
        nbytes = (
            2 * (embed_params + head_params + norm_params + final_norm)
            + (attn_params + mlp_params)
            + 2 * scale_channels
        )
    else:  # pragma: no cover - exhaustive enum
        raise ValueError(f"unknown byte policy {policy!r}")

    return SizeBreakdown(
        embed_params=embed_params,
        head_params=head_params,
        per_layer_attn_params=attn_params,
        per_layer_mlp_params=mlp_params,
        per_layer_norm_params=norm_params,
        final_norm_params=final_norm,
        total_params=total,
        bytes=nbytes,
        display_gb=round(nbytes / _GIB, 1),
    )


def encode(genome: ArchGenome, space: SearchSpaceSpec) -> list[int]:
    """Integer index vector: [layer index, slot-0 width index, ...]."""
    validate_genome(genome, space)
    vec = [space.layer_choices.index(genome.layer_count)]
    vec.extend(space.inter_choices.index(s) for s in genome.inter_sizes)
    return vec


def decode(vec: Sequence[int], space: SearchSpaceSpec) -> ArchGenome:
    """Inverse of `encode`; rejects out-of-range indices."""
    if len(vec) != 1 + space.dims.max_layers:
        raise InvalidEncodingError(
            f"encoding has {len(vec)} entries, expected {1 + space.dims.max_layers}"
        )
    li = vec[0]
    if not 0 <= li < len(space.layer_choices):
        raise InvalidEncodingError(f"layer index {li} out of range")
    sizes = []
    for pos, idx in enumerate(vec[1:]):
        if not 0 <= idx < len(space.inter_choices):
            raise InvalidEncodingError(f"width index {idx} at slot {pos} out of range")
        sizes.append(space.inter_choices[idx])
    return ArchGenome(layer_count=space.layer_choices[li], inter_sizes=tuple(sizes))


def parse_genome(text: str, space: SearchSpaceSpec | None = None) -> ArchGenome:
    """Parse `<layer_count>:<s1>,<s2>,...` genome text.

    Raises GenomeParseError with the character position of the first failure;
    when `space` is given the genome is also validated against it.
    """
    colon = text.find(":")
    if colon < 0:
        raise GenomeParseError("missing ':' separator", len(text))
    head = text[:colon]
    if not head.isdigit():
        raise GenomeParseError(f"layer count {head!r} is not an integer", 0)
    sizes = []
    offset = colon + 1
    for field in text[colon + 1 :].split(","):
        if not field.strip().isdigit():
            raise GenomeParseError(f"width {field!r} is not an integer", offset)
        sizes.append(int(field))
        offset += len(field) + 1
    genome = ArchGenome(layer_count=int(head), inter_sizes=tuple(sizes))
    if space is not None:
        try:
            validate_genome(genome, space)
        except InvalidGenomeError as exc:
            raise GenomeParseError(str(exc), 0) from exc
    return genome


def full_genome(space: SearchSpaceSpec) -> ArchGenome:
    """The maximal genome: deepest network, widest MLP everywhere."""
    return ArchGenome(
        layer_count=max(space.layer_choices),
        inter_sizes=(max(space.inter_choices),) * space.dims.max_layers,
    )
