"""Post-training symmetric per-output-channel INT8 quantization.

Decoder linear weights are stored as int8 with one FP32 scale per output
channel; embeddings, norms, and the head stay full precision. Inference
dequantizes weights on first use (weight-only quantization), so quantized
logits match the FP32 path exactly whenever every weight is an exact
multiple of its channel scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .archspace import ArchPhenotype, BytePolicy, ModelDims, SizeBreakdown, model_bytes
from .elastic_net import (
    SupernetWeights,
    _merge_heads,
    _rmsnorm_fwd,
    _sigmoid,
    _split_heads,
)
from . import kernels

QMAX = 127

# per-layer decoder linears, in assembly order
LINEAR_FIELDS = ("wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, np.floor(x + 0.5), np.ceil(x - 0.5))


@dataclass
class QuantizedTensor:
    """Int8 weight matrix with one scale per output channel (column)."""

    values: np.ndarray
    scales: np.ndarray
    shape: tuple[int, int]
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    def dequantize(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.values.astype(np.float32) * self.scales[None, :]
        return self._dense


def quantize_linear(weight: np.ndarray) -> QuantizedTensor:
    """Symmetric per-column INT8: scale_c = max|w_c|/127, round half away from zero.

    All-zero columns get scale 1 and all-zero values.
    """
    w = np.asarray(weight)
    if w.ndim != 2:
        raise ValueError(f"expected a 2-d weight matrix, got shape {w.shape}")
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    absmax = np.abs(w).max(axis=0)
    scales = np.where(absmax > 0.0, absmax / QMAX, 1.0).astype(np.float32)
    q = _round_half_away(w / scales[None, :])
    q = np.clip(q, -QMAX, QMAX).astype(np.int8)
    return QuantizedTensor(values=q, scales=scales, shape=(int(w.shape[0]), int(w.shape[1])))


@dataclass
class QuantizedBlock:
    wq: QuantizedTensor
    wk: QuantizedTensor
    wv: QuantizedTensor
    wo: QuantizedTensor
    w_gate: QuantizedTensor
    w_up: QuantizedTensor
    w_down: QuantizedTensor
    attn_norm: np.ndarray
    mlp_norm: np.ndarray


@dataclass
class QuantizedSubnet:
    """INT8 decoder linears plus full-precision embeddings, norms, and head."""

    dims: ModelDims
    phenotype: ArchPhenotype
    token_embedding: np.ndarray
    position_embedding: np.ndarray
    blocks: list[QuantizedBlock]
    final_norm: np.ndarray
    head: np.ndarray


def quantize_subnet(subnet: SupernetWeights, pheno: ArchPhenotype) -> QuantizedSubnet:
    """Quantize every decoder linear of an extracted standalone subnet."""
    pheno = tuple(int(w) for w in pheno)
    if subnet.native_phenotype() != pheno:
        raise ValueError(
            f"subnet structure {subnet.native_phenotype()} does not match phenotype {pheno}"
        )
    blocks = []
    for blk in subnet.blocks:
        blocks.append(
            QuantizedBlock(
                wq=quantize_linear(blk.wq),
                wk=quantize_linear(blk.wk),
                wv=quantize_linear(blk.wv),
                wo=quantize_linear(blk.wo),
                w_gate=quantize_linear(blk.w_gate),
                w_up=quantize_linear(blk.w_up),
                w_down=quantize_linear(blk.w_down),
                attn_norm=blk.attn_norm.copy(),
                mlp_norm=blk.mlp_norm.copy(),
            )
        )
    return QuantizedSubnet(
        dims=subnet.dims,
        phenotype=pheno,
        token_embedding=subnet.token_embedding.copy(),
        position_embedding=subnet.position_embedding.copy(),
        blocks=blocks,
        final_norm=subnet.final_norm.copy(),
        head=subnet.head.copy(),
    )


def forward_quantized(qsubnet: QuantizedSubnet, tokens: np.ndarray) -> np.ndarray:
    """Logits [batch, seq, vocab]; linears run dequantize-then-multiply in FP32."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"tokens must be [batch, seq], got shape {tokens.shape}")
    dims = qsubnet.dims
    b, s = tokens.shape
    if s > qsubnet.position_embedding.shape[0]:
        raise ValueError(
            f"sequence length {s} exceeds supported {qsubnet.position_embedding.shape[0]}"
        )
    scale = 1.0 / np.sqrt(dims.head_dim)

    h = qsubnet.token_embedding[tokens] + qsubnet.position_embedding[:s]
    for blk in qsubnet.blocks:
        a, _, _ = _rmsnorm_fwd(h, blk.attn_norm)
        q = _split_heads(a @ blk.wq.dequantize(), dims.num_heads)
        k = _split_heads(a @ blk.wk.dequantize(), dims.num_heads)
        v = _split_heads(a @ blk.wv.dequantize(), dims.num_heads)
        attn, _ = kernels.causal_attention_fwd(q, k, v, scale)
        h1 = h + _merge_heads(attn) @ blk.wo.dequantize()

        m, _, _ = _rmsnorm_fwd(h1, blk.mlp_norm)
        gate = m @ blk.w_gate.dequantize()
        up = m @ blk.w_up.dequantize()
        h = h1 + (gate * _sigmoid(gate) * up) @ blk.w_down.dequantize()
    f, _, _ = _rmsnorm_fwd(h, qsubnet.final_norm)
    return f @ qsubnet.head


def quantized_bytes(pheno: ArchPhenotype, dims: ModelDims) -> SizeBreakdown:
    """Analytic INT8_LINEAR footprint for the phenotype."""
    return model_bytes(pheno, dims, BytePolicy.INT8_LINEAR)
