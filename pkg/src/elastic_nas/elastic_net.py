"""Elastic decoder-only transformer supernet with manual forward/backward.

The supernet holds the maximal architecture; any sub-network is obtained by
running only the first `layer_count` blocks and slicing each block's MLP to
its first `s` columns (gate/up) and rows (down). Slices are materialized as
contiguous buffers before every matmul, so a sliced forward and a forward on
an extracted standalone subnet execute identical arithmetic and produce
bitwise-equal logits.

Training is plain FP32 with a hand-rolled Adam. Alternating-step training
interleaves the full supernet with freshly sampled random sub-networks; on
sub-network steps only the sliced weight regions (and their optimizer state)
are touched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import kernels
from .archspace import ArchPhenotype, ModelDims, SearchSpaceSpec, full_genome, phenotype, sample_random
from .rng import substream

RMS_EPS = 1e-5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100


class NonFiniteError(FloatingPointError):
    """NaN or Inf appeared in weights or loss."""


class DivergenceError(RuntimeError):
    """Training loss stayed above the divergence threshold for too long."""


@dataclass
class BlockWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    attn_norm: np.ndarray
    mlp_norm: np.ndarray
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray

    @property
    def inter_size(self) -> int:
        return self.w_gate.shape[1]


@dataclass
class SupernetWeights:
    dims: ModelDims
    max_seq: int
    token_embedding: np.ndarray
    position_embedding: np.ndarray
    blocks: list[BlockWeights]
    final_norm: np.ndarray
    head: np.ndarray

    @property
    def dtype(self) -> np.dtype:
        return self.token_embedding.dtype

    def native_phenotype(self) -> ArchPhenotype:
        """The maximal phenotype these weights can run."""
        return tuple(b.inter_size for b in self.blocks)


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int
    seq_len: int
    learning_rate: float
    seed: int
    alternation: str = "SUPERNET_FIRST"

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("steps must be >= 2 so both alternation branches run")
        if self.alternation != "SUPERNET_FIRST":
            raise ValueError(f"unsupported alternation schedule {self.alternation!r}")
        if self.batch_size < 1 or self.seq_len < 2:
            raise ValueError("batch_size >= 1 and seq_len >= 2 required")


@dataclass(frozen=True)
class TraceEntry:
    step: int
    tag: str  # "full" or "random"
    loss: float
    phenotype: ArchPhenotype


def init_supernet(
    dims: ModelDims,
    inter_max: int,
    seed: int,
    max_seq: int = 64,
    dtype=np.float32,
) -> SupernetWeights:
    """Random supernet: projections and embeddings at std 1/sqrt(d), norms at 1."""
    gen = substream(seed, "init")
    d = dims.hidden_dim
    std = 1.0 / np.sqrt(d)

    def mat(*shape):
        return (gen.standard_normal(shape) * std).astype(dtype)

    blocks = []
    for _ in range(dims.max_layers):
        blocks.append(
            BlockWeights(
                wq=mat(d, d),
                wk=mat(d, d),
                wv=mat(d, d),
                wo=mat(d, d),
                attn_norm=np.ones(d, dtype=dtype),
                mlp_norm=np.ones(d, dtype=dtype),
                w_gate=mat(d, inter_max),
                w_up=mat(d, inter_max),
                w_down=mat(inter_max, d),
            )
        )
    return SupernetWeights(
        dims=dims,
        max_seq=max_seq,
        token_embedding=mat(dims.vocab_size, d),
        position_embedding=mat(max_seq, d),
        blocks=blocks,
        final_norm=np.ones(d, dtype=dtype),
        head=mat(d, dims.vocab_size),
    )


def census(weights: SupernetWeights) -> int:
    """Deployment parameter count over all tensors except the position table.

    The size model carries no positional term (budgets follow the
    rotary-position family it was validated against), so the learned position
    table used by the toy trainer stays out of the census; this keeps
    extracted subnets consistent with `archspace.param_count`.
    """
    n = weights.token_embedding.size + weights.head.size + weights.final_norm.size
    for b in weights.blocks:
        n += sum(
            t.size
            for t in (b.wq, b.wk, b.wv, b.wo, b.attn_norm, b.mlp_norm, b.w_gate, b.w_up, b.w_down)
        )
    return n


def check_finite(weights: SupernetWeights) -> None:
    for name, tensor in parameter_tensors(weights).items():
        if not np.isfinite(tensor).all():
            raise NonFiniteError(f"non-finite values in weight tensor {name}")


def parameter_tensors(weights: SupernetWeights) -> dict[str, np.ndarray]:
    """All weight tensors in a fixed, stable order."""
    out = {
        "token_embedding": weights.token_embedding,
        "position_embedding": weights.position_embedding,
    }
    for i, b in enumerate(weights.blocks):
        for fname in ("wq", "wk", "wv", "wo", "attn_norm", "mlp_norm", "w_gate", "w_up", "w_down"):
            out[f"blocks.{i}.{fname}"] = getattr(b, fname)
    out["final_norm"] = weights.final_norm
    out["head"] = weights.head
    return out


def active_slices(
    weights: SupernetWeights, pheno: ArchPhenotype, seq_len: int
) -> dict[str, tuple[slice, ...]]:
    """Weight regions a training step on `pheno` is allowed to touch."""
    full = (slice(None),)
    out = {
        "token_embedding": full,
        "position_embedding": (slice(0, seq_len),),
        "final_norm": full,
        "head": full,
    }
    for i, s in enumerate(pheno):
        p = f"blocks.{i}."
        for fname in ("wq", "wk", "wv", "wo", "attn_norm", "mlp_norm"):
            out[p + fname] = full
        out[p + "w_gate"] = (slice(None), slice(0, s))
        out[p + "w_up"] = (slice(None), slice(0, s))
        out[p + "w_down"] = (slice(0, s), slice(None))
    return out


def _validate_forward_args(weights: SupernetWeights, pheno: ArchPhenotype, tokens: np.ndarray):
    if tokens.ndim != 2:
        raise ValueError(f"token batch must be 2-D, got shape {tokens.shape}")
    if tokens.shape[1] > weights.max_seq:
        raise ValueError(f"sequence length {tokens.shape[1]} exceeds max_seq {weights.max_seq}")
    if tokens.min(initial=0) < 0 or tokens.max(initial=0) >= weights.dims.vocab_size:
        raise ValueError("token id out of vocabulary range")
    if len(pheno) > len(weights.blocks):
        raise ValueError(f"phenotype has {len(pheno)} layers, weights hold {len(weights.blocks)}")
    for i, s in enumerate(pheno):
        if not 1 <= s <= weights.blocks[i].inter_size:
            raise ValueError(f"layer {i}: width {s} exceeds block width {weights.blocks[i].inter_size}")


def _rmsnorm_fwd(x: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = 1.0 / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + np.asarray(RMS_EPS, x.dtype))
    xhat = x * r
    return xhat * g, xhat, r


def _rmsnorm_bwd(dy, g, xhat, r):
    dg = np.einsum("bsd,bsd->d", dy, xhat)
    dxhat = dy * g
    dx = r * (dxhat - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    return dx, dg


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    b, s, d = x.shape
    return np.ascontiguousarray(x.reshape(b, s, num_heads, d // num_heads).transpose(0, 2, 1, 3))


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, s, hd = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, s, h * hd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow saturates to inf and 1/(1+inf) is exactly the 0 limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _forward_cache(weights: SupernetWeights, pheno: ArchPhenotype, tokens: np.ndarray):
    _validate_forward_args(weights, pheno, tokens)
    dims = weights.dims
    b, s = tokens.shape
    scale = 1.0 / np.sqrt(dims.head_dim)

    h = weights.token_embedding[tokens] + weights.position_embedding[:s]
    cache = {"tokens": tokens, "h0": h, "layers": []}
    for i, width in enumerate(pheno):
        blk = weights.blocks[i]
        a, xhat_a, r_a = _rmsnorm_fwd(h, blk.attn_norm)
        q = _split_heads(a @ blk.wq, dims.num_heads)
        k = _split_heads(a @ blk.wk, dims.num_heads)
        v = _split_heads(a @ blk.wv, dims.num_heads)
        attn, probs = kernels.causal_attention_fwd(q, k, v, scale)
        merged = _merge_heads(attn)
        h1 = h + merged @ blk.wo

        m, xhat_m, r_m = _rmsnorm_fwd(h1, blk.mlp_norm)
        wg = np.ascontiguousarray(blk.w_gate[:, :width])
        wu = np.ascontiguousarray(blk.w_up[:, :width])
        wd = np.ascontiguousarray(blk.w_down[:width, :])
        gate = m @ wg
        up = m @ wu
        sig = _sigmoid(gate)
        act = gate * sig * up
        h2 = h1 + act @ wd

        cache["layers"].append(
            dict(
                h=h, a=a, xhat_a=xhat_a, r_a=r_a, q=q, k=k, v=v, probs=probs,
                merged=merged, h1=h1, m=m, xhat_m=xhat_m, r_m=r_m,
                gate=gate, up=up, sig=sig, act=act, wg=wg, wu=wu, wd=wd, width=width,
            )
        )
        h = h2
    f, xhat_f, r_f = _rmsnorm_fwd(h, weights.final_norm)
    logits = f @ weights.head
    cache.update(h_final=h, f=f, xhat_f=xhat_f, r_f=r_f, scale=scale)
    return logits, cache


def forward(weights: SupernetWeights, pheno: ArchPhenotype, tokens: np.ndarray) -> np.ndarray:
    """Logits [batch, seq, vocab] for the sub-network selected by `pheno`."""
    logits, _ = _forward_cache(weights, pheno, np.asarray(tokens))
    return logits


def _ce_from_logits(logits: np.ndarray, tokens: np.ndarray):
    z = logits[:, :-1, :]
    y = tokens[:, 1:]
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=-1, keepdims=True)
    logp = (z - zmax) - np.log(sez)
    picked = np.take_along_axis(logp, y[..., None], axis=-1)[..., 0]
    loss = -float(picked.mean())
    probs = ez / sez
    return loss, probs, y


def loss(weights: SupernetWeights, pheno: ArchPhenotype, tokens: np.ndarray) -> float:
    """Mean next-token cross-entropy over all predicted positions."""
    tokens = np.asarray(tokens)
    if tokens.shape[1] < 2:
        raise ValueError("need at least 2 tokens per row for next-token loss")
    logits = forward(weights, pheno, tokens)
    value, _, _ = _ce_from_logits(logits, tokens)
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite loss {value} (phenotype {pheno})")
    return value


def loss_and_grads(
    weights: SupernetWeights, pheno: ArchPhenotype, tokens: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus gradients for every active weight region (keys as in active_slices)."""
    tokens = np.asarray(tokens)
    if tokens.shape[1] < 2:
        raise ValueError("need at least 2 tokens per row for next-token loss")
    logits, cache = _forward_cache(weights, pheno, tokens)
    value, probs, y = _ce_from_logits(logits, tokens)
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite loss {value} (phenotype {pheno})")

    b, s = tokens.shape
    dims = weights.dims
    n_pred = b * (s - 1)
    dz = probs.copy()
    np.subtract.at(dz, (np.arange(b)[:, None], np.arange(s - 1)[None, :], y), 1.0)
    dz /= n_pred
    dlogits = np.zeros_like(logits)
    dlogits[:, :-1, :] = dz

    grads: dict[str, np.ndarray] = {}
    f2 = cache["f"].reshape(-1, dims.hidden_dim)
    dl2 = dlogits.reshape(-1, dims.vocab_size)
    grads["head"] = f2.T @ dl2
    df = dlogits @ weights.head.T
    dh, grads["final_norm"] = _rmsnorm_bwd(df, weights.final_norm, cache["xhat_f"], cache["r_f"])

    scale = cache["scale"]
    for i in range(len(pheno) - 1, -1, -1):
        blk = weights.blocks[i]
        c = cache["layers"][i]
        p = f"blocks.{i}."
        # h2 = h1 + act @ wd
        dh1 = dh
        dmo2 = dh.reshape(-1, dims.hidden_dim)
        act2 = c["act"].reshape(-1, c["width"])
        grads[p + "w_down"] = act2.T @ dmo2
        dact = dh @ c["wd"].T
        # act = silu(gate) * up
        silu = c["gate"] * c["sig"]
        dup = dact * silu
        dsilu = dact * c["up"]
        dgate = dsilu * (c["sig"] * (1.0 + c["gate"] * (1.0 - c["sig"])))
        m2 = c["m"].reshape(-1, dims.hidden_dim)
        grads[p + "w_gate"] = m2.T @ dgate.reshape(-1, c["width"])
        grads[p + "w_up"] = m2.T @ dup.reshape(-1, c["width"])
        dm = dgate @ c["wg"].T + dup @ c["wu"].T
        dx_m, grads[p + "mlp_norm"] = _rmsnorm_bwd(dm, blk.mlp_norm, c["xhat_m"], c["r_m"])
        dh1 = dh1 + dx_m
        # h1 = h + merged @ wo
        dh_prev = dh1
        merged2 = c["merged"].reshape(-1, dims.hidden_dim)
        grads[p + "wo"] = merged2.T @ dh1.reshape(-1, dims.hidden_dim)
        dmerged = dh1 @ blk.wo.T
        dattn = _split_heads(dmerged, dims.num_heads)
        dq, dk, dv = kernels.causal_attention_bwd(c["q"], c["k"], c["v"], c["probs"], dattn, scale)
        dq = _merge_heads(dq)
        dk = _merge_heads(dk)
        dv = _merge_heads(dv)
        a2 = c["a"].reshape(-1, dims.hidden_dim)
        grads[p + "wq"] = a2.T @ dq.reshape(-1, dims.hidden_dim)
        grads[p + "wk"] = a2.T @ dk.reshape(-1, dims.hidden_dim)
        grads[p + "wv"] = a2.T @ dv.reshape(-1, dims.hidden_dim)
        da = dq @ blk.wq.T + dk @ blk.wk.T + dv @ blk.wv.T
        dx_a, grads[p + "attn_norm"] = _rmsnorm_bwd(da, blk.attn_norm, c["xhat_a"], c["r_a"])
        dh = dh_prev + dx_a

    dtok = np.zeros_like(weights.token_embedding)
    np.add.at(dtok, tokens, dh)
    grads["token_embedding"] = dtok
    grads["position_embedding"] = dh.sum(axis=0)
    return value, grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, weights: SupernetWeights) -> "AdamState":
        tensors = parameter_tensors(weights)
        return cls(
            m={k: np.zeros_like(a) for k, a in tensors.items()},
            v={k: np.zeros_like(a) for k, a in tensors.items()},
        )


def adam_step(
    weights: SupernetWeights,
    grads: dict[str, np.ndarray],
    slices: dict[str, tuple[slice, ...]],
    state: AdamState,
    lr: float,
) -> None:
    """In-place Adam update restricted to the active slices.

    Bias correction uses the global step count; a weight region skipped by a
    narrow sub-network step keeps its moments untouched.
    """
    state.t += 1
    b1t = 1.0 - ADAM_BETA1**state.t
    b2t = 1.0 - ADAM_BETA2**state.t
    tensors = parameter_tensors(weights)
    for name, g in grads.items():
        sl = slices[name]
        p = tensors[name][sl]
        m = state.m[name][sl]
        v = state.v[name][sl]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        p -= lr * (m / b1t) / (np.sqrt(v / b2t) + ADAM_EPS)


def sample_batch_starts(corpus: np.ndarray, bos_token: int, seq_len: int) -> np.ndarray:
    """Offsets where a record begins and a full window fits."""
    starts = np.flatnonzero(corpus == bos_token)
    starts = starts[starts + seq_len <= corpus.size]
    if starts.size == 0:
        raise ValueError("corpus too short: no record-aligned window fits seq_len")
    return starts


def train_instatune(
    weights: SupernetWeights,
    space: SearchSpaceSpec,
    corpus: np.ndarray,
    config: TrainConfig,
    bos_token: int = 0,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[SupernetWeights, list[TraceEntry]]:
    """Alternating-step training: even steps full supernet, odd steps a random subnet.

    Windows are record-aligned (each starts at a BOS token). Aborts with
    DivergenceError when the loss exceeds 10x the initial loss for 100
    consecutive steps; raises NonFiniteError on NaN/Inf loss.
    """
    corpus = np.asarray(corpus)
    if corpus.size < config.batch_size * config.seq_len:
        raise ValueError("corpus shorter than batch_size * seq_len")
    check_finite(weights)

    starts = sample_batch_starts(corpus, bos_token, config.seq_len)
    batch_gen = substream(config.seed, "batches")
    subnet_gen = substream(config.seed, "subnet")
    state = AdamState.init(weights)
    full_pheno = phenotype(full_genome(space), space)
    offsets = np.arange(config.seq_len)

    trace: list[TraceEntry] = []
    initial = None
    over = 0
    for step in range(config.steps):
        if step % 2 == 0:
            pheno, tag = full_pheno, "full"
        else:
            pheno, tag = phenotype(sample_random(space, subnet_gen), space), "random"
        picks = starts[batch_gen.integers(starts.size, size=config.batch_size)]
        batch = corpus[picks[:, None] + offsets]
        value, grads = loss_and_grads(weights, pheno, batch)
        adam_step(weights, grads, active_slices(weights, pheno, config.seq_len), state, config.learning_rate)
        trace.append(TraceEntry(step=step, tag=tag, loss=value, phenotype=pheno))
        if progress is not None:
            progress(step, value)

        if initial is None:
            initial = value
        if value > DIVERGENCE_FACTOR * initial:
            over += 1
            if over >= DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"loss {value:.4g} stayed above {DIVERGENCE_FACTOR:g}x initial "
                    f"({initial:.4g}) for {DIVERGENCE_PATIENCE} consecutive steps "
                    f"(aborted at step {step})"
                )
        else:
            over = 0
    return weights, trace


def subnet_extract(weights: SupernetWeights, pheno: ArchPhenotype) -> SupernetWeights:
    """Standalone copy holding exactly the weights the phenotype uses."""
    if len(pheno) < 1 or len(pheno) > len(weights.blocks):
        raise ValueError(f"phenotype depth {len(pheno)} outside 1..{len(weights.blocks)}")
    for i, s in enumerate(pheno):
        if not 1 <= s <= weights.blocks[i].inter_size:
            raise ValueError(f"layer {i}: width {s} exceeds block width {weights.blocks[i].inter_size}")
    blocks = []
    for i, s in enumerate(pheno):
        b = weights.blocks[i]
        blocks.append(
            BlockWeights(
                wq=b.wq.copy(),
                wk=b.wk.copy(),
                wv=b.wv.copy(),
                wo=b.wo.copy(),
                attn_norm=b.attn_norm.copy(),
                mlp_norm=b.mlp_norm.copy(),
                w_gate=np.ascontiguousarray(b.w_gate[:, :s]).copy(),
                w_up=np.ascontiguousarray(b.w_up[:, :s]).copy(),
                w_down=b.w_down[:s, :].copy(),
            )
        )
    return SupernetWeights(
        dims=replace(weights.dims, max_layers=len(pheno)),
        max_seq=weights.max_seq,
        token_embedding=weights.token_embedding.copy(),
        position_embedding=weights.position_embedding.copy(),
        blocks=blocks,
        final_norm=weights.final_norm.copy(),
        head=weights.head.copy(),
    )
