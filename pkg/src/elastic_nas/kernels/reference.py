"""Pure-numpy causal attention kernels.

Used as the portability fallback and as the correctness reference for the
compiled backend. Shapes are (batch, heads, seq, head_dim) throughout.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def causal_attention_fwd(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float
) -> tuple[np.ndarray, np.ndarray]:
    """Masked softmax attention; returns (output, attention probabilities).

    Probabilities are returned so the backward pass can avoid recomputing
    the softmax; above-diagonal entries are exactly zero.
    """
    b, h, s, d = q.shape
    scores = scale * np.einsum("bhid,bhjd->bhij", q, k)
    mask = np.triu(np.ones((s, s), dtype=bool), k=1)
    scores = np.where(mask, -np.inf, scores)
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    out = np.einsum("bhij,bhjd->bhid", probs, v)
    return out, probs


def causal_attention_bwd(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    probs: np.ndarray,
    dout: np.ndarray,
    scale: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. q, k, v given saved probabilities and output grad."""
    dv = np.einsum("bhij,bhid->bhjd", probs, dout)
    dprobs = np.einsum("bhid,bhjd->bhij", dout, v)
    # Softmax Jacobian: dS = P * (dP - rowsum(P * dP)); masked entries have
    # P == 0 so they contribute nothing.
    row = np.einsum("bhij,bhij->bhi", probs, dprobs)
    dscores = probs * (dprobs - row[..., None])
    dq = scale * np.einsum("bhij,bhjd->bhid", dscores, k)
    dk = scale * np.einsum("bhij,bhid->bhjd", dscores, q)
    return dq, dk, dv
