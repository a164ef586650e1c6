"""Attention kernel backends: numerical agreement and mask correctness."""

import numpy as np
import pytest

from elastic_nas.kernels import BACKEND, causal_attention_fwd, get_backend
from elastic_nas.rng import substream


def _qkv(seed, b=2, h=4, s=16, d=8, dtype=np.float32):
    gen = substream(seed, "kernel-test")
    q = gen.standard_normal((b, h, s, d)).astype(dtype)
    k = gen.standard_normal((b, h, s, d)).astype(dtype)
    v = gen.standard_normal((b, h, s, d)).astype(dtype)
    return q, k, v


@pytest.fixture(scope="module")
def backends():
    pair = {"numpy": get_backend("numpy")}
    try:
        pair["native"] = get_backend("native")
    except Exception:
        pass
    return pair


def test_default_backend_reports_name():
    assert BACKEND in ("native", "numpy")


def test_mask_exact_zeros_and_row_sums(backends):
    q, k, v = _qkv(0)
    for impl in backends.values():
        out, probs = impl.causal_attention_fwd(q, k, v, 1.0 / np.sqrt(8))
        assert out.shape == q.shape and probs.shape == (2, 4, 16, 16)
        upper = np.triu_indices(16, k=1)
        assert np.all(probs[:, :, upper[0], upper[1]] == 0.0)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-5)


def test_first_position_attends_only_itself(backends):
    q, k, v = _qkv(1)
    for impl in backends.values():
        out, probs = impl.causal_attention_fwd(q, k, v, 0.5)
        assert np.allclose(probs[:, :, 0, 0], 1.0, atol=1e-6)
        np.testing.assert_allclose(out[:, :, 0, :], v[:, :, 0, :], atol=1e-5)


def test_backends_agree_forward(backends):
    if len(backends) < 2:
        pytest.skip("compiled backend unavailable")
    q, k, v = _qkv(2, b=4, h=4, s=64, d=16)
    scale = 1.0 / 4.0
    out_n, probs_n = backends["numpy"].causal_attention_fwd(q, k, v, scale)
    out_c, probs_c = backends["native"].causal_attention_fwd(q, k, v, scale)
    assert float(np.abs(out_n - out_c).max()) <= 2e-6
    assert float(np.abs(probs_n - probs_c).max()) <= 2e-6


def test_backends_agree_backward(backends):
    if len(backends) < 2:
        pytest.skip("compiled backend unavailable")
    q, k, v = _qkv(3, b=4, h=4, s=64, d=16)
    scale = 1.0 / 4.0
    gen = substream(4, "dout")
    _, probs = backends["numpy"].causal_attention_fwd(q, k, v, scale)
    dout = gen.standard_normal(q.shape).astype(np.float32)
    grads_n = backends["numpy"].causal_attention_bwd(q, k, v, probs, dout, scale)
    grads_c = backends["native"].causal_attention_bwd(q, k, v, probs, dout, scale)
    for a, b in zip(grads_n, grads_c):
        assert float(np.abs(a - b).max()) <= 5e-6


def test_backward_matches_finite_differences(backends):
    # tiny case so the quadratic-cost FD sweep stays fast
    q, k, v = _qkv(5, b=1, h=1, s=5, d=3, dtype=np.float64)
    scale = 0.7
    impl = backends["numpy"]

    def f(q_, k_, v_):
        out, _ = impl.causal_attention_fwd(q_, k_, v_, scale)
        return out.sum()

    _, probs = impl.causal_attention_fwd(q, k, v, scale)
    dout = np.ones_like(q)
    dq, dk, dv = impl.causal_attention_bwd(q, k, v, probs, dout, scale)
    eps = 1e-6
    for name, arr, grad in (("q", q, dq), ("k", k, dk), ("v", v, dv)):
        for flat in range(arr.size):
            idx = np.unravel_index(flat, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + eps
            up = f(q, k, v)
            arr[idx] = orig - eps
            down = f(q, k, v)
            arr[idx] = orig
            fd = (up - down) / (2 * eps)
            assert abs(fd - grad[idx]) <= 1e-5 * max(1.0, abs(fd)), (name, idx)


def test_bitwise_determinism(backends):
    q, k, v = _qkv(6)
    for impl in backends.values():
        out1, probs1 = impl.causal_attention_fwd(q, k, v, 0.3)
        out2, probs2 = impl.causal_attention_fwd(q, k, v, 0.3)
        assert np.array_equal(out1, out2) and np.array_equal(probs1, probs2)


def test_env_override_rejects_unknown(monkeypatch):
    import importlib
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-c", "import elastic_nas.kernels"],
        env={"ELASTIC_NAS_KERNELS": "gpu", "PATH": "/usr/bin:/bin"},
        capture_output=True,
        text=True,
    )
    assert proc.returncode != 0 and "not recognized" in proc.stderr
