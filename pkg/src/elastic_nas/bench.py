"""Benchmark the compiled attention kernels against the numpy reference.

Run with ``python3 -m elastic_nas.bench``. Times the attention forward and
backward kernels on both backends plus one full training step end to end,
and reports the speedup alongside the max numerical deviation.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from .archspace import toy_space
from .elastic_net import (
    AdamState,
    active_slices,
    adam_step,
    init_supernet,
    loss_and_grads,
)
from .kernels import get_backend
from .rng import substream


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(batch: int, heads: int, seq: int, head_dim: int, repeats: int) -> list[str]:
    rng = substream(0, "bench")
    q = rng.standard_normal((batch, heads, seq, head_dim), dtype=np.float32)
    k = rng.standard_normal((batch, heads, seq, head_dim), dtype=np.float32)
    v = rng.standard_normal((batch, heads, seq, head_dim), dtype=np.float32)
    scale = 1.0 / np.sqrt(head_dim)
    lines = []
    backends = {}
    for name in ("numpy", "native"):
        try:
            backends[name] = get_backend(name)
        except Exception:
            lines.append(f"{name:>6}: unavailable")
    results = {}
    for name, impl in backends.items():
        out, probs = impl.causal_attention_fwd(q, k, v, scale)
        dout = np.ones_like(out)
        grads = impl.causal_attention_bwd(q, k, v, probs, dout, scale)
        t_fwd = _time(lambda: impl.causal_attention_fwd(q, k, v, scale), repeats)
        t_bwd = _time(
            lambda: impl.causal_attention_bwd(q, k, v, probs, dout, scale), repeats
        )
        results[name] = (t_fwd, t_bwd, out, grads)
        lines.append(f"{name:>6}: fwd {t_fwd * 1e3:8.3f} ms   bwd {t_bwd * 1e3:8.3f} ms")
    if len(results) == 2:
        nf, nb, n_out, n_grads = results["numpy"]
        cf, cb, c_out, c_grads = results["native"]
        dev = max(
            float(np.abs(n_out - c_out).max()),
            max(float(np.abs(a - b).max()) for a, b in zip(n_grads, c_grads)),
        )
        lines.append(
            f"speedup: fwd {nf / cf:5.2f}x   bwd {nb / cb:5.2f}x   max|dev| {dev:.3g}"
        )
    return lines


def bench_train_step(repeats: int) -> list[str]:
    space = toy_space()
    lines = []
    times = {}
    for name in ("numpy", "native"):
        try:
            impl = get_backend(name)
        except Exception:
            lines.append(f"{name:>6}: unavailable")
            continue
        from . import elastic_net

        saved = elastic_net.kernels
        elastic_net.kernels = impl
        try:
            weights = init_supernet(space.dims, max(space.inter_choices), seed=0)
            state = AdamState.init(weights)
            pheno = weights.native_phenotype()
            tokens = substream(1, "tok").integers(
                space.dims.vocab_size, size=(32, 64), dtype=np.int64
            )
            slices = active_slices(weights, pheno, 64)

            def step():
                _, grads = loss_and_grads(weights, pheno, tokens)
                adam_step(weights, grads, slices, state, 3e-4)

            step()
            times[name] = _time(step, repeats)
            lines.append(f"{name:>6}: train step {times[name] * 1e3:8.2f} ms")
        finally:
            elastic_net.kernels = saved
    if len(times) == 2:
        lines.append(f"speedup: {times['numpy'] / times['native']:5.2f}x")
    return lines


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seq", type=int, default=64)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--heads", type=int, default=4)
    parser.add_argument("--head-dim", type=int, default=16)
    args = parser.parse_args(argv)

    print(f"attention kernels ({args.batch}x{args.heads}x{args.seq}x{args.head_dim}):")
    for line in bench_kernels(args.batch, args.heads, args.seq, args.head_dim, args.repeats):
        print("  " + line)
    print("full toy training step (batch 32, seq 64):")
    for line in bench_train_step(args.repeats):
        print("  " + line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
