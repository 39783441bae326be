"""Benchmark the numba kernel path against the pure-numpy path.

Runs every dual-implementation kernel on shapes the training loop and the
image pipeline actually see, reports the median wall time per call and
the speedup, and cross-checks that both paths agree numerically first.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 9] [--csv out.csv]
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from viewfuse import kernels
from viewfuse.backend import HAS_NUMBA


def _timer(fn, args, repeats: int) -> float:
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best.append(time.perf_counter() - t0)
    return statistics.median(best)


def _cases(rng: np.random.Generator):
    """(name, kernel attr, args builder) for realistic call shapes."""
    act = rng.normal(0.0, 1.0, (2080, 64)).astype(np.float32)  # 8 cases x 260 tokens
    grad = rng.normal(0.0, 1.0, act.shape).astype(np.float32)
    gamma = rng.normal(1.0, 0.1, 64).astype(np.float32)
    beta = rng.normal(0.0, 0.1, 64).astype(np.float32)
    attn = rng.normal(0.0, 1.0, (8 * 4 * 260, 260)).astype(np.float32)  # attention rows
    ffdm = rng.integers(0, 4096, (2558, 3327)).astype(np.int64)  # raw 12-bit mammogram
    small = rng.integers(0, 256, (512, 666)).astype(np.float64)

    sm_y = None  # filled lazily from the forward pass

    yield "gelu_fwd", "gelu_fwd", (act,)
    yield "gelu_bwd", "gelu_bwd", (act, grad)
    yield "layer_norm_fwd", "layer_norm_fwd", (act, gamma, beta, 1e-5)
    mean = act.astype(np.float64).mean(axis=1)
    rstd = 1.0 / np.sqrt(act.astype(np.float64).var(axis=1) + 1e-5)
    yield "layer_norm_bwd", "layer_norm_bwd", (act, grad, gamma, mean, rstd)
    yield "softmax_fwd", "softmax_fwd", (attn,)
    sm_y = kernels.softmax_fwd(attn)
    yield "softmax_bwd", "softmax_bwd", (sm_y, np.ones_like(sm_y))
    yield "avg_pool5", "avg_pool5", (ffdm,)
    yield "bilinear_resize", "bilinear_resize", (small, 224, 224)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=9)
    ap.add_argument("--csv", default=None, help="also write results as CSV")
    args = ap.parse_args(argv)

    if not HAS_NUMBA:
        print("numba is not importable; nothing to compare", file=sys.stderr)
        return 1

    rng = np.random.default_rng(7)
    rows = []
    print(f"{'kernel':<18} {'numpy':>10} {'numba':>10} {'speedup':>8}   agreement")
    for name, attr, call_args in _cases(rng):
        kernels.set_backend("numpy")
        ref = kernels.__dict__[attr](*call_args)
        t_np = _timer(kernels.__dict__[attr], call_args, args.repeats)

        kernels.set_backend("numba")
        kernels.__dict__[attr](*call_args)  # JIT warmup, excluded from timing
        got = kernels.__dict__[attr](*call_args)
        t_nb = _timer(kernels.__dict__[attr], call_args, args.repeats)

        ref0 = ref[0] if isinstance(ref, tuple) else ref
        got0 = got[0] if isinstance(got, tuple) else got
        if np.issubdtype(ref0.dtype, np.integer):
            agree = "bitwise" if np.array_equal(ref0, got0) else "MISMATCH"
        else:
            err = float(np.max(np.abs(ref0.astype(np.float64) - got0.astype(np.float64))))
            agree = f"max abs diff {err:.2e}"
            if err > 1e-5:
                agree = "MISMATCH " + agree
        print(f"{name:<18} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms {t_np / t_nb:>7.2f}x   {agree}")
        rows.append([name, t_np, t_nb, t_np / t_nb, agree])

    kernels.set_backend("numpy")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("kernel,numpy_s,numba_s,speedup,agreement\n")
            for r in rows:
                fh.write(",".join(str(v) for v in r) + "\n")
        print(f"wrote {args.csv}")
    if any("MISMATCH" in r[-1] for r in rows):
        print("backend disagreement detected", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
