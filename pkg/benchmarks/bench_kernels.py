"""Benchmark the compiled gate kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--batch 150] [--hidden 100]
       [--seq-len 4] [--repeats 200]

Times the cell-level forward/backward kernels in isolation and one full
forward+backward pass of a 3x100 stacked network, for every available
backend.
"""

import argparse
import time

import numpy as np

from crossflow import flowdata as fd
from crossflow import netcore as nc
from crossflow.netcore import kernels


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_cells(impl, batch, hidden, repeats):
    rng = np.random.default_rng(0)
    z = rng.normal(size=(batch, 4 * hidden))
    c_prev = rng.normal(size=(batch, hidden))
    gates, c, _ = impl.cell_forward(z, c_prev)
    dh = rng.normal(size=(batch, hidden))
    dc = np.zeros_like(dh)
    fwd = time_call(lambda: impl.cell_forward(z, c_prev), repeats)
    bwd = time_call(lambda: impl.cell_backward(gates, c_prev, c, dh, dc), repeats)
    return fwd, bwd


def bench_network(impl, batch, hidden, seq_len, repeats):
    # monkey-select the backend for the duration of the measurement
    saved = (kernels.cell_forward, kernels.cell_backward)
    kernels.cell_forward, kernels.cell_backward = impl.cell_forward, impl.cell_backward
    try:
        rng = np.random.default_rng(1)
        spec = nc.NetSpec(20, 20, (hidden,) * 3, seq_len)
        params = nc.init_params(spec, seed=0)
        X = rng.normal(size=(batch, seq_len, 20))
        y = rng.normal(size=(batch, 20))
        return time_call(lambda: nc.loss_and_grad(params, X, y), max(1, repeats // 10))
    finally:
        kernels.cell_forward, kernels.cell_backward = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=150)
    ap.add_argument("--hidden", type=int, default=100)
    ap.add_argument("--seq-len", type=int, default=4)
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}; available: {sorted(backends)}")
    print(f"batch={args.batch} hidden={args.hidden} seq_len={args.seq_len} (best of {args.repeats})\n")

    results = {}
    for name, impl in sorted(backends.items()):
        fwd, bwd = bench_cells(impl, args.batch, args.hidden, args.repeats)
        net = bench_network(impl, args.batch, args.hidden, args.seq_len, args.repeats)
        results[name] = (fwd, bwd, net)
        print(f"{name:>8}: cell_forward {fwd * 1e6:8.1f} us   cell_backward {bwd * 1e6:8.1f} us   "
              f"loss_and_grad {net * 1e3:8.2f} ms")

    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        print("\nspeedup (python / cython):")
        for label, i in (("cell_forward", 0), ("cell_backward", 1), ("loss_and_grad", 2)):
            print(f"  {label}: {py[i] / cy[i]:.2f}x")


if __name__ == "__main__":
    main()
