"""Timing comparison of the numba and numpy kernel paths.

Run twice to see both backends:

    python benchmarks/bench_kernels.py                # numba (if installed)
    FUSEQA_NUMBA=0 python benchmarks/bench_kernels.py # pure numpy

Shapes mirror the training hot path (d=32, 4 heads, short sequences).
"""

import time

import numpy as np

from fuseqa import kernels


def bench(name, fn, *args, repeat=20000):
    fn(*args)  # warm (JIT compiles here on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    per_call = (time.perf_counter() - t0) / repeat
    print(f"{name:22s} {per_call * 1e6:9.2f} us/call")
    return per_call


def main():
    rng = np.random.default_rng(0)
    d, heads, rows, keys = 32, 4, 12, 16
    x = rng.normal(size=(rows, d))
    dy = rng.normal(size=(rows, d))
    qp = rng.normal(size=(rows, d))
    kp = rng.normal(size=(keys, d))
    vp = rng.normal(size=(keys, d))
    p = rng.normal(size=d * d)
    g = rng.normal(size=d * d)
    m = np.zeros(d * d)
    v = np.zeros(d * d)

    print(f"backend: {kernels.backend()}")
    bench("softmax_rows_fwd", kernels.softmax_rows_fwd, x)
    y = kernels.softmax_rows_fwd(x)
    bench("softmax_rows_bwd", kernels.softmax_rows_bwd, dy, y)
    bench("layernorm_fwd", kernels.layernorm_fwd, x, 1e-5)
    ln, inv = kernels.layernorm_fwd(x, 1e-5)
    bench("layernorm_bwd", kernels.layernorm_bwd, dy, ln, inv)
    bench("attn_core_fwd", kernels.attn_core_fwd, qp, kp, vp, heads)
    out, w = kernels.attn_core_fwd(qp, kp, vp, heads)
    bench("attn_core_bwd", kernels.attn_core_bwd, dy, qp, kp, vp, w)
    bench("adam_update", kernels.adam_update, p, g, m, v,
          0.001, 0.9, 0.999, 1e-8, 0.1, 0.001)


if __name__ == "__main__":
    main()
