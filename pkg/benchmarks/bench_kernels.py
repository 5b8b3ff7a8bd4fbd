"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 20]

Times each kernel on shapes typical of the nano model at 320x320 and checks
that both backends return identical results before timing.
"""
import argparse
import time

import numpy as np

from kfgdet.tensor import kernels

CASES = [
    # name, input shape (N, C, Hp, Wp), kernel, stride
    ("stem 3x3/2", (1, 16, 162, 162), 3, 2),
    ("mid 3x3/1", (1, 32, 42, 42), 3, 1),
    ("deep 3x3/1", (1, 128, 12, 12), 3, 1),
    ("dw 7x7/1", (1, 64, 26, 26), 7, 1),
]
POOLS = [("sppf 5x5/1", (1, 128, 14, 14), 5, 1), ("adown 3x3/2", (1, 64, 42, 42), 3, 2)]


def timeit(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def run(repeat):
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    rows = []
    for name, shape, k, s in CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        n, c, hp, wp = shape
        ho, wo = (hp - k) // s + 1, (wp - k) // s + 1
        g = rng.standard_normal((n, c * k * k, ho * wo)).astype(np.float32)
        ref = {}
        times = {}
        for b in backends:
            kernels.use_backend(b)
            ref[b] = (kernels.im2col(x, k, k, s, s, 1, 1), kernels.col2im(g, c, hp, wp, k, k, s, s, 1, 1))
            times[b] = (timeit(lambda: kernels.im2col(x, k, k, s, s, 1, 1), repeat),
                        timeit(lambda: kernels.col2im(g, c, hp, wp, k, k, s, s, 1, 1), repeat))
        if "cython" in ref:
            assert np.array_equal(ref["python"][0], ref["cython"][0])
            assert np.allclose(ref["python"][1], ref["cython"][1], rtol=1e-5, atol=1e-5)
        rows.append((f"im2col {name}", {b: t[0] for b, t in times.items()}))
        rows.append((f"col2im {name}", {b: t[1] for b, t in times.items()}))
    for name, shape, k, s in POOLS:
        x = rng.standard_normal(shape).astype(np.float32)
        times, outs = {}, {}
        for b in backends:
            kernels.use_backend(b)
            outs[b] = kernels.maxpool(x, k, s)
            out, idx = outs[b]
            gout = np.ones_like(out)
            times[b] = (timeit(lambda: kernels.maxpool(x, k, s), repeat),
                        timeit(lambda: kernels.maxpool_backward(gout, idx, shape[2], shape[3]), repeat))
        if "cython" in outs:
            assert np.array_equal(outs["python"][0], outs["cython"][0])
            assert np.array_equal(outs["python"][1], outs["cython"][1])
        rows.append((f"maxpool {name}", {b: t[0] for b, t in times.items()}))
        rows.append((f"maxpool_bwd {name}", {b: t[1] for b, t in times.items()}))
    kernels.use_backend(backends[-1])

    print(f"{'kernel':<28}" + "".join(f"{b + ' ms':>12}" for b in backends)
          + ("   speedup" if len(backends) > 1 else ""))
    for name, t in rows:
        line = f"{name:<28}" + "".join(f"{t[b]:>12.3f}" for b in backends)
        if len(backends) > 1:
            line += f"  {t['python'] / t['cython']:>7.2f}x"
        print(line)
    if len(backends) == 1:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    run(ap.parse_args().repeat)
