"""Compare the compiled and numpy convolution backends on the shapes the
two architectures actually use.

Usage: python benchmarks/bench_conv.py [--batch 64] [--repeats 20]
"""

import argparse
import time

import numpy as np

from cvnnfp import kernels

# (label, input shape, filter shape, stride)
CASES = [
    ("RVNN conv1", (1, 2, 100), (128, 1, 1, 25), (1, 3)),
    ("RVNN conv2", (128, 2, 26), (20, 128, 1, 20), (1, 3)),
    ("CVNN conv1 (per part)", (1, 1, 100), (64, 1, 1, 25), (1, 3)),
    ("CVNN conv2 (per part)", (64, 1, 26), (20, 64, 1, 20), (1, 3)),
]


def bench(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = ap.parse_args()

    backends = ["numpy"]
    if kernels.HAVE_COMPILED:
        backends.insert(0, "compiled")
    else:
        print("compiled backend not built; benchmarking numpy only")

    rng = np.random.default_rng(0)
    dt = np.dtype(args.dtype)
    print(f"batch={args.batch} dtype={dt.name} repeats={args.repeats}")
    print(f"{'case':24s} {'backend':9s} {'fwd ms':>8s} {'bwd_in ms':>10s} {'bwd_w ms':>9s}")
    for label, xshape, wshape, (sh, sw) in CASES:
        x = rng.standard_normal((args.batch,) + xshape).astype(dt)
        w = rng.standard_normal(wshape).astype(dt)
        ref = None
        for name in backends:
            fwd, bwd_in, bwd_w = kernels.get_backend(name)
            y = fwd(x, w, sh, sw)
            if ref is None:
                ref = y
            else:
                err = np.abs(y - ref).max()
                assert err < 1e-3, f"backend mismatch {err}"
            gy = np.ones_like(y)
            t_f = bench(lambda: fwd(x, w, sh, sw), args.repeats)
            t_bi = bench(lambda: bwd_in(gy, w, sh, sw, xshape[1], xshape[2]),
                         args.repeats)
            t_bw = bench(lambda: bwd_w(gy, x, sh, sw, wshape[2], wshape[3]),
                         args.repeats)
            print(f"{label:24s} {name:9s} {t_f:8.2f} {t_bi:10.2f} {t_bw:9.2f}")


if __name__ == "__main__":
    main()
