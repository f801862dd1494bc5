"""Time the numba and numpy variants of each hot kernel on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from refocus import kernels
from refocus._accel import HAVE_NUMBA


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    padded = rng.random((64 + 24, 64 + 24))
    w = rng.random((25, 25))
    x = (rng.standard_normal((256, 128)) + 0j).astype(np.complex128)
    tw, rev = kernels.twiddles(128), kernels.bit_reverse_indices(128)
    v = rng.standard_normal((4096, 16))
    c = rng.standard_normal((256, 16))
    return [
        ("correlate 64x64, 25x25 kernel",
         lambda: kernels.correlate_valid_numpy(padded, w),
         lambda: kernels.correlate_valid_numba(padded, w)),
        ("fft radix-2, 256 x 128",
         lambda: kernels.fft_radix2_numpy(x, tw, rev),
         lambda: kernels.fft_radix2_numba(x, tw, rev)),
        ("nearest centroid 4096 x 256, dim 16",
         lambda: kernels.nearest_centroid_numpy(v, c),
         lambda: kernels.nearest_centroid_numba(v, c)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<38}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, f_np, f_nb in cases():
        t_np = best_of(f_np, args.repeat)
        if HAVE_NUMBA:
            t_nb = best_of(f_nb, args.repeat)
            print(f"{name:<38}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<38}{t_np * 1e3:>10.2f}{'n/a':>10}{'':>9}")


if __name__ == "__main__":
    main()
