"""Benchmark the compiled kernels against the pure-python fallback.

Usage: python3 benchmarks/bench_kernels.py [repeats]

Both backends are imported directly (bypassing the auto-selection) and
timed on representative workloads: the 3x3 backbone convolution, the
dilated stage-5 convolution, 1x1 side convolutions and 2x2 max pooling.
"""

import sys
import time

import numpy as np

from rcfnet.kernels import python_ops

try:
    from rcfnet.kernels import _fastops
except ImportError:
    _fastops = None

CASES = [
    ("conv3x3 1x16x64x64 -> 16", dict(x=(1, 16, 64, 64), w=(16, 16, 3, 3),
                                      stride=1, pad=1, dilation=1)),
    ("conv3x3 dil2 1x32x32x32 -> 32", dict(x=(1, 32, 32, 32),
                                           w=(32, 32, 3, 3),
                                           stride=1, pad=2, dilation=2)),
    ("conv1x1 1x64x64x64 -> 21", dict(x=(1, 64, 64, 64), w=(21, 64, 1, 1),
                                      stride=1, pad=0, dilation=1)),
]


def bench(fn, repeats, *args):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    rng = np.random.default_rng(0)
    backends = [("python", python_ops)]
    if _fastops is not None:
        backends.append(("compiled", _fastops))
    else:
        print("compiled extension not available; benchmarking python only")

    print(f"{'case':<36} " + " ".join(f"{n:>12}" for n, _ in backends)
          + f" {'speedup':>9}")
    for name, spec in CASES:
        x = rng.standard_normal(spec["x"]).astype(np.float32)
        w = rng.standard_normal(spec["w"]).astype(np.float32)
        b = rng.standard_normal(spec["w"][0]).astype(np.float32)
        times = []
        for _, mod in backends:
            times.append(bench(mod.conv2d_forward, repeats, x, w, b,
                               spec["stride"], spec["pad"], spec["dilation"]))
        row = f"{name:<36} " + " ".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f" {times[0] / times[1]:>8.1f}x"
        print(row)

    # max pooling
    x = rng.standard_normal((1, 32, 64, 64)).astype(np.float32)
    times = []
    for _, mod in backends:
        times.append(bench(mod.maxpool_forward, repeats, x, 2, 2))
    row = f"{'maxpool2x2 1x32x64x64':<36} " + " ".join(
        f"{t * 1e3:>10.2f}ms" for t in times)
    if len(times) == 2:
        row += f" {times[0] / times[1]:>8.1f}x"
    print(row)

    # backward pass of the first conv case
    spec = CASES[0][1]
    x = rng.standard_normal(spec["x"]).astype(np.float32)
    w = rng.standard_normal(spec["w"]).astype(np.float32)
    b = rng.standard_normal(spec["w"][0]).astype(np.float32)
    gy = python_ops.conv2d_forward(x, w, b, 1, 1, 1)
    times = []
    for _, mod in backends:
        times.append(bench(mod.conv2d_backward, repeats, x, w, 1, 1, 1, gy))
    row = f"{'conv3x3 backward':<36} " + " ".join(
        f"{t * 1e3:>10.2f}ms" for t in times)
    if len(times) == 2:
        row += f" {times[0] / times[1]:>8.1f}x"
    print(row)


if __name__ == "__main__":
    main()
