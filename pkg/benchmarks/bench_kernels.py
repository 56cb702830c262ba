#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the NumPy fallback.

Usage:
    python benchmarks/bench_kernels.py [--repeats N] [--csv out.csv]

Covers the hot kernels behind tracking and gate training: sliding NCC,
bilinear box resampling, 3x3 convolution (forward and parameter gradient)
and 5x5 max-pooling.  Prints one row per (kernel, size, backend) with the
speedup of the compiled path over NumPy where both are available.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from decaylab import kernels  # noqa: E402
from decaylab._rng import Rng  # noqa: E402


def timeit(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def cases():
    rng = Rng(2024)

    for H, tw in ((64, 16), (128, 16), (128, 32), (256, 32)):
        img = rng.uniform_array(H * H).reshape(H, H)
        t = rng.uniform_array(tw * tw).reshape(tw, tw)
        yield (f"ncc_response {H}x{H}/{tw}x{tw}",
               lambda b, img=img, t=t: kernels.ncc_response(img, t, backend=b))

    for H, out in ((64, 64), (128, 64), (256, 128)):
        img = rng.uniform_array(H * H).reshape(H, H)
        yield (f"bilinear {H}x{H}->{out}x{out}",
               lambda b, img=img, out=out: kernels.bilinear_sample_box(
                   img, 3.7, -2.1, H * 0.8, H * 0.8, out, out, backend=b))

    for B, C, OC in ((64, 1, 8), (64, 8, 16), (256, 8, 16)):
        x = rng.uniform_array(B * 30 * 30 * C).reshape(B, 30, 30, C)
        w = rng.uniform_array(OC * C * 9).reshape(OC, C, 3, 3) - 0.5
        bias = np.zeros(OC)
        yield (f"conv3x3 fwd B{B} {C}->{OC}",
               lambda b, x=x, w=w, bias=bias: kernels.conv3x3_forward(x, w, bias, backend=b))
        da = rng.uniform_array(B * 28 * 28 * OC).reshape(B, 28, 28, OC) - 0.5
        yield (f"conv3x3 dw  B{B} {C}->{OC}",
               lambda b, da=da, x=x: kernels.conv3x3_param_grad(da, x, backend=b))

    x = rng.uniform_array(256 * 28 * 28 * 16).reshape(256, 28, 28, 16)
    yield ("maxpool5 B256 c16",
           lambda b, x=x: kernels.maxpool5_forward(x, backend=b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args(argv)

    kernels.tune_allocator()
    backends = kernels.available_backends()
    print(f"backends available: {', '.join(backends)} "
          f"(default: {kernels.BACKEND})\n")

    header = f"{'kernel':34s} " + "".join(f"{b + ' (ms)':>12s}" for b in backends)
    if len(backends) > 1:
        header += f"{'c speedup':>12s}"
    print(header)
    print("-" * len(header))

    rows = []
    for name, fn in cases():
        times = {b: timeit(lambda b=b: fn(b), args.repeats) for b in backends}
        line = f"{name:34s} " + "".join(f"{times[b]:12.3f}" for b in backends)
        if "c" in times and "py" in times:
            line += f"{times['py'] / times['c']:11.2f}x"
        print(line)
        rows.append((name, times))

    if args.csv:
        lines = ["kernel," + ",".join(f"{b}_ms" for b in backends)]
        for name, times in rows:
            lines.append(name + "," + ",".join(repr(times[b]) for b in backends))
        Path(args.csv).write_text("\n".join(lines) + "\n")
        print(f"\nwrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
