"""Time the compiled kernels against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel gets the same
inputs on both backends; the table lists the best of several repeats.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from rpdct import _fallback
from rpdct.datagen import gen_base_shape, shape_spec
from rpdct.imaging import trace_contours

try:
    from rpdct import _kernels
except ImportError:  # extension not built
    _kernels = None


def _cases(repeat: int):
    mask = gen_base_shape(shape_spec(6, 4)).pixels.astype(np.uint8)
    ys, xs = np.nonzero(mask)
    sx, sy = int(xs[ys == ys.min()].min()), int(ys.min())
    yield "label 8-conn 256x256", lambda k: k.label(mask, 8)
    yield "moore_trace boundary", lambda k: k.moore_trace(mask, sx, sy, sx - 1, sy)

    rng = np.random.default_rng(0)
    n, d, h, m = 200, 28, 28, 28
    x = rng.normal(size=(n, d))
    t = rng.uniform(-0.9, 0.9, size=(n, m))
    order = np.arange(n, dtype=np.int64)
    w1 = rng.uniform(-0.2, 0.2, size=(h, d + 1))
    w2 = rng.uniform(-0.2, 0.2, size=(m, h + 1))

    def epoch(k):
        a, b = w1.copy(), w2.copy()
        k.sgd_epoch(a, b, np.zeros_like(a), np.zeros_like(b), x, t, order, 0.01, 0.9)

    yield f"sgd_epoch {n} samples {d}-{h}-{m}", epoch


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    trace_contours(gen_base_shape(shape_spec(6, 1)))  # warm imports and caches

    backends = [("python", _fallback)] + ([("compiled", _kernels)] if _kernels else [])
    print(f"{'kernel':34s}" + "".join(f"{name:>14s}" for name, _ in backends) + "   speed-up")
    for name, fn in _cases(args.repeat):
        times = []
        for _, mod in backends:
            number = 3
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
            times.append(best)
        cells = "".join(f"{t * 1e3:11.3f} ms" for t in times)
        ratio = f"{times[0] / times[1]:9.1f}x" if len(times) == 2 else "        -"
        print(f"{name:34s}{cells}{ratio}")
    if _kernels is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
