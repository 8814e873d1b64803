"""Time the numba and numpy convolution kernels on desk-sized layers.

    python benchmarks/bench_kernels.py [--repeat N]

Each row reports the best-of-N wall time per backend, the speedup and whether
the two outputs are bitwise identical.
"""

import argparse
import timeit

import numpy as np

from bda import _kernels
from bda.nn import Conv2dParams, conv2d
from bda.tensor import Tensor, backward, tsum

# (label, batch, channels in, extent, channels out, kernel, stride)
LAYERS = [
    ("enc1 5x5/2", 4, 3, 64, 8, 5, 2),
    ("enc2 3x3/2", 4, 8, 32, 16, 3, 2),
    ("enc2 3x3/1", 4, 16, 16, 16, 3, 1),
    ("dec4 3x3/1", 4, 24, 32, 8, 3, 1),
    ("head 3x3/1", 4, 8, 64, 5, 3, 1),
]


def kernel_case(n, c, e, k, s):
    rng = np.random.default_rng(0)
    pad = k // 2
    xp = np.pad(rng.standard_normal((n, c, e, e)).astype(np.float32), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = wo = (e + 2 * pad - k) // s + 1
    cols = rng.standard_normal((c * k * k, n * ho * wo)).astype(np.float32)
    hp = wp = e + 2 * pad
    return (
        lambda: _kernels.im2col(xp, k, s, ho, wo),
        lambda: _kernels.col2im(cols, n, c, hp, wp, k, s, ho, wo),
    )


def conv_case(n, c, e, co, k, s):
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((n, c, e, e)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.standard_normal((co, c, k, k)).astype(np.float32), requires_grad=True)
    p = Conv2dParams(w, None, s, k // 2)

    def run():
        y = conv2d(x, p)
        g = backward(tsum(y))
        return y.data, g[x], g[w]

    return run


def best(fn, repeat):
    fn()  # warm-up (and numba compilation)
    return min(timeit.repeat(fn, number=5, repeat=repeat)) / 5


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = _kernels.available_backends()
    if "numba" not in backends:
        print("numba unavailable; only the numpy kernels can be timed")
    print(f"{'layer':14s} {'op':10s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup  identical")
    for label, n, c, e, co, k, s in LAYERS:
        results = {}
        times = {}
        for b in backends:
            _kernels.set_backend(b)
            im, col = kernel_case(n, c, e, k, s)
            conv = conv_case(n, c, e, co, k, s)
            times[b] = [best(im, args.repeat), best(col, args.repeat), best(conv, args.repeat)]
            results[b] = [im(), col(), *conv()]
        same = all(np.array_equal(x, y) for x, y in zip(*results.values())) if len(results) > 1 else True
        for j, op in enumerate(("im2col", "col2im", "conv f+b")):
            row = " ".join(f"{times[b][j] * 1e3:8.3f}ms" for b in backends)
            speed = times["numpy"][j] / times["numba"][j] if "numba" in times else 1.0
            print(f"{label:14s} {op:10s} {row}   {speed:6.2f}x  {same}")
    _kernels.set_backend(_kernels._default_backend())


if __name__ == "__main__":
    main()
