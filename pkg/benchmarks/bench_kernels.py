"""Compare the compiled and numpy im2col/col2im backends.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes follow the layers that dominate training: the first CS-Former
blocks on 32x32 frames and the ResNet-18 stem on 64x64 sub-spectrograms.
"""
import argparse
import timeit

import numpy as np

from aucorr import functional as F
from aucorr import kernels
from aucorr.tensor import Tensor

try:
    from aucorr import _kernels
except ImportError:
    _kernels = None

# (name, n, c_in, h, w, c_out, k, stride, pad)
SHAPES = [
    ("frame block0", 32, 3, 32, 32, 8, 3, 1, 1),
    ("frame block1", 32, 8, 32, 32, 16, 3, 2, 1),
    ("audio stem", 32, 1, 64, 64, 4, 3, 1, 1),
    ("audio layer1", 32, 4, 64, 64, 4, 3, 1, 1),
]


def backends():
    out = [("numpy", kernels.im2col_numpy, kernels.col2im_numpy)]
    if _kernels is not None:
        out.append(("cython", _kernels.im2col, _kernels.col2im))
    return out


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def conv_step(x, w, stride, pad):
    xt = Tensor(x, requires_grad=True)
    wt = Tensor(w, requires_grad=True)
    F.sum(F.conv2d(xt, wt, stride, pad)).backward()


def run(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, n, c, h, w, co, k, stride, pad in SHAPES:
        x = rng.standard_normal((n, c, h + 2 * pad, w + 2 * pad))
        weight = rng.standard_normal((co, c, k, k))
        ho = (h + 2 * pad - k) // stride + 1
        wo = (w + 2 * pad - k) // stride + 1
        cols = rng.standard_normal((n, c * k * k, ho * wo))
        times = {}
        ref = None
        for bname, im2col, col2im in backends():
            got = im2col(x, k, k, stride)
            if ref is None:
                ref = got
            elif not np.array_equal(ref, got):
                raise AssertionError(f"{name}: backends disagree")
            t_fwd = best_of(lambda: im2col(x, k, k, stride), repeat)
            t_bwd = best_of(lambda: col2im(cols, c, h + 2 * pad, w + 2 * pad, k, k, stride), repeat)
            kernels._im2col, kernels._col2im = im2col, col2im
            t_conv = best_of(lambda: conv_step(x[:, :, pad:pad + h, pad:pad + w], weight,
                                               stride, pad), repeat)
            times[bname] = (t_fwd, t_bwd, t_conv)
        rows.append((name, times))
    kernels.BACKEND, kernels._im2col, kernels._col2im = kernels._select()
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled backend not built; timing numpy only")
    print(f"{'shape':<14} {'backend':<7} {'im2col ms':>10} {'col2im ms':>10} {'conv f+b ms':>12}")
    for name, times in run(args.repeat):
        for bname, (f, b, cv) in times.items():
            print(f"{name:<14} {bname:<7} {f * 1e3:10.3f} {b * 1e3:10.3f} {cv * 1e3:12.3f}")
        if "cython" in times:
            speed = [times["numpy"][i] / times["cython"][i] for i in range(3)]
            print(f"{'':<14} {'speedup':<7} {speed[0]:9.2f}x {speed[1]:9.2f}x {speed[2]:11.2f}x")


if __name__ == "__main__":
    main()
