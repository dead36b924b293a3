import os
import subprocess
import sys

import numpy as np
import pytest

from aucorr import kernels

try:
    from aucorr import _kernels
except ImportError:
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")

SHAPES = [(1, 1, 3, 3, 1, 1), (2, 3, 7, 6, 3, 1), (2, 3, 7, 7, 3, 2), (1, 4, 9, 9, 1, 2),
          (3, 2, 5, 8, 2, 3)]


@pytest.mark.parametrize("n, c, h, w, k, stride", SHAPES)
def test_im2col_layout(n, c, h, w, k, stride, rng):
    x = rng.standard_normal((n, c, h, w))
    cols = kernels.im2col_numpy(x, k, k, stride)
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    assert cols.shape == (n, c * k * k, ho * wo)
    ch, i, j, y, xx = 1 % c, k - 1, 0, ho - 1, wo // 2
    assert cols[-1, (ch * k + i) * k + j, y * wo + xx] == x[-1, ch, y * stride + i, xx * stride + j]


@pytest.mark.parametrize("n, c, h, w, k, stride", SHAPES)
def test_col2im_is_adjoint(n, c, h, w, k, stride, rng):
    x = rng.standard_normal((n, c, h, w))
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    cols = rng.standard_normal((n, c * k * k, ho * wo))
    lhs = (kernels.im2col_numpy(x, k, k, stride) * cols).sum()
    rhs = (x * kernels.col2im_numpy(cols, c, h, w, k, k, stride)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


@needs_ext
@pytest.mark.parametrize("n, c, h, w, k, stride", SHAPES)
def test_backends_agree_bitwise(n, c, h, w, k, stride, rng):
    x = rng.standard_normal((n, c, h, w))
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    cols = rng.standard_normal((n, c * k * k, ho * wo))
    assert np.array_equal(np.asarray(_kernels.im2col(x, k, k, stride)),
                          kernels.im2col_numpy(x, k, k, stride))
    assert np.array_equal(np.asarray(_kernels.col2im(cols, c, h, w, k, k, stride)),
                          kernels.col2im_numpy(cols, c, h, w, k, k, stride))


def test_wrappers_accept_non_contiguous(rng):
    x = rng.standard_normal((2, 5, 5, 3)).transpose(0, 3, 1, 2)
    np.testing.assert_array_equal(kernels.im2col(x, 3, 3, 1), kernels.im2col_numpy(x, 3, 3, 1))


def test_pure_env_selects_numpy():
    code = "from aucorr import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, AUCORR_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "numpy"


@needs_ext
def test_compiled_backend_is_default():
    env = {k: v for k, v in os.environ.items() if k != "AUCORR_PURE"}
    code = "from aucorr import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "cython"
