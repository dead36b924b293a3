"""Differentiable operations on :class:`~aucorr.tensor.Tensor`.

Each op computes its forward value with numpy and registers a backward
closure that returns one gradient array (or ``None``) per input.
"""
import numpy as np

from aucorr import kernels
from aucorr.tensor import DimensionError, _node, as_tensor

BN_EPS = 1e-5
LN_EPS = 1e-5


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")

    def backward(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), backward, "div")


def exp(x):
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sigmoid(x):
    # split by sign so exp never overflows
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x):
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def clip(x, lo, hi):
    """Clamp into [lo, hi]; gradient passes only where the value was inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(out), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _node(np.asarray(out), (x,), backward, "mean")


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(x, a1, a2):
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, axes)


def getitem(x, index):
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (x,), backward, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
                t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
            raise DimensionError(
                f"concat: shapes {[u.shape for u in tensors]} disagree off axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % (tensors[0].ndim + 1)
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Matrix product with numpy batching rules; both operands at least 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _node(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis; ``weight`` is (in, out)."""
    n_in, n_out = weight.shape
    if x.shape[-1] != n_in:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, n_out)
        gx = g @ weight.data.T
        gw = x.data.reshape(-1, n_in).T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _node(out, parents, backward, "linear")


# ---------------------------------------------------------------- normalisation

def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward, "softmax")


def layer_norm(x, gain, bias, axis=-1, eps=LN_EPS):
    axis = axis % x.ndim
    n = x.shape[axis]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs axis size {n}")
    bshape = [1] * x.ndim
    bshape[axis] = n
    gb = gain.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gb + bias.data.reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        gxhat = g * gb
        gx = inv * (gxhat - gxhat.mean(axis=axis, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _node(out, (x, gain, bias), backward, "layer_norm")


def batch_norm2d(x, gamma, beta, running_mean, running_var, training,
                 momentum=0.1, eps=BN_EPS):
    """Per-channel normalisation of (N, C, H, W) or (C, H, W) inputs.

    In training mode batch statistics are used and the running buffers
    (plain numpy arrays) are updated in place; otherwise the running
    statistics are used.
    """
    cax = x.ndim - 3
    if x.ndim not in (3, 4) or x.shape[cax] != gamma.shape[0]:
        raise DimensionError(f"batch_norm2d: input {x.shape} vs {gamma.shape[0]} channels")
    red = tuple(i for i in range(x.ndim) if i != cax)
    bshape = [1] * x.ndim
    bshape[cax] = x.shape[cax]
    gm = gamma.data.reshape(bshape)
    if training:
        mu = x.data.mean(axis=red, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=red, keepdims=True)
        count = x.data.size // x.shape[cax]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        unbiased = var.reshape(-1) * (count / max(count - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        xc = x.data - running_mean.reshape(bshape)
        var = running_var.reshape(bshape)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gm + beta.data.reshape(bshape)

    def backward(g):
        gxhat = g * gm
        if training:
            gx = inv * (gxhat - gxhat.mean(axis=red, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=red, keepdims=True))
        else:
            gx = gxhat * inv
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _node(out, (x, gamma, beta), backward, "batch_norm2d")


# ---------------------------------------------------------------- convolution

def _as_batch(x):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise DimensionError(f"expected (C, H, W) or (N, C, H, W) input, got {x.shape}")


def conv2d(x, weight, stride=1, pad=0, bias=None):
    """2-D cross-correlation with zero padding via im2col."""
    xb, squeeze = _as_batch(x)
    n, c, h, w = xb.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv2d: input {x.shape} has {c} channels, weight {weight.shape}")
    hp, wp = h + 2 * pad, w + 2 * pad
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if kh > hp or kw > wp or ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d: kernel {weight.shape} too large for input {x.shape} "
                             f"with pad {pad}")
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb
    cols = kernels.im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(co, -1)
    out = np.matmul(wmat, cols).reshape(n, co, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)

    def backward(g):
        gb = g.reshape(n, co, ho * wo) if not squeeze else g.reshape(1, co, ho * wo)
        gw = np.tensordot(gb, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gcols = np.matmul(wmat.T, gb)
        gxp = kernels.col2im(gcols, c, hp, wp, kh, kw, stride)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if squeeze:
            gx = gx[0]
        gbias = gb.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gbias

    if squeeze:
        out = out[0]
    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _node(out, parents, backward, "conv2d")


def max_pool2d(x, kernel, stride=None, pad=0):
    stride = stride or kernel
    xb, squeeze = _as_batch(x)
    n, c, h, w = xb.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho, wo = (hp - kernel) // stride + 1, (wp - kernel) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"max_pool2d: window {kernel} too large for {x.shape}")
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    cols = kernels.im2col(xp.reshape(n * c, 1, hp, wp), kernel, kernel, stride)
    arg = cols.argmax(axis=1)
    out = np.take_along_axis(cols, arg[:, None, :], axis=1).reshape(n, c, ho, wo)

    def backward(g):
        gcols = np.zeros_like(cols)
        np.put_along_axis(gcols, arg[:, None, :], g.reshape(n * c, 1, ho * wo), axis=1)
        gxp = kernels.col2im(gcols, 1, hp, wp, kernel, kernel, stride).reshape(n, c, hp, wp)
        gx = gxp[:, :, pad:pad + h, pad:pad + w]
        return (gx[0] if squeeze else gx,)

    return _node(out[0] if squeeze else out, (x,), backward, "max_pool2d")
