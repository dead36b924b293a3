"""Layers shared by the visual, audio and AU-head models."""
import math

import numpy as np

from aucorr import functional as F
from aucorr.tensor import Tensor


class ConfigError(ValueError):
    """A model or run configuration is inconsistent."""


def kaiming_uniform(rng, shape, fan_in):
    # U(-b, b) with b = sqrt(6 / fan_in) has variance 2 / fan_in
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal parameter container.

    Attributes holding a grad-requiring :class:`Tensor` become parameters,
    attributes holding a :class:`Module` become children, both in
    assignment order. Buffers (non-trainable arrays) are registered with
    :meth:`register_buffer`.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def param(self, array):
        return Tensor(array, requires_grad=True)

    def register_buffer(self, name, array):
        arr = np.array(array, dtype=np.float64)
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def state_dict(self):
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        out.update({name: b.copy() for name, b in self.named_buffers()})
        return out

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in list(params) + list(buffers) if k not in state]
        unexpected = [k for k in state if k not in params and k not in buffers]
        if strict and (missing or unexpected):
            raise ConfigError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, arr in state.items():
            target = params[name].data if name in params else buffers.get(name)
            if target is None:
                continue
            if target.shape != np.shape(arr):
                raise ConfigError(f"{name}: shape {np.shape(arr)} != {target.shape}")
            target[...] = arr

    def train(self, mode=True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        super().__init__()
        self.weight = self.param(kaiming_uniform(rng, (n_in, n_out), n_in))
        self.bias = self.param(np.zeros(n_out)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, pad=0):
        super().__init__()
        self.stride = stride
        self.pad = pad
        fan_in = c_in * kernel * kernel
        self.weight = self.param(kaiming_uniform(rng, (c_out, c_in, kernel, kernel), fan_in))

    def forward(self, x):
        return F.conv2d(x, self.weight, self.stride, self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1):
        super().__init__()
        self.momentum = momentum
        self.gamma = self.param(np.ones(channels))
        self.beta = self.param(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return F.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum)


class LayerNorm(Module):
    def __init__(self, dim):
        super().__init__()
        self.gain = self.param(np.ones(dim))
        self.bias = self.param(np.zeros(dim))

    def forward(self, x):
        return F.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"model dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.w_q = self.param(kaiming_uniform(rng, (dim, dim), dim))
        self.w_k = self.param(kaiming_uniform(rng, (dim, dim), dim))
        self.w_v = self.param(kaiming_uniform(rng, (dim, dim), dim))
        self.w_o = self.param(kaiming_uniform(rng, (dim, dim), dim))

    def _split(self, t):
        *lead, length, _ = t.shape
        t = t.reshape(*lead, length, self.heads, self.dim // self.heads)
        return F.swapaxes(t, -2, -3)

    def attention(self, x):
        """Row-stochastic attention weights, shape (..., heads, L, L)."""
        q, k = self._split(F.linear(x, self.w_q)), self._split(F.linear(x, self.w_k))
        scores = F.matmul(q, F.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.dim // self.heads))
        return F.softmax(scores, axis=-1)

    def forward(self, x):
        if x.shape[-2] < 1:
            raise ConfigError("attention over an empty sequence")
        weights = self.attention(x)
        v = self._split(F.linear(x, self.w_v))
        ctx = F.swapaxes(F.matmul(weights, v), -2, -3)
        ctx = ctx.reshape(*x.shape[:-1], self.dim)
        return F.linear(ctx, self.w_o)


class TransformerEncoderLayer(Module):
    """Pre-norm encoder: ``x + MHA(LN(x))`` then ``y + FFN(LN(y))``."""

    def __init__(self, dim, heads, ffn_dim, rng):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ff1 = Linear(dim, ffn_dim, rng)
        self.ff2 = Linear(ffn_dim, dim, rng)

    def forward(self, x):
        y = x + self.attn(self.ln1(x))
        return y + self.ff2(F.relu(self.ff1(self.ln2(y))))


class ResBasicBlock(Module):
    """Two 3x3 conv/BN stages plus a (possibly projected) shortcut."""

    def __init__(self, c_in, c_out, stride, rng):
        super().__init__()
        self.c_in = c_in
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, pad=1)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, stride=1, pad=1)
        self.bn2 = BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, rng, stride=stride)
            self.proj_bn = BatchNorm2d(c_out)
        else:
            self.proj = None

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        short = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return F.relu(out + short)


def sinusoidal_table(max_len, dim):
    pos = np.arange(max_len)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate[: dim // 2])
    return table


class PositionalEmbedding(Module):
    def __init__(self, max_len, dim, rng, kind="learned"):
        super().__init__()
        self.kind = kind
        if kind == "learned":
            self.table = self.param(rng.normal(0.0, 0.02, size=(max_len, dim)))
        elif kind == "sinusoidal":
            self.table = Tensor(sinusoidal_table(max_len, dim))
        else:
            raise ConfigError(f"unknown positional embedding kind {kind!r}")

    def forward(self, x):
        length = x.shape[-2]
        if length > self.table.shape[0]:
            raise ConfigError(f"sequence length {length} exceeds table size {self.table.shape[0]}")
        return x + self.table[:length]
