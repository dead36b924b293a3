import math

import numpy as np
import pytest

from aucorr import functional as F
from aucorr.gradcheck import check, projected
from aucorr.nn import (
    BatchNorm2d,
    ConfigError,
    Linear,
    MultiHeadAttention,
    PositionalEmbedding,
    ResBasicBlock,
    TransformerEncoderLayer,
    kaiming_uniform,
)
from aucorr.tensor import Tensor


def zero_params(module):
    for _, p in module.named_parameters():
        p.data[...] = 0.0


def naive_mha(x, mha):
    """Per-head loops over plain numpy, no batching tricks."""
    L, D = x.shape
    dh = D // mha.heads
    q, k, v = x @ mha.w_q.data, x @ mha.w_k.data, x @ mha.w_v.data
    ctx = np.zeros((L, D))
    attn = np.zeros((mha.heads, L, L))
    for h in range(mha.heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(L):
            scores = np.array([q[i, sl] @ k[j, sl] / math.sqrt(dh) for j in range(L)])
            e = np.exp(scores - scores.max())
            attn[h, i] = e / e.sum()
            ctx[i, sl] = sum(attn[h, i, j] * v[j, sl] for j in range(L))
    return ctx @ mha.w_o.data, attn


def test_mha_matches_naive_loop(rng):
    mha = MultiHeadAttention(4, 2, rng)
    x = rng.standard_normal((3, 4))
    want_out, want_attn = naive_mha(x, mha)
    attn = mha.attention(Tensor(x)).data
    np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(attn, want_attn, atol=1e-12)
    np.testing.assert_allclose(mha(Tensor(x)).data, want_out, atol=1e-12)


def test_mha_batched_matches_per_sample(rng):
    mha = MultiHeadAttention(8, 4, rng)
    x = rng.standard_normal((3, 5, 8))
    batched = mha(Tensor(x)).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], mha(Tensor(x[i])).data, atol=1e-13)


def test_mha_rejects_indivisible_dim(rng):
    with pytest.raises(ConfigError, match="divisible"):
        MultiHeadAttention(6, 4, rng)


def test_encoder_zero_weights_is_identity(rng):
    layer = TransformerEncoderLayer(8, 2, 16, rng)
    zero_params(layer)
    x = rng.standard_normal((2, 5, 8))
    assert np.array_equal(layer(Tensor(x)).data, x)


def test_encoder_permutation_equivariant(rng):
    layer = TransformerEncoderLayer(8, 2, 16, rng)
    x = rng.standard_normal((6, 8))
    perm = rng.permutation(6)
    np.testing.assert_allclose(layer(Tensor(x[perm])).data, layer(Tensor(x)).data[perm],
                               atol=1e-12)


def test_encoder_grad(rng):
    layer = TransformerEncoderLayer(4, 2, 8, rng)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    assert check(lambda: F.sum(layer(x)), [x]) < 1e-4


def test_resblock_zero_convs_give_relu(rng):
    block = ResBasicBlock(2, 2, 1, rng)
    block.conv1.weight.data[...] = 0.0
    block.conv2.weight.data[...] = 0.0
    x = rng.standard_normal((3, 2, 5, 5))
    np.testing.assert_array_equal(block(Tensor(x)).data, np.maximum(x, 0.0))


def test_resblock_projection_shapes(rng):
    block = ResBasicBlock(2, 4, 2, rng)
    assert block(Tensor(rng.standard_normal((1, 2, 8, 8)))).shape == (1, 4, 4, 4)
    assert ResBasicBlock(3, 3, 1, rng).proj is None


def test_resblock_grad(rng):
    block = ResBasicBlock(2, 2, 1, rng)
    x = Tensor(rng.standard_normal((2, 8, 8)), requires_grad=True)
    fn = projected(lambda: block(x), (2, 8, 8), rng)
    assert check(fn, [x], max_coords=40, rng=rng) < 1e-4


def test_batchnorm_modes(rng):
    bn = BatchNorm2d(3)
    x = rng.standard_normal((8, 3, 4, 4)) * 2.0 + 5.0
    out = bn(Tensor(x)).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)
    bn.eval()
    first = bn(Tensor(x[:1])).data
    # eval mode normalises each sample independently of the rest of the batch
    np.testing.assert_array_equal(bn(Tensor(x)).data[:1], first)


def test_init_determinism():
    a = Linear(8, 4, np.random.default_rng(5))
    b = Linear(8, 4, np.random.default_rng(5))
    c = Linear(8, 4, np.random.default_rng(6))
    assert np.array_equal(a.weight.data, b.weight.data)
    assert not np.array_equal(a.weight.data, c.weight.data)


def test_kaiming_variance(rng):
    fan_in = 50
    w = kaiming_uniform(rng, (1000,), fan_in)
    assert abs(w.var() / (2.0 / fan_in) - 1.0) < 0.2


def test_positional_embedding_kinds(rng):
    x = Tensor(np.zeros((3, 4)))
    sin = PositionalEmbedding(5, 4, rng, kind="sinusoidal")(x).data
    np.testing.assert_allclose(sin[0], [0.0, 1.0, 0.0, 1.0])
    learned = PositionalEmbedding(5, 4, rng)
    assert learned(x).shape == (3, 4)
    with pytest.raises(ConfigError):
        learned(Tensor(np.zeros((6, 4))))
    with pytest.raises(ConfigError):
        PositionalEmbedding(5, 4, rng, kind="rotary")


def test_state_dict_round_trip(rng):
    block = ResBasicBlock(2, 4, 2, rng)
    block(Tensor(rng.standard_normal((2, 2, 6, 6))))  # moves BN running stats
    other = ResBasicBlock(2, 4, 2, np.random.default_rng(99))
    other.load_state_dict(block.state_dict())
    for k, v in block.state_dict().items():
        assert np.array_equal(other.state_dict()[k], v), k
    with pytest.raises(ConfigError):
        other.load_state_dict({"conv1.weight": np.zeros(3)})
