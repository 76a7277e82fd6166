"""Behavioural checks for the neural building blocks."""

import numpy as np
import pytest

import ecglab.nn_core.tensor as T
from ecglab.errors import ConfigError, ShapeError
from ecglab.nn_core.layers import (
    GRU,
    BatchNorm1d,
    Conv1d,
    Linear,
    Module,
    MultiHeadSelfAttention,
    Sequential,
    global_avg_pool,
)

from fdcheck import fd_grad_check


def leaf(arr):
    return T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- Linear

def test_linear_shapes_and_values(rng):
    lin = Linear(3, 2, rng)
    lin.w.data = np.arange(6, dtype=np.float32).reshape(3, 2)
    lin.b.data = np.array([1.0, -1.0], dtype=np.float32)
    x = T.Tensor(np.array([[1.0, 0.0, 2.0]], dtype=np.float32))
    y = lin(x)
    assert np.allclose(y.data, [[0 + 8 + 1, 1 + 10 - 1]])


def test_linear_weight_is_decayed_bias_is_not(rng):
    lin = Linear(3, 2, rng)
    flags = {n: p.decay for n, p in lin.named_parameters()}
    assert flags["w"] and not flags["b"]


# ---------------------------------------------------------------- Conv1d

def test_conv_kernel1_identity(rng):
    conv = Conv1d(4, 4, 1, rng)
    conv.w.data = np.eye(4, dtype=np.float32).reshape(4, 4, 1)
    conv.b.data[:] = 0
    x = T.Tensor(rng.standard_normal((2, 4, 9)).astype(np.float32))
    assert np.array_equal(conv(x).data, x.data)


def test_conv_even_kernel_rejected(rng):
    with pytest.raises(ConfigError):
        Conv1d(1, 1, 4, rng)


def test_conv_receptive_field_span(rng):
    # span of input positions influencing one output sample: 1 + (k-1)*d
    for k, d in ((3, 1), (3, 2), (5, 3), (7, 2)):
        conv = Conv1d(1, 1, k, rng, dilation=d).astype(np.float64)
        x = leaf(np.zeros((1, 1, 101)))
        y = conv(x)
        y[:, :, 50].sum().backward()
        hit = np.nonzero(x.grad[0, 0])[0]
        assert hit.max() - hit.min() + 1 == 1 + (k - 1) * d
        assert len(hit) == k


def test_conv_param_count(rng):
    conv = Conv1d(1, 8, 3, rng)
    assert conv.num_params() == 3 * 1 * 8 + 8


def test_conv_same_length_stride1(rng):
    conv = Conv1d(2, 3, 5, rng, dilation=4)
    y = conv(T.Tensor(np.zeros((1, 2, 37), dtype=np.float32)))
    assert y.shape == (1, 3, 37)


# ---------------------------------------------------------------- BatchNorm1d

def test_batchnorm_affine_moments(rng):
    bn = BatchNorm1d(3)
    bn.gamma.data[:] = 2.0
    bn.beta.data[:] = 3.0
    x = T.Tensor(rng.standard_normal((8, 3, 50)).astype(np.float32) * 5 + 1)
    y = bn(x).data
    assert np.allclose(y.mean(axis=(0, 2)), 3.0, atol=1e-5)
    assert np.allclose(y.std(axis=(0, 2)), 2.0, atol=1e-3)


def test_batchnorm_single_sample_training_rejected():
    bn = BatchNorm1d(2)
    x = T.Tensor(np.zeros((1, 2, 16), dtype=np.float32))
    with pytest.raises(ConfigError, match="eval mode"):
        bn(x)
    bn.eval()
    assert bn(x).shape == (1, 2, 16)


def test_batchnorm_running_stats_update(rng):
    bn = BatchNorm1d(2, momentum=0.1)
    x = rng.standard_normal((4, 2, 10))
    bn(T.Tensor(x.astype(np.float32)))
    n = 4 * 10
    mu = x.mean(axis=(0, 2))
    var = x.var(axis=(0, 2)) * n / (n - 1)
    assert np.allclose(bn.running_mean.data, 0.1 * mu, atol=1e-6)
    assert np.allclose(bn.running_var.data, 0.9 + 0.1 * var, atol=1e-6)


def test_batchnorm_eval_uses_running_stats():
    bn = BatchNorm1d(1)
    bn.running_mean.data[:] = 2.0
    bn.running_var.data[:] = 4.0
    bn.eval()
    y = bn(T.Tensor(np.full((1, 1, 3), 6.0, dtype=np.float32)))
    assert np.allclose(y.data, (6.0 - 2.0) / np.sqrt(4.0 + 1e-5), atol=1e-6)


# ---------------------------------------------------------------- GRU

def test_gru_zero_weights_zero_output(rng):
    gru = GRU(3, 5, 2, rng)
    for group in (gru.w_ih, gru.w_hh, gru.b_ih, gru.b_hh):
        for p in group:
            p.data[:] = 0
    y = gru(T.Tensor(rng.standard_normal((2, 7, 3)).astype(np.float32)))
    assert np.array_equal(y.data, np.zeros((2, 7, 5), dtype=np.float32))


def test_gru_empty_sequence(rng):
    gru = GRU(3, 5, 1, rng)
    y = gru(T.Tensor(np.zeros((4, 0, 3), dtype=np.float32)))
    assert y.shape == (4, 0, 5)


def test_gru_output_range(rng):
    # h is a convex mix of tanh candidates, so |h| stays below 1
    gru = GRU(2, 4, 1, rng)
    y = gru(T.Tensor(rng.standard_normal((3, 20, 2)).astype(np.float32) * 10))
    assert np.all(np.abs(y.data) <= 1.0)


def test_gru_is_causal(rng):
    gru = GRU(1, 3, 2, rng)
    x = rng.standard_normal((1, 9, 1)).astype(np.float32)
    y_full = gru(T.Tensor(x)).data
    x2 = x.copy()
    x2[0, 6:] += 1.0
    y_mod = gru(T.Tensor(x2)).data
    assert np.allclose(y_full[0, :6], y_mod[0, :6])
    assert not np.allclose(y_full[0, 6:], y_mod[0, 6:])


# ---------------------------------------------------------------- attention

def test_attention_requires_rng():
    with pytest.raises(ConfigError):
        MultiHeadSelfAttention(8, heads=2)


def test_attention_heads_must_divide_channels(rng):
    with pytest.raises(ConfigError):
        MultiHeadSelfAttention(6, heads=4, rng=rng)


def test_attention_single_position_weight_is_one(rng):
    # softmax over one key is exactly 1, so the block reduces to proj(v)
    mha = MultiHeadSelfAttention(8, heads=2, rng=rng)
    x = T.Tensor(rng.standard_normal((3, 8, 1)).astype(np.float32))
    with T.no_grad():
        qkv = mha.qkv(x.transpose(0, 2, 1))
        v = qkv[:, :, 16:]
        want = mha.proj(v).transpose(0, 2, 1)
        got = mha(x)
    assert np.array_equal(got.data, want.data)


def test_attention_permutation_equivariance(rng):
    mha = MultiHeadSelfAttention(8, heads=4, rng=rng)
    x = rng.standard_normal((2, 8, 11)).astype(np.float32)
    perm = rng.permutation(11)
    with T.no_grad():
        y = mha(T.Tensor(x)).data
        yp = mha(T.Tensor(x[:, :, perm])).data
    assert np.allclose(yp, y[:, :, perm], atol=1e-5)


# ---------------------------------------------------------------- pooling

def test_gap_mean_and_empty():
    x = T.Tensor(np.arange(6, dtype=np.float32).reshape(1, 2, 3))
    assert np.allclose(global_avg_pool(x).data, [[1.0, 4.0]])
    with pytest.raises(ShapeError):
        global_avg_pool(T.Tensor(np.zeros((1, 2, 0), dtype=np.float32)))


def test_gap_permutation_invariance(rng):
    x = rng.standard_normal((2, 3, 10)).astype(np.float64)
    perm = rng.permutation(10)
    a = global_avg_pool(T.Tensor(x)).data
    b = global_avg_pool(T.Tensor(x[:, :, perm])).data
    assert np.allclose(a, b, atol=1e-12)


# ---------------------------------------------------------------- module plumbing

def test_module_astype_and_num_params(rng):
    net = Sequential(Conv1d(1, 2, 3, rng), BatchNorm1d(2))
    net.astype(np.float64)
    for _, p in net.named_parameters():
        assert p.data.dtype == np.float64
    assert net.num_params() == (1 * 2 * 3 + 2) + (2 + 2)


def test_train_eval_flag_propagates(rng):
    net = Sequential(Conv1d(1, 2, 3, rng), BatchNorm1d(2))
    net.eval()
    assert all(not m.training for m in net.modules())
    net.train()
    assert all(m.training for m in net.modules())


# ---------------------------------------------------------------- gradients

def layer_loss(module, x):
    def make_loss():
        return (module(x) * module(x)).sum() * 0.5
    return make_loss


def test_linear_grad_matches_fd(rng):
    lin = Linear(4, 3, rng).astype(np.float64)
    x = T.Tensor(rng.standard_normal((2, 4)))
    fd_grad_check(layer_loss(lin, x), list(lin.parameters()), rng, n_coords=12)


def test_conv_grad_matches_fd(rng):
    conv = Conv1d(2, 3, 3, rng, stride=2, dilation=2).astype(np.float64)
    x = T.Tensor(rng.standard_normal((2, 2, 12)))
    fd_grad_check(layer_loss(conv, x), list(conv.parameters()), rng, n_coords=12)


def test_batchnorm_grad_matches_fd(rng):
    bn = BatchNorm1d(3).astype(np.float64)
    x = T.Tensor(rng.standard_normal((4, 3, 6)))
    fd_grad_check(layer_loss(bn, x), list(bn.parameters()), rng, n_coords=6)


def test_gru_grad_matches_fd(rng):
    gru = GRU(2, 3, 2, rng).astype(np.float64)
    x = T.Tensor(rng.standard_normal((2, 4, 2)))
    fd_grad_check(layer_loss(gru, x), list(gru.parameters()), rng, n_coords=12)


def test_attention_grad_matches_fd(rng):
    mha = MultiHeadSelfAttention(4, heads=2, rng=rng).astype(np.float64)
    x = T.Tensor(rng.standard_normal((2, 4, 5)))
    fd_grad_check(layer_loss(mha, x), list(mha.parameters()), rng, n_coords=12)
