"""Module system and the layers the models are built from.

Modules register parameters (trainable Tensors) and buffers (non-trainable
Tensors, e.g. batch-norm running stats) simply by assigning them as
attributes; lists of modules work too. Walk order is attribute assignment
order, which makes parameter naming deterministic.

Weight matrices carry ``decay=True`` so the optimizer's L2 term skips
biases and norm parameters.
"""

import numpy as np

from ..errors import ConfigError, ShapeError
from . import tensor as T
from .tensor import Tensor


def _param(arr, decay=False):
    t = Tensor(np.ascontiguousarray(arr, dtype=np.float32), requires_grad=True)
    t.decay = decay
    return t


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _walk_tensors(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val._walk_tensors(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Tensor):
                        yield f"{prefix}{key}.{i}", item
                    elif isinstance(item, Module):
                        yield from item._walk_tensors(f"{prefix}{key}.{i}.")

    def named_parameters(self):
        out = []
        for name, t in self._walk_tensors():
            if t.requires_grad:
                if t.name is None:
                    t.name = name
                out.append((name, t))
        return out

    def named_buffers(self):
        return [(n, t) for n, t in self._walk_tensors() if not t.requires_grad]

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for _, t in self._walk_tensors():
            t.data = t.data.astype(dtype)
        return self

    def num_params(self):
        return sum(t.data.size for _, t in self.named_parameters())


class Sequential(Module):
    def __init__(self, *mods):
        self.mods = list(mods)

    def forward(self, x):
        for m in self.mods:
            x = m(x)
        return x


class Linear(Module):
    """y = x @ w + b with w of shape (in_features, out_features)."""

    def __init__(self, in_features, out_features, rng, bias=True):
        bound = 1.0 / np.sqrt(in_features)
        self.w = _param(_uniform(rng, (in_features, out_features), bound), decay=True)
        self.b = _param(_uniform(rng, (out_features,), bound)) if bias else None

    def forward(self, x):
        y = x @ self.w
        if self.b is not None:
            y = y + self.b
        return y


class Conv1d(Module):
    """Same-padded 1D convolution, odd kernel, ceil(L/stride) output length."""

    def __init__(self, in_ch, out_ch, kernel_size, rng, stride=1, dilation=1):
        if kernel_size % 2 == 0:
            raise ConfigError(f"conv kernel size must be odd, got {kernel_size}")
        bound = 1.0 / np.sqrt(in_ch * kernel_size)
        self.w = _param(_uniform(rng, (out_ch, in_ch, kernel_size), bound), decay=True)
        self.b = _param(_uniform(rng, (out_ch,), bound))
        self.stride = stride
        self.dilation = dilation

    def forward(self, x):
        return T.conv1d(x, self.w, self.b, self.stride, self.dilation)


class BatchNorm1d(Module):
    """Batch norm over (B, C, L); running stats track eval-mode behaviour."""

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.gamma = _param(np.ones(channels))
        self.beta = _param(np.zeros(channels))
        self.running_mean = Tensor(np.zeros(channels, dtype=np.float32))
        self.running_var = Tensor(np.ones(channels, dtype=np.float32))
        self.eps = eps
        self.momentum = momentum

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"batch norm expects (B, C, L), got {x.shape}")
        c = x.shape[1]
        if self.training:
            if x.shape[0] < 2:
                raise ConfigError(
                    "batch norm got a batch of %d in training mode; "
                    "switch the module to eval mode for single-sample inference" % x.shape[0])
            n = x.shape[0] * x.shape[2]
            if n < 2:
                raise ConfigError("batch norm in training mode needs more than one value per channel")
            mu = x.mean(axis=(0, 2), keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=(0, 2), keepdims=True)
            m = self.momentum
            rm, rv = self.running_mean.data, self.running_var.data
            batch_mu = mu.data.reshape(c).astype(rm.dtype)
            batch_var = var.data.reshape(c).astype(rv.dtype) * (n / (n - 1))
            self.running_mean.data = (1 - m) * rm + m * batch_mu
            self.running_var.data = (1 - m) * rv + m * batch_var
            xhat = xc * (var + self.eps) ** -0.5
        else:
            rm = self.running_mean.data.reshape(1, c, 1)
            rv = self.running_var.data.reshape(1, c, 1)
            xhat = (x - rm) * ((rv + self.eps) ** -0.5)
        return xhat * self.gamma.reshape(1, c, 1) + self.beta.reshape(1, c, 1)


class GRU(Module):
    """Stacked unidirectional GRU over (B, T, F) -> (B, T, H).

    Gate layout follows the r, z, n convention with the candidate reset
    applied to the hidden projection: h' = (1 - z) * n + z * h.
    """

    def __init__(self, input_size, hidden_size, num_layers, rng):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        bound = 1.0 / np.sqrt(hidden_size)
        self.w_ih, self.w_hh, self.b_ih, self.b_hh = [], [], [], []
        for layer in range(num_layers):
            fin = input_size if layer == 0 else hidden_size
            self.w_ih.append(_param(_uniform(rng, (fin, 3 * hidden_size), bound), decay=True))
            self.w_hh.append(_param(_uniform(rng, (hidden_size, 3 * hidden_size), bound), decay=True))
            self.b_ih.append(_param(_uniform(rng, (3 * hidden_size,), bound)))
            self.b_hh.append(_param(_uniform(rng, (3 * hidden_size,), bound)))

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"GRU expects (B, T, F), got {x.shape}")
        b, t_len, _ = x.shape
        h_dim = self.hidden_size
        if t_len == 0:
            return Tensor(np.zeros((b, 0, h_dim), dtype=x.dtype))
        seq = x
        for layer in range(self.num_layers):
            gx_all = seq @ self.w_ih[layer] + self.b_ih[layer]
            h = Tensor(np.zeros((b, h_dim), dtype=x.dtype))
            outs = []
            for t in range(t_len):
                gx = gx_all[:, t, :]
                gh = h @ self.w_hh[layer] + self.b_hh[layer]
                r = (gx[:, :h_dim] + gh[:, :h_dim]).sigmoid()
                z = (gx[:, h_dim:2 * h_dim] + gh[:, h_dim:2 * h_dim]).sigmoid()
                n = (gx[:, 2 * h_dim:] + r * gh[:, 2 * h_dim:]).tanh()
                h = n + z * (h - n)
                outs.append(h.reshape(b, 1, h_dim))
            seq = T.cat(outs, axis=1)
        return seq


class MultiHeadSelfAttention(Module):
    """Self-attention over the length axis of a (B, C, L) feature map."""

    def __init__(self, channels, heads=4, rng=None):
        if rng is None:
            raise ConfigError("attention layer needs an rng for weight init")
        if channels % heads != 0:
            raise ConfigError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = Linear(channels, 3 * channels, rng)
        self.proj = Linear(channels, channels, rng)

    def forward(self, x):
        b, c, l = x.shape
        h = self.heads
        dh = c // h
        xt = x.transpose(0, 2, 1)
        qkv = self.qkv(xt)
        q = qkv[:, :, :c].reshape(b, l, h, dh).transpose(0, 2, 1, 3)
        k = qkv[:, :, c:2 * c].reshape(b, l, h, dh).transpose(0, 2, 1, 3)
        v = qkv[:, :, 2 * c:].reshape(b, l, h, dh).transpose(0, 2, 1, 3)
        scores = (q @ k.transpose(0, 1, 3, 2)) * float(dh) ** -0.5
        attn = scores.softmax(axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, l, c)
        return self.proj(out).transpose(0, 2, 1)


def global_avg_pool(x):
    """(B, C, L) -> (B, C) mean over the length axis."""
    if x.shape[-1] == 0:
        raise ShapeError("global average pool over an empty length axis")
    return x.mean(axis=2)
