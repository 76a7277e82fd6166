"""Denoising diffusion generator with a GRU-embedded UNet backbone.

The forward process follows the keep-coefficient convention: each step
scales by sqrt(alpha_t) and adds (1 - alpha_t)-variance noise, with
beta_t = 1 - alpha_t on a linear schedule. The network predicts the noise
component of a corrupted segment given the step index.

Backbone: conv stem, four encoder blocks (two time-conditioned residual
blocks, self-attention, and a downsampling conv that doubles channels; the
deepest block keeps shape), a closing residual block, a stacked GRU over
the bottleneck sequence, then the mirrored decoder. Each encoder block
leaves two skip maps; the matching decoder block concatenates them back
in reverse order before its residual blocks.
"""

import math

import numpy as np

from .errors import ConfigError, ShapeError
from .nn_core import tensor as T
from .nn_core.layers import (
    BatchNorm1d,
    Conv1d,
    GRU,
    Linear,
    Module,
    MultiHeadSelfAttention,
)
from .nn_core.tensor import Tensor


class DiffusionSchedule:
    """Linear beta schedule; alpha_t = 1 - beta_t, alpha_bar is its cumprod."""

    def __init__(self, steps, beta_start=1e-4, beta_end=0.02):
        if steps < 1:
            raise ConfigError(f"diffusion needs >= 1 step, got {steps}")
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ConfigError(f"betas must satisfy 0 < start <= end < 1, "
                              f"got {beta_start}, {beta_end}")
        self.steps = steps
        self.betas = np.linspace(beta_start, beta_end, steps)
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)

    def _check_t(self, t):
        t = np.asarray(t)
        if t.min() < 1 or t.max() > self.steps:
            raise ConfigError(f"step index out of range 1..{self.steps}")
        return t

    def q_sample(self, x0, t, eps):
        """Corrupt clean segments to step t (1-based): x_t = sqrt(abar) x0 + sqrt(1-abar) eps."""
        t = self._check_t(t)
        ab = self.alpha_bar[t - 1].astype(x0.dtype)[:, None, None]
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def sinusoidal_embedding(t, dim):
    """(B,) step indices -> (B, dim) sin/cos features."""
    if dim % 2 != 0:
        raise ConfigError(f"time embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class DiffResBlock(Module):
    """Residual conv block with an additive per-channel time shift."""

    def __init__(self, cin, cout, time_dim, rng):
        self.conv1 = Conv1d(cin, cout, 3, rng)
        self.bn1 = BatchNorm1d(cout)
        self.time_lin = Linear(time_dim, cout, rng)
        self.conv2 = Conv1d(cout, cout, 3, rng)
        self.bn2 = BatchNorm1d(cout)
        self.proj = None if cin == cout else Conv1d(cin, cout, 1, rng)

    def forward(self, x, temb):
        h = self.bn1(self.conv1(x)).silu()
        shift = self.time_lin(temb.silu())
        h = h + shift.reshape(shift.shape[0], shift.shape[1], 1)
        h = self.bn2(self.conv2(h)).silu()
        return h + (x if self.proj is None else self.proj(x))


class AttnBlock(Module):
    def __init__(self, ch, heads, rng):
        self.bn = BatchNorm1d(ch)
        self.attn = MultiHeadSelfAttention(ch, heads, rng)

    def forward(self, x):
        return x + self.attn(self.bn(x))


class _EncBlock(Module):
    def __init__(self, cin, cout, stride, time_dim, heads, rng):
        self.res1 = DiffResBlock(cin, cin, time_dim, rng)
        self.res2 = DiffResBlock(cin, cin, time_dim, rng)
        self.attn = AttnBlock(cin, heads, rng)
        self.down = Conv1d(cin, cout, 3, rng, stride=stride)

    def forward(self, x, temb, skips):
        h = self.res1(x, temb)
        skips.append(h)
        h = self.res2(h, temb)
        h = self.attn(h)
        skips.append(h)
        return self.down(h)


class _DecBlock(Module):
    def __init__(self, ch, cout, last, time_dim, heads, rng):
        self.res1 = DiffResBlock(2 * ch, ch, time_dim, rng)
        self.res2 = DiffResBlock(2 * ch, ch, time_dim, rng)
        self.attn = AttnBlock(ch, heads, rng)
        self.up = Conv1d(ch, cout, 3, rng)
        self.last = last

    def forward(self, x, temb, skips):
        h = self.res1(T.cat([x, skips.pop()], axis=1), temb)
        h = self.res2(T.cat([h, skips.pop()], axis=1), temb)
        h = self.attn(h)
        if not self.last:
            h = h.upsample2()
        return self.up(h)


class GRUUNet(Module):
    """Noise predictor over (B, 1, L) segments, L divisible by 8."""

    def __init__(self, base=64, gru_layers=16, time_dim=128, heads=4, seed=0):
        rng = np.random.default_rng(seed)
        c = base
        self.stem = Conv1d(1, c, 7, rng)
        self.time1 = Linear(time_dim, time_dim, rng)
        self.time2 = Linear(time_dim, time_dim, rng)
        chans = [c, 2 * c, 4 * c, 8 * c]
        self.enc = [
            _EncBlock(chans[i], chans[min(i + 1, 3)], 2 if i < 3 else 1,
                      time_dim, heads, rng)
            for i in range(4)
        ]
        self.mid = DiffResBlock(8 * c, 8 * c, time_dim, rng)
        self.gru = GRU(8 * c, 8 * c, gru_layers, rng)
        self.open_attn = AttnBlock(8 * c, heads, rng)
        self.open_res = DiffResBlock(8 * c, 8 * c, time_dim, rng)
        self.dec = [
            _DecBlock(chans[3 - i], chans[max(2 - i, 0)], i == 3, time_dim, heads, rng)
            for i in range(4)
        ]
        self.final = Conv1d(c, 1, 3, rng)
        self.base = c
        self.time_dim = time_dim
        # test hooks: identity-bypass the GRU, and shape audit of the last pass
        self.bypass_gru = False
        self.last_shapes = None

    def forward(self, x, t):
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"expected (B, 1, L) input, got {x.shape}")
        if x.shape[2] % 8 != 0:
            raise ShapeError(f"segment length must be divisible by 8, got {x.shape[2]}")
        emb = sinusoidal_embedding(t, self.time_dim).astype(x.dtype)
        temb = self.time2(self.time1(Tensor(emb)).silu())
        h = self.stem(x)
        skips = []
        for blk in self.enc:
            h = blk(h, temb, skips)
        h = self.mid(h, temb)
        shapes = {"bottleneck": h.shape[1:], "skips": len(skips)}
        if not self.bypass_gru:
            h = self.gru(h.transpose(0, 2, 1)).transpose(0, 2, 1)
        h = self.open_attn(h)
        h = self.open_res(h, temb)
        for blk in self.dec:
            h = blk(h, temb, skips)
        out = self.final(h)
        shapes["output"] = out.shape[1:]
        self.last_shapes = shapes
        return out


def diffusion_loss(model, schedule, x0, rng):
    """Noise-prediction MSE on a batch of clean segments (B, 1, L)."""
    b = x0.shape[0]
    t = rng.integers(1, schedule.steps + 1, size=b)
    eps = rng.standard_normal(x0.shape).astype(x0.dtype)
    xt = schedule.q_sample(x0, t, eps)
    pred = model(Tensor(np.ascontiguousarray(xt, dtype=x0.dtype)), t)
    diff = pred - Tensor(eps)
    return (diff * diff).mean()


def sample(model, schedule, n, length, rng, batch=64):
    """Ancestral sampling; returns (n, 1, length) float32 segments."""
    was_training = model.training
    model.eval()
    chunks = []
    with T.no_grad():
        for start in range(0, n, batch):
            m = min(batch, n - start)
            x = rng.standard_normal((m, 1, length)).astype(np.float32)
            for t in range(schedule.steps, 0, -1):
                eps_hat = model(Tensor(x), np.full(m, t)).data
                a = float(schedule.alphas[t - 1])
                ab = float(schedule.alpha_bar[t - 1])
                bt = float(schedule.betas[t - 1])
                x = (x - (bt / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(a)
                if t > 1:
                    x = x + math.sqrt(bt) * rng.standard_normal(x.shape).astype(np.float32)
            chunks.append(x.astype(np.float32))
    model.train(was_training)
    return np.concatenate(chunks, axis=0)
