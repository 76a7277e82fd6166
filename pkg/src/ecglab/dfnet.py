"""Single-lead heartbeat classifier.

A deep 1D CNN in three pieces that the multi-task variant reuses:

* encoder: strided stem, takes (B, 1, L) to (B, C, L/4)
* neck: three further stages (stride then two dilated), whose per-stage
  outputs at 2C, 4C and 8C channels are concatenated and fused back to 8C
  by a conv block, all at length L/8
* head: squeeze-excitation residual blocks, last one mapping to class
  channels, then average pooling to logits

`base` is the channel width C; conv blocks are conv -> batch norm -> SiLU.
"""

import warnings

import numpy as np

from .errors import ConfigError, ShapeError
from .nn_core import tensor as T
from .nn_core.layers import BatchNorm1d, Conv1d, Linear, Module, global_avg_pool


class ConvBlock(Module):
    """conv -> batch norm -> SiLU."""

    def __init__(self, cin, cout, k, rng, stride=1, dilation=1):
        self.conv = Conv1d(cin, cout, k, rng, stride=stride, dilation=dilation)
        self.bn = BatchNorm1d(cout)

    def forward(self, x):
        return self.bn(self.conv(x)).silu()


class ResBlock(Module):
    """Two conv->BN->SiLU stages, optionally summed with the block input.

    With residual=True the input is added to the branch output (through a
    1x1 projection when channel counts differ) and there is no activation
    after the sum, so a zero-weight block is an exact identity. With
    residual=False only the branch is returned.
    """

    def __init__(self, cin, rng, cout=None, residual=True, k=3):
        cout = cin if cout is None else cout
        self.stage1 = ConvBlock(cin, cout, k, rng)
        self.stage2 = ConvBlock(cout, cout, k, rng)
        self.residual = residual
        self.proj = None if (not residual or cin == cout) else Conv1d(cin, cout, 1, rng)

    def forward(self, x):
        h = self.stage2(self.stage1(x))
        if not self.residual:
            return h
        skip = x if self.proj is None else self.proj(x)
        return skip + h


class SEResBlock(Module):
    """Residual block whose conv branch is gated channel-wise.

    The gate squeezes the block input (average pool over length), runs a
    bottleneck MLP with sigmoid output, and scales the branch before the
    skip join. A 1x1 projection aligns the skip when channels change.
    """

    def __init__(self, cin, cout, rng, reduction=8):
        self.branch = ResBlock(cin, rng, cout=cout, residual=False)
        if cin < reduction:
            warnings.warn(f"SE reduction {reduction} exceeds {cin} channels; bottleneck clamped to 1")
        hidden = max(1, cin // reduction)
        self.fc1 = Linear(cin, hidden, rng)
        self.fc2 = Linear(hidden, cout, rng)
        self.proj = None if cin == cout else Conv1d(cin, cout, 1, rng)

    def forward(self, x):
        h = self.branch(x)
        s = self.fc2(self.fc1(global_avg_pool(x)).relu()).sigmoid()
        h = h * s.reshape(s.shape[0], s.shape[1], 1)
        skip = x if self.proj is None else self.proj(x)
        return skip + h


def _tap(taps, name, t):
    if taps is not None:
        taps.append((name, t.shape[1], t.shape[2] if t.ndim == 3 else 1))


class DFNetEncoder(Module):
    """Stem: (B, 1, L) -> (B, C, L/4)."""

    def __init__(self, base, rng):
        if base % 2 != 0 or base < 2:
            raise ConfigError(f"base channel count must be even and >= 2, got {base}")
        c = base
        self.conv1 = ConvBlock(1, c // 2, 3, rng, stride=2)
        self.res1 = [ResBlock(c // 2, rng) for _ in range(3)]
        self.conv2 = ConvBlock(c // 2, c, 3, rng, stride=2)
        self.res2 = [ResBlock(c, rng) for _ in range(6)]

    def forward(self, x, taps=None):
        h = self.conv1(x)
        _tap(taps, "conv1", h)
        for r in self.res1:
            h = r(h)
        _tap(taps, "res1", h)
        h = self.conv2(h)
        _tap(taps, "conv2", h)
        for r in self.res2:
            h = r(h)
        _tap(taps, "res2", h)
        return h


class DFNetNeck(Module):
    """Three stages at length L/8 whose outputs are fused: (B, C, L/4) -> (B, 8C, L/8)."""

    def __init__(self, base, rng):
        c = base
        self.conv3 = ConvBlock(c, 2 * c, 3, rng, stride=2)
        self.res3 = [ResBlock(2 * c, rng) for _ in range(3)]
        self.conv4 = ConvBlock(2 * c, 4 * c, 3, rng, dilation=2)
        self.res4 = [ResBlock(4 * c, rng) for _ in range(3)]
        self.conv5 = ConvBlock(4 * c, 8 * c, 3, rng, dilation=3)
        self.res5 = [ResBlock(8 * c, rng) for _ in range(3)]
        self.fusion = ConvBlock(14 * c, 8 * c, 3, rng)

    def forward(self, x, taps=None):
        h = self.conv3(x)
        _tap(taps, "conv3", h)
        for r in self.res3:
            h = r(h)
        _tap(taps, "res3", h)
        y1 = h
        h = self.conv4(y1)
        _tap(taps, "conv4", h)
        for r in self.res4:
            h = r(h)
        _tap(taps, "res4", h)
        y2 = h
        h = self.conv5(y2)
        _tap(taps, "conv5", h)
        for r in self.res5:
            h = r(h)
        _tap(taps, "res5", h)
        y3 = h
        fused = self.fusion(T.cat([y1, y2, y3], axis=1))
        _tap(taps, "fusion", fused)
        return fused


class DFNetHead(Module):
    """Gated residual blocks then pooling: (B, 8C, L/8) -> (B, classes)."""

    def __init__(self, base, n_classes, rng, reduction=8):
        c = base
        self.se = [SEResBlock(8 * c, 8 * c, rng, reduction=reduction) for _ in range(2)]
        self.out = SEResBlock(8 * c, n_classes, rng, reduction=reduction)

    def forward(self, x, taps=None):
        h = x
        for blk in self.se:
            h = blk(h)
        _tap(taps, "se", h)
        h = self.out(h)
        _tap(taps, "se_out", h)
        logits = global_avg_pool(h)
        _tap(taps, "pool", logits)
        return logits


class DFNet(Module):
    def __init__(self, n_classes, base=16, seed=0, se_reduction=8):
        if n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {n_classes}")
        rng = np.random.default_rng(seed)
        self.encoder = DFNetEncoder(base, rng)
        self.neck = DFNetNeck(base, rng)
        self.head = DFNetHead(base, n_classes, rng, reduction=se_reduction)
        self.n_classes = n_classes
        self.base = base

    def forward(self, x, taps=None):
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"expected (B, 1, L) input, got {x.shape}")
        h = self.encoder(x, taps)
        d = self.neck(h, taps)
        return self.head(d, taps)


def shape_trace(model, length):
    """Run a dummy forward and return [(stage, channels, length)] per stage."""
    was_training = model.training
    model.eval()
    taps = []
    with T.no_grad():
        model(T.Tensor(np.zeros((1, 1, length), dtype=np.float32)), taps=taps)
    model.train(was_training)
    return taps


def count_params(model):
    """Total trainable scalars in a model."""
    return int(model.num_params())


def estimate_flops(model, length):
    """Forward cost at batch 1 in GFLOPs, counting 2 FLOPs per MAC."""
    was_training = model.training
    model.eval()
    with T.no_grad(), T.count_flops() as fc:
        model(T.Tensor(np.zeros((1, 1, length), dtype=np.float32)))
    model.train(was_training)
    return fc.flops / 1e9
