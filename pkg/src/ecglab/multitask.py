"""Two-dataset multi-task classifier with customized expert gating.

Four copies of the classifier encoder act as experts over a shared input
batch: one private to each task and two shared. Each task's gate turns the
pooled raw input into softmax weights over its three visible experts; the
other expert's weight is structurally zero, not a learned small number.
The mixed feature map then runs through a per-task tower (neck + head of
the single-task model).

Both tasks are evaluated on the full batch; the training loop decides
which rows of each task's logits carry supervision.
"""

import numpy as np

from .dfnet import DFNetEncoder, DFNetHead, DFNetNeck
from .errors import DataError, ShapeError
from .nn_core import tensor as T
from .nn_core.layers import Linear, Module, global_avg_pool
from .nn_core.optim import l2_penalty


class Tower(Module):
    """Per-task neck + head over mixed expert features."""

    def __init__(self, base, n_classes, rng, se_reduction=8):
        self.neck = DFNetNeck(base, rng)
        self.head = DFNetHead(base, n_classes, rng, reduction=se_reduction)

    def forward(self, x):
        return self.head(self.neck(x))


class MultiTaskDFNet(Module):
    """Experts 0..3; task 0 sees experts (0,1,2), task 1 sees (1,2,3)."""

    TASK_EXPERTS = ((0, 1, 2), (1, 2, 3))

    def __init__(self, n_classes_a, n_classes_b, base=16, seed=0, se_reduction=8):
        rng = np.random.default_rng(seed)
        self.expert0 = DFNetEncoder(base, rng)
        self.expert1 = DFNetEncoder(base, rng)
        self.expert2 = DFNetEncoder(base, rng)
        self.expert3 = DFNetEncoder(base, rng)
        self.gate0 = Linear(1, 3, rng)
        self.gate1 = Linear(1, 3, rng)
        self.tower0 = Tower(base, n_classes_a, rng, se_reduction)
        self.tower1 = Tower(base, n_classes_b, rng, se_reduction)
        self.base = base
        self.n_classes = (n_classes_a, n_classes_b)

    def _gates(self, x):
        pooled = global_avg_pool(x)  # (B, 1) of the raw input
        return (self.gate0(pooled).softmax(axis=1),
                self.gate1(pooled).softmax(axis=1))

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"expected (B, 1, L) input, got {x.shape}")
        b = x.shape[0]
        wa, wb = self._gates(x)
        experts = [self.expert0(x), self.expert1(x), self.expert2(x), self.expert3(x)]
        logits = []
        for task, (w, tower) in enumerate(((wa, self.tower0), (wb, self.tower1))):
            mix = None
            for slot, ei in enumerate(self.TASK_EXPERTS[task]):
                part = experts[ei] * w[:, slot].reshape(b, 1, 1)
                mix = part if mix is None else mix + part
            logits.append(tower(mix))
        return logits[0], logits[1]

    def forward_concat(self, x):
        """Forward over a [X_a; X_b] batch of two equal halves.

        The dual-dataset training step always stacks one batch per task, so
        an odd row count means the halves were assembled wrong.
        """
        if x.shape[0] % 2 != 0:
            raise ShapeError(f"concatenated batch must have an even row count, got {x.shape[0]}")
        return self.forward(x)

    def gate_matrix(self, x):
        """Gate weights as a dense (B, 2, 4) array; unused slots are exact zeros."""
        with T.no_grad():
            wa, wb = self._gates(x)
        out = np.zeros((x.shape[0], 2, 4), dtype=wa.data.dtype)
        for task, w in enumerate((wa, wb)):
            for slot, ei in enumerate(self.TASK_EXPERTS[task]):
                out[:, task, ei] = w.data[:, slot]
        return out


def joint_loss(model, logits_a, ya, logits_b, yb, alpha=1.0, beta=1.0, lam=0.0):
    """alpha * CE_a + beta * CE_b + (lam/2) * sum of squared weights."""
    for logits, y in ((logits_a, ya), (logits_b, yb)):
        labels = np.asarray(y.data if isinstance(y, T.Tensor) else y)
        if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
            raise DataError(f"label outside [0, {logits.shape[1]}) in loss input")
    loss = alpha * T.cross_entropy(logits_a, ya) + beta * T.cross_entropy(logits_b, yb)
    if lam:
        loss = loss + l2_penalty(model.parameters()) * (lam / 2.0)
    return loss
