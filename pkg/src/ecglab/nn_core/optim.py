"""Adam, plateau LR scheduling, and the explicit L2 loss term."""

import numpy as np

from ..errors import NumericError
from .tensor import Tensor


def l2_penalty(params):
    """Sum of squared values over decay-flagged parameters.

    Biases and norm parameters carry decay=False and are excluded. The
    caller scales by lam/2; the term participates in the loss so its
    gradient flows through the tape like everything else.
    """
    acc = None
    for p in params:
        if not p.decay:
            continue
        term = (p * p).sum()
        acc = term if acc is None else acc + term
    if acc is None:
        return Tensor(np.zeros((), dtype=np.float32))
    return acc


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        for i, p in enumerate(self.params):
            if p.name is None:
                p.name = f"param{i}"
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        # validate every gradient before touching any parameter, so a numeric
        # failure cannot leave the model half-updated
        for p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient in {p.name}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)

    def state_tensors(self):
        """Moment arrays keyed for checkpointing."""
        out = {}
        for i, p in enumerate(self.params):
            out[f"opt.m.{p.name}"] = self.m[i]
            out[f"opt.v.{p.name}"] = self.v[i]
        return out

    def load_state_tensors(self, tensors):
        for i, p in enumerate(self.params):
            self.m[i] = np.ascontiguousarray(tensors[f"opt.m.{p.name}"], dtype=p.data.dtype)
            self.v[i] = np.ascontiguousarray(tensors[f"opt.v.{p.name}"], dtype=p.data.dtype)


class PlateauScheduler:
    """Halve the learning rate when a watched value stops improving.

    A value counts as an improvement only if strictly below the best seen.
    After `patience` consecutive non-improving steps the rate is reduced
    and the bad-step counter resets; the best value is kept.
    """

    def __init__(self, opt, factor=0.5, patience=25, min_lr=0.0):
        self.opt = opt
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = np.inf
        self.bad = 0

    def step(self, value):
        if value < self.best:
            self.best = float(value)
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
                self.bad = 0
        return self.opt.lr

    def state(self):
        return {"best": self.best, "bad": self.bad, "lr": self.opt.lr}

    def load_state(self, state):
        self.best = float(state["best"])
        self.bad = int(state["bad"])
        self.opt.lr = float(state["lr"])
