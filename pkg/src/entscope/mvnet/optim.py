"""Gradient clipping, Adam and a reduce-on-plateau learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .network import ModelParams


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.arrays())))


def clip_gradients(grads, max_norm=1.0):
    """Rescale so the global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return ModelParams(*(g * g.dtype.type(scale) for g in grads.arrays()))


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(params.zeros_like(), params.zeros_like(), 0, beta1, beta2, eps)


def adam_step(params, state, grads, lr):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v, g in zip(params.arrays(), state.m.arrays(), state.v.arrays(), grads.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class PlateauScheduler:
    """Multiply the rate by ``factor`` after ``patience`` epochs without a
    strict improvement of the monitored (higher-is-better) metric."""

    lr: float = 1e-3
    factor: float = 0.5
    patience: int = 5
    min_lr: float = 1e-5
    best: float = field(default=-np.inf)
    bad_epochs: int = 0

    def step(self, metric):
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr
