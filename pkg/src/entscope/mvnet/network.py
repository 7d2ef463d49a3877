"""Multi-view encoder, mean-pool fusion and dropout classifier head.

Per view ``v``  : ``e_v = relu(W1 v + b1)``
Fusion          : ``r = relu(W2 mean_v(e_v) + b2)``
Classifier      : ``logits = W3 dropout(r) + b3``

Arrays are batched as ``x[batch, view, feature]``.
"""

from dataclasses import dataclass, fields

import numpy as np

from .._seeds import derive_seed

H1_DEFAULT = 256
H2_DEFAULT = 128


@dataclass
class ModelParams:
    W1: np.ndarray  # (H1, D)
    b1: np.ndarray
    W2: np.ndarray  # (H2, H1)
    b2: np.ndarray
    W3: np.ndarray  # (C, H2)
    b3: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    @property
    def input_dim(self):
        return self.W1.shape[1]

    @property
    def hidden(self):
        return self.W1.shape[0], self.W2.shape[0]

    @property
    def num_classes(self):
        return self.W3.shape[0]

    @property
    def dtype(self):
        return self.W1.dtype

    def arrays(self):
        return [getattr(self, f.name) for f in fields(self)]

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self):
        return ModelParams(*(a.copy() for a in self.arrays()))

    def astype(self, dtype):
        return ModelParams(*(a.astype(dtype) for a in self.arrays()))

    def zeros_like(self):
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))

    def equal(self, other):
        return all(a.dtype == b.dtype and np.array_equal(a, b)
                   for a, b in zip(self.arrays(), other.arrays()))


def init_model(n, num_classes, seed=0, hidden=(H1_DEFAULT, H2_DEFAULT), input_dim=None,
               dtype=np.float64):
    """Uniform ``(-sqrt(6/fan_in), sqrt(6/fan_in))`` weights, zero biases.

    ``input_dim`` defaults to the view width ``3n + 2**n``.
    """
    if n < 1 or num_classes < 2:
        raise ValueError(f"need n >= 1 and at least 2 classes, got n={n}, C={num_classes}")
    d = 3 * n + 2 ** n if input_dim is None else int(input_dim)
    h1, h2 = hidden
    rng = np.random.default_rng(derive_seed(seed, 20))

    def layer(fan_out, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype), np.zeros(fan_out, dtype)

    W1, b1 = layer(h1, d)
    W2, b2 = layer(h2, h1)
    W3, b3 = layer(num_classes, h2)
    return ModelParams(W1, b1, W2, b2, W3, b3)


def dropout_mask(shape, rate, seed, dtype=np.float64):
    """Inverted-dropout mask: kept units scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype)
    keep = np.random.default_rng(derive_seed(seed, 21)).random(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


@dataclass
class ForwardCache:
    x: np.ndarray
    e_pre: np.ndarray
    e: np.ndarray
    pooled: np.ndarray
    r_pre: np.ndarray
    r: np.ndarray
    mask: np.ndarray  # None in eval mode
    logits: np.ndarray


def forward_batch(params, x, mask=None):
    """Batched forward pass; ``mask`` (shape ``(B, H2)``) enables dropout."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != params.input_dim:
        raise ValueError(f"expected views of shape (B, K, {params.input_dim}), got {x.shape}")
    e_pre = x @ params.W1.T + params.b1
    e = np.maximum(e_pre, 0.0)
    # sorting along the view axis fixes the summation order, so the pooled
    # vector is bitwise invariant to view order; d(mean)/d(e_v) is still 1/K
    pooled = np.sort(e, axis=1).mean(axis=1)
    r_pre = pooled @ params.W2.T + params.b2
    r = np.maximum(r_pre, 0.0)
    r_drop = r if mask is None else r * mask
    logits = r_drop @ params.W3.T + params.b3
    return ForwardCache(x, e_pre, e, pooled, r_pre, r, mask, logits)


def forward(params, views, mode="eval", dropout_seed=0, dropout_rate=0.5):
    """Logits and pre-dropout representation for one sample or a batch.

    ``views`` is ``(K, D)`` for a single sample or ``(B, K, D)``.
    """
    views = np.asarray(views)
    single = views.ndim == 2
    x = views[None] if single else views
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    mask = None
    if mode == "train":
        mask = dropout_mask((x.shape[0], params.hidden[1]), dropout_rate, dropout_seed, params.dtype)
    cache = forward_batch(params, x, mask)
    if single:
        return cache.logits[0], cache.r[0]
    return cache.logits, cache.r
