"""Composite objective: cross-entropy plus a weighted triplet cosine hinge."""

from dataclasses import dataclass

import numpy as np

from .._seeds import derive_seed
from .network import ModelParams, forward_batch


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.003
    margin: float = 1.0
    eps: float = 1e-8

    def __post_init__(self):
        if self.lam < 0 or self.margin < 0 or self.eps <= 0:
            raise ValueError(f"invalid loss config {self}")


def softmax(logits):
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, class_id):
    """``-log softmax(logits)[class_id]``; vectorized over leading axes."""
    logp = log_softmax(logits)
    class_id = np.asarray(class_id)
    if logp.ndim == 1:
        return float(-logp[int(class_id)])
    return -np.take_along_axis(logp, class_id[..., None], axis=-1)[..., 0]


def cosine_similarity(x, y, eps=1e-8):
    """``x.y / (|x||y| + eps)`` along the last axis."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError("cosine_similarity needs equal-length vectors")
    num = np.sum(x * y, axis=-1)
    den = np.linalg.norm(x, axis=-1) * np.linalg.norm(y, axis=-1) + eps
    out = num / den
    return float(out) if np.ndim(out) == 0 else out


def _cosine_grads(x, y, eps):
    """Row-wise cosine values and their gradients w.r.t. ``x`` and ``y``."""
    s = np.sum(x * y, axis=-1, keepdims=True)
    nx = np.linalg.norm(x, axis=-1, keepdims=True)
    ny = np.linalg.norm(y, axis=-1, keepdims=True)
    den = nx * ny + eps
    # d|x|/dx = x/|x|, taken as 0 at the origin
    ux = np.divide(x, nx, out=np.zeros_like(x), where=nx > 0)
    uy = np.divide(y, ny, out=np.zeros_like(y), where=ny > 0)
    c = s / den
    gx = y / den - s / den ** 2 * ny * ux
    gy = x / den - s / den ** 2 * nx * uy
    return c[:, 0], gx, gy


@dataclass
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self):
        return len(self.anchors)

    @property
    def valid(self):
        """False when no anchor had both a positive and a negative."""
        return len(self.anchors) > 0


def contrastive_loss(t, margin=1.0, eps=1e-8):
    """Mean of ``max(0, m - cos(a, p) + cos(a, n))``; 0 for an empty batch."""
    if not t.valid:
        return 0.0
    cp = cosine_similarity(t.anchors, t.positives, eps)
    cn = cosine_similarity(t.anchors, t.negatives, eps)
    return float(np.mean(np.maximum(0.0, margin - cp + cn)))


def mine_triplets(labels, seed):
    """Index triples ``(anchor, positive, negative)`` within one minibatch.

    Every sample is an anchor once; its positive is drawn uniformly from the
    other same-label samples and its negative from the different-label ones.
    Anchors lacking either are skipped.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(derive_seed(seed, 30))
    a, p, n = [], [], []
    for i, lab in enumerate(labels):
        same = np.flatnonzero(labels == lab)
        same = same[same != i]
        diff = np.flatnonzero(labels != lab)
        if len(same) == 0 or len(diff) == 0:
            continue
        a.append(i)
        p.append(same[rng.integers(len(same))])
        n.append(diff[rng.integers(len(diff))])
    return np.array(a, dtype=np.int64), np.array(p, dtype=np.int64), np.array(n, dtype=np.int64)


@dataclass
class Batch:
    """Inputs to :func:`total_loss` / :func:`backward`.

    ``mask`` is the dropout mask (None means eval mode); ``triplets`` holds
    the mined index triples, e.g. from :func:`mine_triplets`.
    """

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray = None
    triplets: tuple = None


@dataclass
class LossValue:
    total: float
    ce: float
    cont: float
    n_triplets: int


def _triplet_index(batch):
    if batch.triplets is None:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    return batch.triplets


def loss_and_grad(params, batch, cfg=LossConfig(), need_grad=True):
    """Composite loss of a batch and, optionally, its exact gradients."""
    cache = forward_batch(params, batch.x, batch.mask)
    y = np.asarray(batch.y)
    bsz = len(y)
    ce = float(np.mean(cross_entropy(cache.logits, y)))

    ia, ip, ineg = _triplet_index(batch)
    r = cache.r
    cont = 0.0
    if len(ia):
        cp, gap, gpa = _cosine_grads(r[ia], r[ip], cfg.eps)
        cn, gan, gna = _cosine_grads(r[ia], r[ineg], cfg.eps)
        hinge = cfg.margin - cp + cn
        cont = float(np.mean(np.maximum(0.0, hinge)))
    value = LossValue(ce + cfg.lam * cont, ce, cont, len(ia))
    if not need_grad:
        return value, None

    dlogits = softmax(cache.logits)
    dlogits[np.arange(bsz), y] -= 1.0
    dlogits /= bsz
    r_drop = r if cache.mask is None else r * cache.mask
    gW3 = dlogits.T @ r_drop
    gb3 = dlogits.sum(axis=0)
    dr = dlogits @ params.W3
    if cache.mask is not None:
        dr = dr * cache.mask

    if len(ia) and cfg.lam > 0:
        # hinge subgradient is 0 at the kink
        active = (hinge > 0).astype(r.dtype)[:, None] * (cfg.lam / len(ia))
        np.add.at(dr, ia, active * (gan - gap))
        np.add.at(dr, ip, -active * gpa)
        np.add.at(dr, ineg, active * gna)

    dr_pre = dr * (cache.r_pre > 0)
    gW2 = dr_pre.T @ cache.pooled
    gb2 = dr_pre.sum(axis=0)
    dpooled = dr_pre @ params.W2
    k = cache.x.shape[1]
    de_pre = (dpooled[:, None, :] / k) * (cache.e_pre > 0)
    gW1 = de_pre.reshape(-1, de_pre.shape[2]).T @ cache.x.reshape(-1, cache.x.shape[2])
    gb1 = de_pre.sum(axis=(0, 1))
    grads = ModelParams(gW1.astype(params.dtype), gb1.astype(params.dtype),
                        gW2.astype(params.dtype), gb2.astype(params.dtype),
                        gW3.astype(params.dtype), gb3.astype(params.dtype))
    return value, grads


def total_loss(params, batch, cfg=LossConfig()):
    return loss_and_grad(params, batch, cfg, need_grad=False)[0].total


def backward(params, batch, cfg=LossConfig()):
    return loss_and_grad(params, batch, cfg)[1]
