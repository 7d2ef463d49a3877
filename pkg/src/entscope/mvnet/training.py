"""Minibatch training loop, evaluation metrics and history tables."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .._seeds import derive_seed
from .losses import Batch, LossConfig, loss_and_grad, mine_triplets, softmax
from .network import H1_DEFAULT, H2_DEFAULT, dropout_mask, forward_batch, init_model
from .optim import AdamState, PlateauScheduler, adam_step, clip_gradients

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "ce", "cont", "lr", "val_acc")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    clip_norm: float = 1.0
    epochs: int = 50
    batch_size: int = 64
    dropout: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_factor: float = 0.5
    lr_patience: int = 5
    min_lr: float = 1e-5
    hidden: tuple = (H1_DEFAULT, H2_DEFAULT)
    float32: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.lr, self.clip_norm, self.batch_size, self.epochs, self.min_lr) <= 0:
            raise ValueError(f"training hyperparameters must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def dtype(self):
        return np.float32 if self.float32 else np.float64


@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class
    labels: list
    predictions: np.ndarray = None

    @property
    def total(self):
        return int(self.confusion.sum())

    @property
    def per_class_precision(self):
        """``TP / (TP + FP)`` per label, None where nothing was predicted."""
        out = {}
        for c, label in enumerate(self.labels):
            predicted = self.confusion[:, c].sum()
            out[label] = None if predicted == 0 else float(self.confusion[c, c] / predicted)
        return out

    @property
    def mean_precision(self):
        vals = [p for p in self.per_class_precision.values() if p is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def present_classes(self):
        """Class ids with at least one true sample."""
        return [int(c) for c in np.flatnonzero(self.confusion.sum(axis=1))]


def predict_proba(params, x, batch_size=256):
    """Eval-mode class probabilities for ``x`` of shape ``(N, K, D)``."""
    x = np.asarray(x)
    out = []
    for start in range(0, len(x), batch_size):
        chunk = x[start:start + batch_size].astype(params.dtype, copy=False)
        out.append(softmax(forward_batch(params, chunk).logits))
    return np.concatenate(out)


def evaluate(params, x, y, labels=None):
    """Accuracy, confusion matrix and per-class precision (argmax, ties to
    the lowest class id)."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate an empty set")
    c = params.num_classes
    pred = np.argmax(predict_proba(params, x), axis=1)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    labels = list(labels) if labels is not None else [str(i) for i in range(c)]
    return Metrics(float(np.trace(confusion) / len(y)), confusion, labels, pred)


@dataclass
class TrainResult:
    params: object
    history: list = field(default_factory=list)
    best_epoch: int = 0

    def history_table(self, sep="\t"):
        return history_table(self.history, sep)


def history_table(history, sep="\t"):
    lines = [sep.join(HISTORY_COLUMNS)]
    for h in history:
        lines.append(sep.join(str(h[c]) if c == "epoch" else repr(float(h[c])) for c in HISTORY_COLUMNS))
    return "\n".join(lines) + "\n"


def train(train_set, val_set, cfg=TrainConfig(), loss_cfg=LossConfig(), n=None, num_classes=None,
          params=None, callback=None):
    """Fit a model; returns the parameters of the best validation epoch.

    ``train_set`` and ``val_set`` are ``(x, y)`` pairs with ``x`` shaped
    ``(N, K, D)``. ``n`` is only used to size a fresh model and defaults to
    the width implied by ``D``.
    """
    xt, yt = np.asarray(train_set[0]).astype(cfg.dtype, copy=False), np.asarray(train_set[1])
    xv, yv = np.asarray(val_set[0]).astype(cfg.dtype, copy=False), np.asarray(val_set[1])
    if len(yt) == 0 or len(yv) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if xt.shape[1:] != xv.shape[1:]:
        raise ValueError(f"train/val view shapes differ: {xt.shape[1:]} vs {xv.shape[1:]}")
    if params is None:
        c = int(num_classes if num_classes is not None else max(yt.max(), yv.max()) + 1)
        params = init_model(n or 1, c, seed=cfg.seed, hidden=cfg.hidden,
                            input_dim=xt.shape[2], dtype=cfg.dtype)
    params = params.astype(cfg.dtype)
    adam = AdamState.zeros(params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    sched = PlateauScheduler(cfg.lr, cfg.lr_factor, cfg.lr_patience, cfg.min_lr)
    result = TrainResult(params.copy())
    best_acc = -1.0
    h2 = params.hidden[1]

    for epoch in range(cfg.epochs):
        lr = sched.lr
        order = np.random.default_rng(derive_seed(cfg.seed, 40, epoch)).permutation(len(yt))
        sums = np.zeros(3)
        for b, start in enumerate(range(0, len(yt), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            mask = dropout_mask((len(idx), h2), cfg.dropout, derive_seed(cfg.seed, 41, epoch, b), cfg.dtype)
            batch = Batch(xt[idx], yt[idx], mask, mine_triplets(yt[idx], derive_seed(cfg.seed, 42, epoch, b)))
            value, grads = loss_and_grad(params, batch, loss_cfg)
            if not math.isfinite(value.total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, batch {b}")
            grads = clip_gradients(grads, cfg.clip_norm)
            adam_step(params, adam, grads, lr)
            sums += np.array([value.total, value.ce, value.cont]) * len(idx)
        means = sums / len(yt)
        val_acc = evaluate(params, xv, yv).accuracy
        entry = {"epoch": epoch + 1, "train_loss": float(means[0]), "ce": float(means[1]), "cont": float(means[2]),
                 "lr": lr, "val_acc": val_acc}
        result.history.append(entry)
        log.debug("epoch %d loss=%.5f val_acc=%.4f lr=%g", epoch + 1, means[0], val_acc, lr)
        if val_acc >= best_acc:
            best_acc = val_acc
            result.params = params.copy()
            result.best_epoch = epoch + 1
        sched.step(val_acc)
        if callback is not None:
            callback(entry)
    return result
