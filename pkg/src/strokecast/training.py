"""Focal-loss training: SGD with momentum, cosine-annealed lr, early stopping.

The epoch loop is a single logical writer over the model parameters.  All
randomness (shuffling, augmentation, dropout) derives from integer seed
tuples, so a fixed config reproduces training bit-for-bit in single-threaded
execution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, ParameterError, TrainingDivergedError
from .layers import softmax_rows
from .tensor import as_array

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12

# count of probability clamps applied before taking logs
numerical_floor_events = 0

# integer tags for deriving independent rng streams from (seed, epoch, tag, ...)
_RNG_SHUFFLE, _RNG_AUGMENT, _RNG_DROPOUT, _RNG_SPLIT = 0, 1, 2, 3


def derive_rng(*key: int) -> np.random.Generator:
    """Deterministic generator for a tuple of non-negative ints."""
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


@dataclass
class TrainConfig:
    """Optimization protocol; defaults follow the reference training recipe."""

    batch_size: int = 8
    max_epochs: int = 300
    patience: int = 50
    momentum: float = 0.9
    lr_init: float = 3e-5
    gamma: float = 2.0
    alpha: np.ndarray | None = None  # per-class weights; None -> 1 - class frequency
    seed: int = 0
    validation_fraction: float = 0.1
    augment: bool = True

    def validate(self) -> None:
        problems = []
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.gamma < 0:
            problems.append(f"gamma must be >= 0, got {self.gamma}")
        if self.alpha is not None:
            a = np.asarray(self.alpha, dtype=np.float64)
            if a.ndim != 1 or not ((a >= 0) & (a <= 1)).all():
                problems.append("alpha must be a vector with entries in [0, 1]")
        if not 0.0 < self.validation_fraction < 0.5:
            problems.append(
                f"validation_fraction must be in (0, 0.5), got {self.validation_fraction}"
            )
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.seed < 0:
            problems.append(f"seed must be non-negative, got {self.seed}")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "alpha":
                v = "" if v is None else ",".join(repr(float(x)) for x in np.asarray(v))
            out[f.name] = str(v)
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name].strip()
            if f.name == "alpha":
                kwargs[f.name] = None if raw == "" else np.array([float(x) for x in raw.split(",")])
            elif f.name in ("batch_size", "max_epochs", "patience", "seed"):
                kwargs[f.name] = int(raw)
            elif f.name == "augment":
                kwargs[f.name] = raw.lower() in ("true", "1", "yes")
            else:
                kwargs[f.name] = float(raw)
        return cls(**kwargs)


def focal_loss(probs, labels, alpha, gamma: float) -> tuple[float, np.ndarray]:
    """Mean focal loss and its analytic gradient w.r.t. the pre-softmax logits.

    With gamma = 0 and alpha identically 1 this reduces exactly to mean
    cross-entropy.  True-class probabilities are clamped to 1e-12 before the
    log; each clamp is counted as a numerical-floor event.
    """
    global numerical_floor_events
    p = as_array(probs)
    y = np.asarray(labels, dtype=np.int64)
    n, c = p.shape
    if y.min() < 0 or y.max() >= c:
        raise ParameterError(f"labels must lie in [0, {c - 1}]")
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 0:
        a = np.full(c, float(a))
    if a.shape != (c,):
        raise ParameterError(f"alpha must be scalar or length-{c}, got shape {a.shape}")

    rows = np.arange(n)
    pt = p[rows, y]
    floored = pt < LOG_FLOOR
    if floored.any():
        numerical_floor_events += int(floored.sum())
        log.debug("focal loss clamped %d probabilities to %g", int(floored.sum()), LOG_FLOOR)
    pt_safe = np.maximum(pt, LOG_FLOOR)
    log_pt = np.log(pt_safe)
    one_minus = 1.0 - pt
    a_y = a[y]

    loss = float(np.mean(-a_y * one_minus ** gamma * log_pt))

    # d(loss_i)/d(logit_c) = a_y * (delta_{c,y} - p_c) * g_i / N  where
    # g_i = gamma * p_t * (1-p_t)^(gamma-1) * log(p_t) - (1-p_t)^gamma;
    # the p_t factor cancels the 1/p_t pole so g stays bounded as p_t -> 0.
    pow_g = one_minus ** gamma
    if gamma == 0.0:
        g = -pow_g
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            pow_gm1 = np.where(one_minus > 0.0, one_minus ** (gamma - 1.0), 0.0)
        g = gamma * pt * pow_gm1 * log_pt - pow_g
    delta = np.zeros_like(p)
    delta[rows, y] = 1.0
    grad_logits = (a_y * g)[:, None] * (delta - p) / n
    return loss, grad_logits


def default_alpha(class_counts) -> np.ndarray:
    """Per-class weights 1 - frequency: rarer classes weigh more."""
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ParameterError("class counts must sum to a positive number")
    return 1.0 - counts / total


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Half-cosine decay from lr_init at epoch 0 to zero at max_epochs."""
    if not 0 <= epoch <= config.max_epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {config.max_epochs}]")
    return 0.5 * config.lr_init * (1.0 + math.cos(math.pi * epoch / config.max_epochs))


class SGDMomentum:
    """Classical momentum: v <- m*v + g, w <- w - lr*v (no dampening/Nesterov)."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}
        self.epoch = 0
        self.lr = 0.0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float, epoch: int | None = None) -> None:
        for name, w in params.items():
            g = grads[name]
            if np.isnan(g).any():
                raise TrainingDivergedError(
                    f"NaN gradient in {name!r}" + (f" at epoch {epoch}" if epoch is not None else "")
                )
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(w)
            v = self.momentum * v + g
            self.velocity[name] = v
            w -= lr * v
        self.lr = lr
        if epoch is not None:
            self.epoch = epoch


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def history_to_csv(history: list[HistoryRow]) -> str:
    lines = ["epoch,train_loss,val_loss,lr"]
    for r in history:
        lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.lr!r}")
    return "\n".join(lines) + "\n"


def stratified_indices(labels: np.ndarray, fraction: float, rng: np.random.Generator,
                       lone_to_first: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Split index arrays (first, second) holding ~fraction of each class first.

    A class with a single sample goes to the first group.
    """
    labels = np.asarray(labels)
    first, second = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        if len(idx) == 1 and lone_to_first:
            n_first = 1
        else:
            n_first = int(round(fraction * len(idx)))
            n_first = min(max(n_first, 0), len(idx))
        first.extend(idx[:n_first])
        second.extend(idx[n_first:])
    return np.sort(np.array(first, dtype=np.int64)), np.sort(np.array(second, dtype=np.int64))


def _batched(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield np.arange(start, min(start + batch_size, n))


def _collate(samples):
    vols = [s[0] for s in samples]
    metas = np.concatenate([s[1] for s in samples], axis=0)
    ys = np.array([s[2] for s in samples], dtype=np.int64)
    x = None if vols[0] is None else np.concatenate(vols, axis=0)
    return x, metas, ys


def _dataset_loss(model, data, indices, alpha, gamma: float, batch_size: int) -> float:
    total, count = 0.0, 0
    for batch in _batched(len(indices), batch_size):
        rows = indices[batch]
        x, meta, y = _collate([data.sample(i, epoch=0, training=False) for i in rows])
        probs = softmax_rows(model.forward_logits(x, meta, training=False))
        loss, _ = focal_loss(probs, y, alpha, gamma)
        total += loss * len(rows)
        count += len(rows)
    return total / count


def train(model, data, config: TrainConfig):
    """Run the epoch loop and return (best_params, history).

    `data` is a sample set over the training split (see data.SampleSet); a
    stratified validation carve-out of config.validation_fraction monitors
    early stopping.  Best parameters are deep copies from the epoch with the
    lowest validation loss.
    """
    config.validate()
    labels = np.asarray(data.labels)
    if len(labels) == 0:
        raise ConfigError("empty training set")

    rng_split = derive_rng(config.seed, 0, _RNG_SPLIT)
    val_idx, train_idx = stratified_indices(labels, config.validation_fraction, rng_split,
                                            lone_to_first=False)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ConfigError(
            f"validation carve-out produced empty split "
            f"(train {len(train_idx)}, val {len(val_idx)})"
        )

    if config.alpha is not None:
        alpha = np.asarray(config.alpha, dtype=np.float64)
    else:
        counts = np.bincount(labels[train_idx], minlength=model.num_classes)
        alpha = default_alpha(counts)

    params = model.param_dict()
    optimizer = SGDMomentum(config.momentum)
    history: list[HistoryRow] = []
    best_val = math.inf
    best_epoch = 0
    best_params = {k: v.copy() for k, v in params.items()}

    for epoch in range(1, config.max_epochs + 1):
        lr = cosine_lr(epoch - 1, config)
        order = derive_rng(config.seed, epoch, _RNG_SHUFFLE).permutation(len(train_idx))
        shuffled = train_idx[order]

        running, seen = 0.0, 0
        for bi, batch in enumerate(_batched(len(shuffled), config.batch_size)):
            rows = shuffled[batch]
            samples = [data.sample(i, epoch=epoch, training=config.augment) for i in rows]
            x, meta, y = _collate(samples)
            drop_rng = derive_rng(config.seed, epoch, _RNG_DROPOUT, bi)
            logits = model.forward_logits(x, meta, training=True, rng=drop_rng)
            probs = softmax_rows(logits)
            loss, grad_logits = focal_loss(probs, y, alpha, config.gamma)
            grads = model.backward(grad_logits)
            optimizer.step(params, grads, lr, epoch=epoch)
            running += loss * len(rows)
            seen += len(rows)

        train_loss = running / seen
        val_loss = _dataset_loss(model, data, val_idx, alpha, config.gamma, config.batch_size)
        history.append(HistoryRow(epoch, train_loss, val_loss, lr))

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
        if epoch - best_epoch >= config.patience:
            break

    return best_params, history
