"""Asymmetric loss, Adam, early-stopped mini-batch training and top-3 selection."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .data import MultiHotLabel
from .model import GenreModel
from .tensor import Tensor, backward, log, no_grad, relu

logger = logging.getLogger(__name__)

# log() arguments are floored here so a saturated sigmoid (exactly 0.0 or 1.0
# in float64) yields a large finite loss instead of -inf
LOG_FLOOR = 1e-12


class DomainError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class AslConfig:
    gamma_pos: float = 0.0
    gamma_neg: float = 1.0
    margin: float = 0.2

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ValueError("focusing exponents must be non-negative")
        if not 0 <= self.margin < 1:
            raise ValueError("margin must lie in [0, 1)")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    patience: int = 10
    max_epochs: int = 500
    seed: int = 0
    freeze_extractor: bool = False
    # stop as soon as the epoch's training loss drops below this (None: off)
    target_loss: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")


def _check_scores(p: np.ndarray) -> None:
    if not np.all(np.isfinite(p)) or p.min(initial=0.5) < 0.0 or p.max(initial=0.5) > 1.0:
        raise DomainError("scores must be finite probabilities in (0, 1)")


def asl_loss(scores: Tensor, labels, cfg: AslConfig = AslConfig()) -> Tensor:
    """Mean asymmetric loss over samples and genres.

    Per element: -[y (1-p)^g+ log p + (1-y) p_m^g- log(1 - p_m)], p_m = max(p - m, 0).
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != scores.shape:
        raise ValueError(f"labels {y.shape} and scores {scores.shape} differ in shape")
    _check_scores(scores.data)
    floor = Tensor(np.full(scores.shape, LOG_FLOOR))

    pos = log(_floored(scores, floor))
    if cfg.gamma_pos:
        pos = pos * (1.0 - scores).pow(cfg.gamma_pos)
    shifted = relu(scores - cfg.margin) if cfg.margin else scores
    neg = log(_floored(1.0 - shifted, floor))
    if cfg.gamma_neg:
        neg = neg * shifted.pow(cfg.gamma_neg)
    per_elem = pos * y + neg * (1.0 - y)
    return -per_elem.mean()


def _floored(x: Tensor, floor: Tensor) -> Tensor:
    # max(x, floor) with zero gradient below the floor
    if x.data.min(initial=1.0) >= LOG_FLOOR:
        return x
    return relu(x - floor) + floor


def asl_loss_value(scores: np.ndarray, labels, cfg: AslConfig = AslConfig()) -> float:
    with no_grad():
        return float(asl_loss(Tensor(scores), labels, cfg).data)


# -- Adam ----------------------------------------------------------------------------


def adam_update(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
                cfg: OptimizerConfig = OptimizerConfig()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam step; returns (param, m, v) as new arrays."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    return param - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps), m, v


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, cfg: OptimizerConfig = OptimizerConfig()) -> AdamState:
    """Update every parameter holding a gradient in place; parameters without one are left alone."""
    state.t += 1
    for name, p in params.items():
        if p.grad is None:
            continue
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        p.data, state.m[name], state.v[name] = adam_update(p.data, p.grad, m, v, state.t, cfg)
    return state


# -- early stopping & training ----------------------------------------------------------


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad_epochs = 0

    def update(self, value: float) -> bool:
        self.epoch += 1
        if value < self.best:
            self.best = value
            self.best_epoch = self.epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    history: list[tuple[int, float, float]]
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int
    best_state: dict[str, np.ndarray]


def train_model(model: GenreModel, train_images: np.ndarray, train_labels: np.ndarray,
                val_images: np.ndarray, val_labels: np.ndarray, asl: AslConfig = AslConfig(),
                opt: OptimizerConfig = OptimizerConfig(), cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch Adam on ASL with validation-loss early stopping.

    On return the model holds the weights of the best validation epoch.
    """
    train_images = np.asarray(train_images, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.float64)
    n = train_images.shape[0]
    if n == 0 or len(val_images) == 0:
        raise ValueError("training and validation splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    params = {t.name: t for t in model.parameters(cfg.freeze_extractor)}
    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    history: list[tuple[int, float, float]] = []
    best_state = model.state_dict()

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            for p in model.params.values():
                p.zero_grad()
            scores = model.forward(train_images[idx])
            if not np.all(np.isfinite(scores.data)):
                raise TrainingDiverged(f"non-finite scores at epoch {epoch}, batch offset {lo}")
            loss = asl_loss(scores, train_labels[idx], asl)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}, batch offset {lo}")
            backward(loss)
            adam_step(params, state, opt)
            total += value * len(idx)
        train_loss = total / n
        val_scores = model.predict_scores(val_images, cfg.batch_size)
        if not np.all(np.isfinite(val_scores)):
            raise TrainingDiverged(f"non-finite validation scores at epoch {epoch}")
        val_loss = asl_loss_value(val_scores, val_labels, asl)
        history.append((epoch, train_loss, val_loss))
        logger.debug("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        stop = stopper.update(val_loss)
        if stopper.best_epoch == epoch:
            best_state = model.state_dict()
        if stop or (cfg.target_loss is not None and train_loss < cfg.target_loss):
            break

    model.load_state_dict(best_state)
    return TrainResult(history, stopper.best_epoch, stopper.best, history[-1][0], best_state)


def write_history(path: str | os.PathLike, history: list[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in history:
            w.writerow([epoch, repr(tr), repr(va)])


# -- top-3 -----------------------------------------------------------------------------


def top3_ids(scores) -> tuple[int, int, int]:
    """Class ids (1-based) of the three largest scores, highest first; ties go to the lower id."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 3:
        raise ValueError("top-3 selection needs a score vector with at least 3 genres")
    order = np.argsort(-s, kind="stable")[:3]
    return tuple(int(i) + 1 for i in order)


def top3_predict(scores) -> MultiHotLabel:
    s = np.asarray(scores)
    return MultiHotLabel.from_ids(top3_ids(s), s.size)
