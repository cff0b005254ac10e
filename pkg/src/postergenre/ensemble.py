"""Weighted-mean fusion of three base models and simplex grid search over the weights."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import metrics
from .train import top3_ids

BASE_MODELS = ("r", "rt", "rdt")
# metrics the grid search can maximise; HL is minimised
SELECTION_METRICS = ("BA", "FM", "HL")
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class EnsembleWeights:
    alpha: tuple[float, float, float]

    def __post_init__(self):
        a = tuple(float(x) for x in self.alpha)
        if len(a) != 3:
            raise ValueError("ensemble needs exactly three weights")
        if any(not 0.0 <= x <= 1.0 for x in a) or abs(sum(a) - 1.0) > 1e-9:
            raise ValueError(f"weights {a} must lie in [0, 1] and sum to 1")
        object.__setattr__(self, "alpha", a)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text("".join(f"{x!r}\n" for x in self.alpha), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EnsembleWeights":
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if len(lines) != 3:
            raise ValueError(f"{path}: expected 3 weight lines, found {len(lines)}")
        return cls(tuple(float(x) for x in lines))


def ensemble_scores(rho1, rho2, rho3, w: EnsembleWeights) -> np.ndarray:
    """Elementwise a1*rho1 + a2*rho2 + a3*rho3 (works on vectors or (N, delta) matrices)."""
    if not isinstance(w, EnsembleWeights):
        w = EnsembleWeights(tuple(w))
    r1, r2, r3 = (np.asarray(r, dtype=np.float64) for r in (rho1, rho2, rho3))
    if not r1.shape == r2.shape == r3.shape:
        raise ValueError(f"score shapes differ: {r1.shape}, {r2.shape}, {r3.shape}")
    a1, a2, a3 = w.alpha
    return a1 * r1 + a2 * r2 + a3 * r3


def simplex_lattice(step: float) -> Iterator[tuple[float, float, float]]:
    """All (a, b, c) on the probability simplex with coordinates in multiples of ``step``, lexicographic order."""
    k = int(round(1.0 / step))
    if k < 1 or abs(k * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} must divide 1")
    for a in range(k + 1):
        for b in range(k - a + 1):
            c = k - a - b
            yield (a / k, b / k, c / k)


def selection_score(scores: np.ndarray, truth: np.ndarray, metric: str = "BA") -> float:
    """Score a fused prediction by its top-3 selection; larger is better (HL is negated)."""
    pred = np.zeros_like(truth, dtype=np.int64)
    for i, s in enumerate(scores):
        for cid in top3_ids(s):
            pred[i, cid - 1] = 1
    rep = metrics.evaluate(pred, truth)
    if metric == "HL":
        return -float(rep.hamming)
    return rep.macro[metric]


def grid_search_weights(base_scores: Sequence[np.ndarray], truth, step: float = 0.05,
                        metric: str = "BA") -> EnsembleWeights:
    """Exhaustive simplex search; ties go to the lexicographically smallest weights."""
    if metric not in SELECTION_METRICS:
        raise ValueError(f"selection metric must be one of {SELECTION_METRICS}")
    if len(base_scores) != 3:
        raise ValueError("grid search needs scores from exactly three base models")
    truth = np.asarray(truth, dtype=np.int64)
    if truth.ndim != 2 or truth.shape[0] == 0:
        raise ValueError("validation set is empty")
    best, best_val = None, -np.inf
    for alpha in simplex_lattice(step):
        val = selection_score(ensemble_scores(*base_scores, EnsembleWeights(alpha)), truth, metric)
        if best is None or val > best_val + _TIE_TOL:
            best, best_val = alpha, val
    return EnsembleWeights(best)
