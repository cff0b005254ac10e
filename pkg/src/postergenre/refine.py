"""Genre-count refinement from co-occurrence statistics.

The dominant genre is the argmax of the confidence vector.  A second genre k
is added when max_k rho_k * P~(k|j) exceeds ``tau``; a third genre l when
max_l rho_l * P~(l|j) * P~(l|j,k) exceeds ``tau_prime``.  P~ are conditional
probabilities renormalised over the genres still eligible.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import CooccurrenceStats


@dataclass(frozen=True)
class RefineConfig:
    tau: float = 0.3
    tau_prime: float = 0.03

    def __post_init__(self):
        if not (0.0 <= self.tau <= 1.0 and 0.0 <= self.tau_prime <= 1.0):
            raise ValueError("thresholds must lie in [0, 1]")


@dataclass(frozen=True)
class ConditionalTables:
    p2: np.ndarray        # [j, k]    P(k | j)
    p2_norm: np.ndarray   # [j, k]    normalised over k != j
    p3: np.ndarray        # [j, k, l] P(l | j, k)
    p3_norm: np.ndarray   # [j, k, l] normalised over l not in {j, k}

    @property
    def n_genres(self) -> int:
        return self.p2.shape[0]


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = num.astype(np.float64)
    den = np.broadcast_to(den, num.shape).astype(np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def build_conditional_tables(stats: CooccurrenceStats) -> ConditionalTables:
    single, pair, triple = stats.single, stats.pair, stats.triple
    d = single.shape[0]
    p2 = _safe_div(pair, single[:, None])
    p3 = _safe_div(triple, pair[:, :, None])

    eye = np.eye(d, dtype=bool)
    off = np.where(eye, 0.0, p2)
    p2_norm = _safe_div(off, off.sum(axis=1, keepdims=True))

    # exclude l == j and l == k from the third-genre normalisation
    excl = eye[:, None, :] | eye[None, :, :]
    off3 = np.where(excl, 0.0, p3)
    p3_norm = _safe_div(off3, off3.sum(axis=2, keepdims=True))
    return ConditionalTables(p2, p2_norm, p3, p3_norm)


@dataclass(frozen=True)
class GenrePrediction:
    genres: tuple[int, ...]           # 1-based class ids, dominant first
    second_score: float | None = None
    third_score: float | None = None

    def bits(self, delta: int) -> np.ndarray:
        out = np.zeros(delta, dtype=np.int64)
        out[[g - 1 for g in self.genres]] = 1
        return out


def _argmax_excluding(values: np.ndarray, excluded: Sequence[int]) -> tuple[int, float]:
    v = values.astype(np.float64).copy()
    v[list(excluded)] = -np.inf
    i = int(np.argmax(v))  # first maximum -> lowest class id
    return i, float(v[i])


def refine_prediction(rho, tables: ConditionalTables, cfg: RefineConfig = RefineConfig()) -> GenrePrediction:
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (tables.n_genres,):
        raise ValueError(f"confidence vector of shape {rho.shape} does not match {tables.n_genres} genres")
    j = int(np.argmax(rho))
    k, s2 = _argmax_excluding(rho * tables.p2_norm[j], [j])
    if not s2 > cfg.tau:
        return GenrePrediction((j + 1,), s2)
    if tables.n_genres < 3:
        return GenrePrediction((j + 1, k + 1), s2)
    l, s3 = _argmax_excluding(rho * tables.p2_norm[j] * tables.p3_norm[j, k], [j, k])
    if not s3 > cfg.tau_prime:
        return GenrePrediction((j + 1, k + 1), s2, s3)
    return GenrePrediction((j + 1, k + 1, l + 1), s2, s3)


def hit_ratio(predictions: Sequence, truths) -> float:
    """Fraction of samples whose dominant (first) predicted genre is a true genre.

    ``predictions`` holds GenrePrediction objects or plain id sequences with
    the dominant genre first; ``truths`` is an (N, delta) 0/1 matrix or a list
    of MultiHotLabel.
    """
    if len(predictions) == 0:
        raise ValueError("hit ratio of an empty set is undefined")
    if len(predictions) != len(truths):
        raise ValueError("predictions and ground truth differ in length")
    hits = 0
    for pred, truth in zip(predictions, truths):
        genres = pred.genres if isinstance(pred, GenrePrediction) else tuple(pred)
        bits = truth.bits if hasattr(truth, "bits") else truth
        hits += int(bits[genres[0] - 1] == 1)
    return hits / len(predictions)


# -- CSV interchange ---------------------------------------------------------------------

_TABLE_FILES = {"p2": "p2.csv", "p2_norm": "p2_norm.csv", "p3": "p3.csv", "p3_norm": "p3_norm.csv"}


def save_tables(out_dir: str | os.PathLike, tables: ConditionalTables, genres: Sequence[str]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for key in ("p2", "p2_norm"):
        with open(out / _TABLE_FILES[key], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["given", *genres])
            for name, row in zip(genres, getattr(tables, key)):
                w.writerow([name, *(repr(float(v)) for v in row)])
    for key in ("p3", "p3_norm"):
        arr = getattr(tables, key)
        d = arr.shape[0]
        with open(out / _TABLE_FILES[key], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["j", "k", "l", "value"])
            for j in range(d):
                for k in range(d):
                    for l in range(d):
                        w.writerow([j + 1, k + 1, l + 1, repr(float(arr[j, k, l]))])


def load_tables(in_dir: str | os.PathLike) -> ConditionalTables:
    src = Path(in_dir)
    mats = {}
    for key in ("p2", "p2_norm"):
        with open(src / _TABLE_FILES[key], newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        mats[key] = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    d = mats["p2"].shape[0]
    for key in ("p3", "p3_norm"):
        arr = np.zeros((d, d, d))
        with open(src / _TABLE_FILES[key], newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        for j, k, l, v in rows[1:]:
            arr[int(j) - 1, int(k) - 1, int(l) - 1] = float(v)
        mats[key] = arr
    return ConditionalTables(**mats)
