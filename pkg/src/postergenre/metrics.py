"""Macro-averaged multi-label metrics and their text/CSV reports.

Ratios that come out 0/0 for a genre (say, precision when the genre is never
predicted) count as 0 and are still averaged.  The macro F-measure is the
mean of per-genre F1 scores, not the F1 of macro precision and recall.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np


def _as_bits(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.int64)
    if a.ndim != 2:
        raise ValueError(f"expected an (N, delta) 0/1 matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class GenreConfusion:
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.tn[0] + self.fn[0])


def confusion_per_genre(pred, truth) -> GenreConfusion:
    p, t = _as_bits(pred), _as_bits(truth)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} differs from ground truth {t.shape}")
    if p.shape[0] == 0:
        raise ValueError("cannot evaluate an empty set")
    return GenreConfusion(
        tp=((p == 1) & (t == 1)).sum(axis=0),
        fp=((p == 1) & (t == 0)).sum(axis=0),
        tn=((p == 0) & (t == 0)).sum(axis=0),
        fn=((p == 0) & (t == 1)).sum(axis=0),
    )


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = num.astype(np.float64)
    den = den.astype(np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


@dataclass(frozen=True)
class MetricsReport:
    """Per-genre and macro metrics; P/R/Sp/BA/FM in percent, HL as a fraction."""

    precision: np.ndarray
    recall: np.ndarray
    specificity: np.ndarray
    balanced_accuracy: np.ndarray
    f_measure: np.ndarray
    hamming: float | None = None
    tag: str = ""

    @property
    def macro(self) -> dict[str, float]:
        return {
            "P": float(np.mean(self.precision)),
            "R": float(np.mean(self.recall)),
            "Sp": float(np.mean(self.specificity)),
            "BA": float(np.mean(self.balanced_accuracy)),
            "FM": float(np.mean(self.f_measure)),
        }


def macro_report(conf: GenreConfusion, hamming: float | None = None, tag: str = "") -> MetricsReport:
    p = _ratio(conf.tp, conf.tp + conf.fp)
    r = _ratio(conf.tp, conf.tp + conf.fn)
    sp = _ratio(conf.tn, conf.tn + conf.fp)
    f1 = _ratio(2.0 * p * r, p + r)
    return MetricsReport(100 * p, 100 * r, 100 * sp, 100 * (r + sp) / 2, 100 * f1, hamming, tag)


def hamming_loss(pred, truth) -> float:
    p, t = _as_bits(pred), _as_bits(truth)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} differs from ground truth {t.shape}")
    if p.size == 0:
        raise ValueError("cannot evaluate an empty set")
    return float(np.count_nonzero(p != t)) / p.size


def evaluate(pred, truth, tag: str = "") -> MetricsReport:
    return macro_report(confusion_per_genre(pred, truth), hamming_loss(pred, truth), tag)


def partition_by_label_count(truth, max_count: int = 3) -> dict[int, np.ndarray]:
    """Sample indices grouped by how many true genres each sample has (1..max_count)."""
    counts = _as_bits(truth).sum(axis=1)
    return {k: np.flatnonzero(counts == k) for k in range(1, max_count + 1)}


# -- report rendering ------------------------------------------------------------------

_COLS = ("P", "R", "Sp", "BA", "FM")


def report_rows(report: MetricsReport, genres) -> list[list[str]]:
    rows = []
    per = (report.precision, report.recall, report.specificity, report.balanced_accuracy, report.f_measure)
    for j, name in enumerate(genres):
        rows.append([report.tag, name, *(f"{col[j]:.2f}" for col in per), ""])
    macro = report.macro
    hl = "" if report.hamming is None else f"{report.hamming:.5f}"
    rows.append([report.tag, "macro", *(f"{macro[c]:.2f}" for c in _COLS), hl])
    return rows


CSV_HEADER = ["partition", "genre", *_COLS, "HL"]


def write_reports_csv(path: str | os.PathLike, reports: list[MetricsReport], genres) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rep in reports:
            w.writerows(report_rows(rep, genres))


def format_table(report: MetricsReport, genres) -> str:
    rows = [["genre", *_COLS, "HL"]] + [r[1:] for r in report_rows(report, genres)]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    buf = io.StringIO()
    if report.tag:
        buf.write(f"[{report.tag}]\n")
    for i, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        buf.write("  ".join(cells).rstrip() + "\n")
        if i == 0 or i == len(rows) - 2:
            buf.write("-" * (sum(widths) + 2 * (len(widths) - 1)) + "\n")
    return buf.getvalue()


def heatmap_lines(paths, truth, scores, genres) -> list[str]:
    """Per-sample ground-truth bits next to predicted scores, one sample per row (tab separated)."""
    truth = _as_bits(truth)
    scores = np.asarray(scores, dtype=np.float64)
    header = ["path", *(f"true:{g}" for g in genres), *(f"score:{g}" for g in genres)]
    lines = ["\t".join(header)]
    for path, t, s in zip(paths, truth, scores):
        lines.append("\t".join([path, *(str(int(b)) for b in t), *(f"{v:.4f}" for v in s)]))
    return lines
