"""Poster manifests, multi-hot labels, dataset splits and genre co-occurrence."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_GENRES = (
    "Action", "Adventure", "Animation", "Biography", "Comedy", "Crime", "Drama",
    "Fantasy", "Horror", "Mystery", "Romance", "Sci-Fi", "Thriller",
)

# posters per genre in the reference IMDb corpus, same order as DEFAULT_GENRES
REFERENCE_POSTER_COUNTS = (4985, 3702, 1196, 1076, 4380, 3052, 6609, 1379, 2646, 2285, 2406, 1542, 3455)
REFERENCE_CORPUS_SIZE = 13882
REFERENCE_SPLIT_SIZES = (10942, 1470, 1470)


class ManifestError(ValueError):
    """Malformed manifest or label data."""


@dataclass(frozen=True)
class GenreVocabulary:
    labels: tuple[str, ...] = DEFAULT_GENRES

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValueError("vocabulary needs at least two genres")
        if any(not name for name in labels):
            raise ValueError("genre names must be non-empty")
        if len(set(labels)) != len(labels):
            raise ValueError("genre names must be unique")

    @property
    def size(self) -> int:
        return len(self.labels)

    def name(self, class_id: int) -> str:
        return self.labels[class_id - 1]

    def class_id(self, name: str) -> int:
        return self.labels.index(name) + 1


@dataclass(frozen=True)
class MultiHotLabel:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("multi-hot bits must be 0 or 1")
        if sum(bits) < 1:
            raise ValueError("a label needs at least one genre")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_ids(cls, ids: Iterable[int], delta: int) -> "MultiHotLabel":
        bits = [0] * delta
        for i in ids:
            if not 1 <= i <= delta:
                raise ValueError(f"class id {i} outside 1..{delta}")
            bits[i - 1] = 1
        return cls(tuple(bits))

    @property
    def count(self) -> int:
        return sum(self.bits)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(i + 1 for i, b in enumerate(self.bits) if b)


@dataclass(frozen=True)
class PosterRecord:
    path: str
    movie_id: str
    label: MultiHotLabel
    # class ids in file order; for predictions the first one is the dominant genre
    order: tuple[int, ...] = ()


@dataclass
class PosterManifest:
    records: list[PosterRecord]
    vocab: GenreVocabulary = field(default_factory=GenreVocabulary)
    root: Path | None = None

    @property
    def n(self) -> int:
        return len(self.records)

    def labels_matrix(self) -> np.ndarray:
        """(n, delta) 0/1 matrix of all labels."""
        return np.array([r.label.bits for r in self.records], dtype=np.int64).reshape(self.n, self.vocab.size)

    def resolve(self, record: PosterRecord) -> Path:
        p = Path(record.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def subset(self, indices: Sequence[int]) -> "PosterManifest":
        return PosterManifest([self.records[i] for i in indices], self.vocab, self.root)


def parse_manifest(lines: Iterable[str], vocab: GenreVocabulary, *, source: str = "<manifest>",
                   max_labels: int | None = 3, root: Path | None = None) -> PosterManifest:
    records: list[PosterRecord] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{source}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        path, movie_id, genres = parts
        if not path:
            raise ManifestError(f"{source}:{lineno}: empty image path")
        if path in seen:
            raise ManifestError(f"{source}:{lineno}: duplicate poster path {path!r}")
        tokens = [t.strip() for t in genres.split(";") if t.strip()]
        if not tokens:
            raise ManifestError(f"{source}:{lineno}: poster has no genres")
        ids = []
        for tok in tokens:
            try:
                cid = int(tok)
            except ValueError:
                raise ManifestError(f"{source}:{lineno}: genre id {tok!r} is not an integer") from None
            if not 1 <= cid <= vocab.size:
                raise ManifestError(f"{source}:{lineno}: unknown genre id {cid}")
            if cid in ids:
                raise ManifestError(f"{source}:{lineno}: genre id {cid} repeated")
            ids.append(cid)
        if max_labels is not None and len(ids) > max_labels:
            raise ManifestError(f"{source}:{lineno}: {len(ids)} genres exceeds the cap of {max_labels}")
        seen.add(path)
        records.append(PosterRecord(path, movie_id, MultiHotLabel.from_ids(ids, vocab.size), tuple(ids)))
    if not records:
        raise ManifestError(f"{source}: empty manifest")
    return PosterManifest(records, vocab, root)


def load_manifest(path: str | os.PathLike, vocab: GenreVocabulary | None = None, *,
                  max_labels: int | None = 3) -> PosterManifest:
    """Read a ``path<TAB>movie_id<TAB>g1;g2;g3`` manifest.

    Relative image paths resolve against the manifest's directory.
    """
    vocab = vocab or GenreVocabulary()
    p = Path(path)
    with open(p, encoding="utf-8") as fh:
        return parse_manifest(fh, vocab, source=str(p), max_labels=max_labels, root=p.parent)


def format_record(path: str, movie_id: str, ids: Sequence[int]) -> str:
    return f"{path}\t{movie_id}\t{';'.join(str(i) for i in ids)}"


def write_manifest(path: str | os.PathLike, records: Iterable[PosterRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(format_record(r.path, r.movie_id, r.order or r.label.ids) + "\n")


# -- splitting -----------------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def as_dict(self) -> dict[str, tuple[int, ...]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def split_sizes(n: int, ratios: Sequence[float] = (8, 1, 1)) -> tuple[int, int, int]:
    """Validation and test sizes rounded from the ratio; train takes the rest."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"invalid split ratios {tuple(ratios)}")
    total = float(sum(ratios))
    n_val = int(round(n * ratios[1] / total))
    n_test = int(round(n * ratios[2] / total))
    return n - n_val - n_test, n_val, n_test


def split_dataset(m: PosterManifest, ratios: Sequence[float] = (8, 1, 1), seed: int = 0, *,
                  sizes: Sequence[int] | None = None, min_records: int = 10) -> SplitAssignment:
    """Seeded train/val/test split that tries to place every genre in every split.

    Records are shuffled by ``seed``.  Genres are visited rarest first; for
    each one, any split still lacking a positive takes the next unassigned
    shuffled record carrying it.  Remaining records then fill the splits up
    to their target sizes.  ``sizes`` overrides the ratio-derived targets.
    """
    n = m.n
    if n < min_records:
        raise ValueError(f"need at least {min_records} records to split, got {n}")
    if sizes is None:
        targets = list(split_sizes(n, ratios))
    else:
        targets = [int(s) for s in sizes]
        if len(targets) != 3 or sum(targets) != n or min(targets) < 0:
            raise ValueError(f"split sizes {tuple(sizes)} must be three non-negative counts summing to {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    y = m.labels_matrix()
    assigned = np.full(n, -1, dtype=np.int64)
    filled = [0, 0, 0]
    has_genre = np.zeros((3, y.shape[1]), dtype=bool)

    counts = y.sum(axis=0)
    for g in sorted(range(y.shape[1]), key=lambda j: (counts[j], j)):
        for s in (1, 2, 0):
            if has_genre[s, g] or filled[s] >= targets[s]:
                continue
            for idx in order:
                if assigned[idx] < 0 and y[idx, g]:
                    assigned[idx] = s
                    filled[s] += 1
                    has_genre[s] |= y[idx].astype(bool)
                    break
    for idx in order:
        if assigned[idx] >= 0:
            continue
        for s in (0, 1, 2):
            if filled[s] < targets[s]:
                assigned[idx] = s
                filled[s] += 1
                break
    parts = [tuple(int(i) for i in np.flatnonzero(assigned == s)) for s in range(3)]
    return SplitAssignment(parts[0], parts[1], parts[2], seed)


# -- co-occurrence -------------------------------------------------------------


@dataclass(frozen=True)
class CooccurrenceStats:
    n: int
    single: np.ndarray      # (delta,)   |Z_j|
    pair: np.ndarray        # (delta, delta)   |Z_j & Z_k|
    triple: np.ndarray      # (delta, delta, delta)   |Z_j & Z_k & Z_l|

    @property
    def imbalance(self) -> np.ndarray:
        """Positive / negative ratio per genre (inf when a genre is in every poster)."""
        neg = self.n - self.single
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(neg > 0, self.single / np.where(neg > 0, neg, 1), np.inf)


def cooccurrence_from_labels(y: np.ndarray) -> CooccurrenceStats:
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ValueError("co-occurrence needs a non-empty (n, delta) label matrix")
    single = y.sum(axis=0)
    pair = y.T @ y
    triple = np.einsum("ij,ik,il->jkl", y, y, y)
    return CooccurrenceStats(int(y.shape[0]), single, pair, triple)


def compute_cooccurrence(m: PosterManifest, subset: Sequence[int] | None = None) -> CooccurrenceStats:
    y = m.labels_matrix()
    if subset is not None:
        subset = list(subset)
        if not subset:
            raise ValueError("co-occurrence subset is empty")
        y = y[subset]
    return cooccurrence_from_labels(y)


def write_stats_csv(out_dir: str | os.PathLike, stats: CooccurrenceStats, vocab: GenreVocabulary) -> None:
    """Write pair.csv (delta x delta), singles.csv (count + imbalance rows) and triple.csv (flat)."""
    out = Path(out_dir)
    names = list(vocab.labels)
    with open(out / "pair.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["genre", *names])
        for name, row in zip(names, stats.pair):
            w.writerow([name, *(int(v) for v in row)])
    with open(out / "singles.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stat", *names])
        w.writerow(["count", *(int(v) for v in stats.single)])
        w.writerow(["imbalance", *(repr(float(v)) for v in stats.imbalance)])
    with open(out / "triple.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "k", "l", "count"])
        d = len(names)
        for j in range(d):
            for k in range(d):
                for l in range(d):
                    w.writerow([j + 1, k + 1, l + 1, int(stats.triple[j, k, l])])
