"""Synthetic posters with a separable visual signal per genre.

Genre g paints patch slot g (row-major, wrapping if there are more genres
than patches) with a genre-specific colour over a dim noise background, so
each label is recoverable from the image.
"""

from __future__ import annotations

import colorsys
import os
from pathlib import Path

import numpy as np

from .data import DEFAULT_GENRES, format_record
from .image import write_ppm


def genre_colour(g: int, n_genres: int) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(g / n_genres, 0.9, 1.0))


def random_labels(n: int, n_genres: int, rng: np.random.Generator, max_labels: int = 3) -> np.ndarray:
    """(n, n_genres) multi-hot labels with 1..max_labels genres each; every genre used when n allows."""
    y = np.zeros((n, n_genres), dtype=np.int64)
    for i in range(n):
        k = int(rng.integers(1, min(max_labels, n_genres) + 1))
        y[i, rng.choice(n_genres, size=k, replace=False)] = 1
    for g in range(min(n, n_genres)):
        if not y[:, g].any():
            y[g] = 0
            y[g, g] = 1
    return y


def render_poster(bits, w_z: int, w_p: int, rng: np.random.Generator, noise: float = 0.1) -> np.ndarray:
    n_genres = len(bits)
    grid = w_z // w_p
    img = rng.uniform(0.0, noise, size=(w_z, w_z, 3))
    for g in np.flatnonzero(bits):
        slot = g % (grid * grid)
        r, c = divmod(slot, grid)
        img[r * w_p:(r + 1) * w_p, c * w_p:(c + 1) * w_p] = genre_colour(int(g), n_genres)
    return img


def make_synthetic_posters(n: int, n_genres: int = 4, w_z: int = 64, w_p: int = 16, seed: int = 0,
                           max_labels: int = 3) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    y = random_labels(n, n_genres, rng, max_labels)
    images = np.stack([render_poster(bits, w_z, w_p, rng) for bits in y])
    return images, y


def write_synthetic_dataset(out_dir: str | os.PathLike, n: int, n_genres: int = len(DEFAULT_GENRES),
                            w_z: int = 64, w_p: int = 16, seed: int = 0,
                            posters_per_movie: int = 1) -> Path:
    """Write PPM posters plus ``manifest.tsv``; returns the manifest path."""
    out = Path(out_dir)
    (out / "posters").mkdir(parents=True, exist_ok=True)
    images, y = make_synthetic_posters(n, n_genres, w_z, w_p, seed)
    lines = []
    for i, (img, bits) in enumerate(zip(images, y)):
        rel = f"posters/p{i:05d}.ppm"
        write_ppm(out / rel, img)
        ids = [int(g) + 1 for g in np.flatnonzero(bits)]
        lines.append(format_record(rel, f"m{i // posters_per_movie:05d}", ids))
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
