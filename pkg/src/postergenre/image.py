"""Poster image I/O: binary PPM (P6) natively, other codecs through a decode hook."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Callable

import numpy as np

# Maps a file path to an (H, W, C) array scaled to [0, 1].  Used for anything
# that is not a P6 PPM; left as None the loader only understands PPM.
DecodeHook = Callable[[Path], np.ndarray]
decode_hook: DecodeHook | None = None


class ImageFormatError(ValueError):
    pass


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PPM header")
    return buf[start:pos], pos


def decode_ppm(buf: bytes) -> np.ndarray:
    """Decode a binary PNM; returns float64 (H, W, C) in [0, 1]."""
    magic, pos = _read_token(buf, 0)
    channels = {b"P6": 3, b"P5": 1}.get(magic)
    if channels is None:
        raise ImageFormatError(f"unsupported PNM magic {magic!r}")
    w_tok, pos = _read_token(buf, pos)
    h_tok, pos = _read_token(buf, pos)
    m_tok, pos = _read_token(buf, pos)
    w, h, maxval = int(w_tok), int(h_tok), int(m_tok)
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise ImageFormatError("invalid PPM dimensions or maxval")
    pos += 1  # single whitespace byte before the raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    raster = buf[pos:pos + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise ImageFormatError("truncated PPM raster")
    arr = np.frombuffer(raster, dtype=dtype).astype(np.float64).reshape(h, w, channels)
    return arr / maxval


def encode_ppm(img: np.ndarray) -> bytes:
    """Encode an (H, W, 3) array with values in [0, 1] as an 8-bit P6."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ImageFormatError(f"expected (H, W, 3), got {a.shape}")
    q = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = q.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def write_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


def read_image(path: str | os.PathLike) -> np.ndarray:
    p = Path(path)
    try:
        buf = p.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read image {p}: {exc.strerror or exc}") from exc
    if buf[:2] in (b"P6", b"P5"):
        return decode_ppm(buf)
    if decode_hook is None:
        raise ImageFormatError(f"{p}: not a binary PPM and no decode hook is installed")
    return np.asarray(decode_hook(p), dtype=np.float64)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping.

    Same-size input is returned unchanged (as a copy).
    """
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape[:2]
    if (h, w) == (out_h, out_w):
        return a.copy()

    def axis_weights(n_in: int, n_out: int):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bottom = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def load_poster_image(path: str | os.PathLike, target: int) -> np.ndarray:
    """Load a poster as a (target, target, 3) float64 array in [0, 1]."""
    img = read_image(path)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"{path}: expected 3 colour channels, got shape {img.shape}")
    return resize_bilinear(img, target, target)
