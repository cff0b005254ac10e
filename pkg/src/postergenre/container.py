"""Self-describing array container used for checkpoints.

Layout (UTF-8 header, then binary payload)::

    #tensor-container v1
    #meta <key>=<value>          (zero or more)
    <name> <shape> float64 <byte-offset>
    ...
    #end
    <raw little-endian float64 payload>

``shape`` is ``x``-joined dimension sizes (``-`` for a scalar).  Offsets are
relative to the first payload byte.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = "#tensor-container v1"


class ContainerError(ValueError):
    pass


def _fmt_shape(shape: tuple[int, ...]) -> str:
    return "x".join(str(n) for n in shape) if shape else "-"


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "-":
        return ()
    return tuple(int(n) for n in text.split("x"))


def save_arrays(path: str | os.PathLike, arrays: Mapping[str, np.ndarray],
                meta: Mapping[str, str] | None = None) -> None:
    lines = [MAGIC]
    for key, value in (meta or {}).items():
        if "\n" in key or "\n" in str(value) or "=" in key:
            raise ContainerError(f"invalid meta entry {key!r}")
        lines.append(f"#meta {key}={value}")
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        if not name or any(ch.isspace() for ch in name):
            raise ContainerError(f"invalid array name {name!r}")
        a = np.asarray(arr, dtype="<f8")
        lines.append(f"{name} {_fmt_shape(a.shape)} float64 {offset}")
        blob = a.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    lines.append("#end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    raw = Path(path).read_bytes()
    end = raw.find(b"\n#end\n")
    if not raw.startswith(MAGIC.encode()) or end < 0:
        raise ContainerError(f"{path}: not a tensor container")
    header = raw[:end].decode("utf-8").split("\n")
    payload = memoryview(raw)[end + len(b"\n#end\n"):]
    meta: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(header[1:], start=2):
        if line.startswith("#meta "):
            key, sep, value = line[len("#meta "):].partition("=")
            if not sep:
                raise ContainerError(f"{path}:{lineno}: malformed meta line")
            meta[key] = value
            continue
        parts = line.split(" ")
        if len(parts) != 4 or parts[2] != "float64":
            raise ContainerError(f"{path}:{lineno}: malformed array entry {line!r}")
        name, shape_txt, _, off_txt = parts
        shape = _parse_shape(shape_txt)
        off = int(off_txt)
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off < 0 or off + nbytes > len(payload):
            raise ContainerError(f"{path}:{lineno}: array {name!r} exceeds payload")
        arr = np.frombuffer(payload[off:off + nbytes], dtype="<f8").astype(np.float64)
        arrays[name] = arr.reshape(shape)
    return arrays, meta
