"""``key=value`` run configuration with command-line overrides."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields, replace
from typing import Iterable

from .data import DEFAULT_GENRES, GenreVocabulary
from .model import ModelConfig
from .refine import RefineConfig
from .train import AslConfig, OptimizerConfig, TrainConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(";", ",").split(",") if x.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(";") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    # model
    w_z: int = 64
    w_p: int = 16
    c_p: int = 3
    dim: int = 32
    layers: int = 2
    heads: int = 4
    ext_channels: tuple[int, ...] = (16, 32)
    ln_eps: float = 1e-6
    init_seed: int = 0
    # training
    batch_size: int = 32
    patience: int = 10
    max_epochs: int = 500
    seed: int = 0
    freeze_extractor: bool = False
    target_loss: float | None = None
    # asymmetric loss
    gamma_pos: float = 0.0
    gamma_neg: float = 1.0
    margin: float = 0.2
    # Adam
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # refinement
    tau: float = 0.3
    tau_prime: float = 0.03
    # ensemble grid search
    grid_step: float = 0.05
    grid_metric: str = "BA"
    # data
    split_ratios: tuple[float, ...] = (8.0, 1.0, 1.0)
    genres: tuple[str, ...] = DEFAULT_GENRES

    def model_config(self, kind: str = "rdt") -> ModelConfig:
        return ModelConfig(self.w_z, self.w_p, self.c_p, self.dim, self.layers, self.heads,
                           self.ext_channels, self.genres, kind, self.ln_eps)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.patience, self.max_epochs, self.seed,
                           self.freeze_extractor, self.target_loss)

    def asl_config(self) -> AslConfig:
        return AslConfig(self.gamma_pos, self.gamma_neg, self.margin)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(self.lr, self.beta1, self.beta2, self.eps)

    def refine_config(self) -> RefineConfig:
        return RefineConfig(self.tau, self.tau_prime)

    def vocab(self) -> GenreVocabulary:
        return GenreVocabulary(self.genres)


# keyed by the (string) annotation of each RunConfig field
_PARSERS = {
    "int": int,
    "float": float,
    "bool": _bool,
    "str": str,
    "tuple[int, ...]": _int_list,
    "tuple[float, ...]": _float_list,
    "tuple[str, ...]": _names,
    "float | None": _opt_float,
}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


KNOWN_KEYS = tuple(f.name for f in fields(RunConfig))


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict[str, str]:
    """Raw key/value pairs; a repeated key keeps its last value (with a warning)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: malformed line, expected key=value")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            logger.warning("%s:%d: duplicate key %r, last value wins", source, lineno, key)
        out[key] = value.strip()
    return out


def build_config(raw: dict[str, str]) -> RunConfig:
    kw = {}
    for key, value in raw.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            kw[key] = _PARSERS[_FIELD_TYPES[key]](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    cfg = replace(RunConfig(), **kw)
    try:  # validate the derived component configs eagerly
        cfg.model_config()
        cfg.train_config()
        cfg.asl_config()
        cfg.refine_config()
        cfg.vocab()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.grid_metric not in ("BA", "FM", "HL"):
        raise ConfigError(f"grid_metric must be BA, FM or HL, got {cfg.grid_metric!r}")
    return cfg


def load_config(path: str | os.PathLike | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Merge a config file (optional) with ``key=value`` overrides; overrides win."""
    raw: dict[str, str] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw.update(parse_lines(fh, str(path)))
    raw.update(parse_lines(overrides, "<overrides>"))
    return build_config(raw)
