"""Patch tiling, the shared convolutional feature extractor and sequence embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, activation, concat, im2col3x3


@dataclass(frozen=True)
class PatchConfig:
    w_z: int = 64
    w_p: int = 16
    c_p: int = 3
    dim: int = 32
    features: int = 32

    def __post_init__(self):
        if self.w_p <= 0 or self.w_z % self.w_p:
            raise ValueError(f"patch side {self.w_p} must divide input side {self.w_z}")
        if self.dim < 2 or self.features < 1 or self.c_p < 1:
            raise ValueError("need dim >= 2, features >= 1, c_p >= 1")

    @property
    def n_p(self) -> int:
        return (self.w_z // self.w_p) ** 2


@dataclass
class ConvBlock:
    kernel: Tensor  # (3, 3, C_in, C_out)
    bias: Tensor    # (C_out,)


@dataclass
class EmbeddingParams:
    extractor: list[ConvBlock]
    proj: Tensor        # E: (F, D)
    pos: Tensor         # E_pos: (n_p + 1, D)
    cls_token: Tensor   # a_class: (D,)
    act: str = "relu"


def split_patches(img: np.ndarray, cfg: PatchConfig) -> list[np.ndarray]:
    """Non-overlapping w_p x w_p tiles in row-major patch order."""
    img = np.asarray(img)
    if img.shape != (cfg.w_z, cfg.w_z, cfg.c_p):
        raise ShapeError(f"image shape {img.shape} does not match {(cfg.w_z, cfg.w_z, cfg.c_p)}")
    g = cfg.w_z // cfg.w_p
    tiles = img.reshape(g, cfg.w_p, g, cfg.w_p, cfg.c_p).transpose(0, 2, 1, 3, 4)
    return [tiles[r, c].copy() for r in range(g) for c in range(g)]


def patchify(images: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Batched :func:`split_patches`: (B, w_z, w_z, c_p) -> (B, n_p, w_p, w_p, c_p)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != (cfg.w_z, cfg.w_z, cfg.c_p):
        raise ShapeError(f"image batch shape {images.shape} does not match (B, {cfg.w_z}, {cfg.w_z}, {cfg.c_p})")
    b = images.shape[0]
    g = cfg.w_z // cfg.w_p
    tiles = images.reshape(b, g, cfg.w_p, g, cfg.w_p, cfg.c_p).transpose(0, 1, 3, 2, 4, 5)
    return tiles.reshape(b, g * g, cfg.w_p, cfg.w_p, cfg.c_p)


def assemble_patches(patches: list[np.ndarray], cfg: PatchConfig) -> np.ndarray:
    g = cfg.w_z // cfg.w_p
    rows = [np.concatenate(patches[r * g:(r + 1) * g], axis=1) for r in range(g)]
    return np.concatenate(rows, axis=0)


def _avg_pool2(x: Tensor) -> Tensor:
    n, h, w, c = x.shape
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def extract_patch_features(patches: Tensor, params: EmbeddingParams) -> Tensor:
    """Shared-weight conv stack: (N, w_p, w_p, c) -> (N, F).

    Each block is 3x3 zero-padded convolution, activation, 2x2 average
    pooling; the stack ends in global average pooling.
    """
    x = patches
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4:
        raise ShapeError(f"patch batch must be (N, w_p, w_p, c), got {patches.shape}")
    for blk in params.extractor:
        k = blk.kernel
        if k.shape[:3] != (3, 3, x.shape[-1]):
            raise ShapeError(f"kernel {k.shape} does not accept {x.shape[-1]} input channels")
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise ShapeError(f"cannot 2x downsample spatial size {x.shape[1:3]}")
        cols = im2col3x3(x)
        x = cols @ k.reshape(9 * k.shape[2], k.shape[3]) + blk.bias
        x = activation(x, params.act)
        x = _avg_pool2(x)
    feats = x.mean(axis=(1, 2))
    return feats.reshape(feats.shape[-1]) if squeeze else feats


def embed_sequence(features: Tensor, params: EmbeddingParams) -> Tensor:
    """z_0 = [a_class; a_p^1 E; ...; a_p^{n_p} E] + E_pos.

    ``features`` is (n_p, F) or (B, n_p, F); the result gains one row.
    """
    squeeze = features.ndim == 2
    f = features.reshape(1, *features.shape) if squeeze else features
    b, n_p, width = f.shape
    if width != params.proj.shape[0]:
        raise ShapeError(f"feature width {width} does not match projection {params.proj.shape}")
    if params.pos.shape[0] != n_p + 1:
        raise ShapeError(f"positional table has {params.pos.shape[0]} rows, need {n_p + 1}")
    d = params.proj.shape[1]
    tokens = f @ params.proj
    cls = Tensor(np.ones((b, 1, 1))) * params.cls_token.reshape(1, 1, d)
    z0 = concat([cls, tokens], axis=1) + params.pos
    return z0.reshape(n_p + 1, d) if squeeze else z0
