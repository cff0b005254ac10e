"""Residual Dense Transformer and its two simpler siblings.

``kind`` selects the architecture:

* ``rdt`` - dense encoder stack: encoder l reads a learned (l*D -> D)
  projection of the concatenated z_0 and all earlier encoder outputs.
* ``rt``  - plain sequential encoder stack (no dense connections).
* ``r``   - no transformer; mean-pooled patch features go straight to the head.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .container import load_arrays, save_arrays
from .data import DEFAULT_GENRES
from .embed import ConvBlock, EmbeddingParams, PatchConfig, extract_patch_features, embed_sequence, patchify
from .tensor import ShapeError, Tensor, concat_last, gelu, layer_norm, no_grad, relu, sigmoid, softmax_rows

KINDS = ("r", "rt", "rdt")


@dataclass(frozen=True)
class ModelConfig:
    w_z: int = 64
    w_p: int = 16
    c_p: int = 3
    dim: int = 32
    layers: int = 2
    heads: int = 4
    ext_channels: tuple[int, ...] = (16, 32)
    genres: tuple[str, ...] = DEFAULT_GENRES
    kind: str = "rdt"
    ln_eps: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "ext_channels", tuple(int(c) for c in self.ext_channels))
        object.__setattr__(self, "genres", tuple(self.genres))
        if self.kind not in KINDS:
            raise ValueError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if not self.ext_channels:
            raise ValueError("extractor needs at least one conv block")
        if self.w_p % (2 ** len(self.ext_channels)):
            raise ValueError(f"patch side {self.w_p} not divisible by 2^{len(self.ext_channels)}")
        if self.layers < 1 or self.heads < 1 or self.dim // self.heads < 1:
            raise ValueError("need layers >= 1 and 1 <= heads <= dim")
        if len(self.genres) < 2:
            raise ValueError("need at least two genres")
        self.patch  # validates the tiling

    @property
    def patch(self) -> PatchConfig:
        return PatchConfig(self.w_z, self.w_p, self.c_p, self.dim, self.ext_channels[-1])

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def n_genres(self) -> int:
        return len(self.genres)

    def to_meta(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ";".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "ModelConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in meta:
                continue
            raw = meta[f.name]
            if f.name == "ext_channels":
                kw[f.name] = tuple(int(x) for x in raw.split(";"))
            elif f.name == "genres":
                kw[f.name] = tuple(raw.split(";"))
            elif f.name == "kind":
                kw[f.name] = raw
            elif f.name == "ln_eps":
                kw[f.name] = float(raw)
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


# -- parameter groups ------------------------------------------------------------


@dataclass
class AttentionParams:
    heads: int
    wq: Tensor  # (D, h*D_K); columns grouped per head
    wk: Tensor
    wv: Tensor
    wo: Tensor  # (h*D_V, D)

    @property
    def head_dim(self) -> int:
        return self.wq.shape[1] // self.heads


@dataclass
class EncoderParams:
    attn: AttentionParams
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    mlp_w1: Tensor  # (D, 2D)
    mlp_b1: Tensor
    mlp_w2: Tensor  # (2D, D)
    mlp_b2: Tensor


@dataclass
class DenseStackParams:
    encoders: list[EncoderParams]
    transitions: list[Tensor] | None  # transition l: (l*D, D); None -> sequential stack
    final_g: Tensor
    final_b: Tensor
    eps: float = 1e-6


@dataclass
class HeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


# -- forward pieces ----------------------------------------------------------------


def multi_head_self_attention(z: Tensor, p: AttentionParams, attn_log: list | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(D_K)) V per head, heads concatenated, then W_O."""
    squeeze = z.ndim == 2
    x = z.reshape(1, *z.shape) if squeeze else z
    if x.ndim != 3:
        raise ShapeError(f"attention input must be (T, D) or (B, T, D), got {z.shape}")
    b, t, d = x.shape
    h, dk = p.heads, p.head_dim
    if p.wq.shape != (d, h * dk) or p.wo.shape != (h * dk, d):
        raise ShapeError(f"attention params {p.wq.shape}/{p.wo.shape} do not fit D={d}, h={h}")

    def split(w):
        return (x @ w).reshape(b, t, h, dk).transpose(0, 2, 1, 3)

    q, k, v = split(p.wq), split(p.wk), split(p.wv)
    weights = softmax_rows((q @ k.T) * (1.0 / math.sqrt(dk)))
    if attn_log is not None:
        attn_log.append(weights.data)
    heads = (weights @ v).transpose(0, 2, 1, 3).reshape(b, t, h * dk)
    out = heads @ p.wo
    return out.reshape(t, d) if squeeze else out


def encoder_block(z_in: Tensor, p: EncoderParams, eps: float = 1e-6, attn_log: list | None = None) -> Tensor:
    z_mid = multi_head_self_attention(layer_norm(z_in, p.ln1_g, p.ln1_b, eps), p.attn, attn_log) + z_in
    hidden = gelu(layer_norm(z_mid, p.ln2_g, p.ln2_b, eps) @ p.mlp_w1 + p.mlp_b1)
    return hidden @ p.mlp_w2 + p.mlp_b2 + z_mid


def dense_encoder_stack(z0: Tensor, p: DenseStackParams, attn_log: list | None = None) -> Tensor:
    """Run the encoder stack and return y' = LN(class-token row of the last output)."""
    if not p.encoders:
        raise ValueError("encoder stack is empty")
    outputs = [z0]
    z = z0
    for i, enc in enumerate(p.encoders):
        if p.transitions is not None:
            tr = p.transitions[i]
            width = (i + 1) * z0.shape[-1]
            if tr.shape[0] != width:
                raise ShapeError(f"transition {i + 1} expects width {tr.shape[0]}, got {width}")
            z = concat_last(outputs) @ tr
        z = encoder_block(z, enc, p.eps, attn_log)
        outputs.append(z)
    cls_row = z[..., 0, :]
    return layer_norm(cls_row, p.final_g, p.final_b, p.eps)


def classify_head(y: Tensor, p: HeadParams) -> Tensor:
    """sigmoid(relu(y W1 + b1) W2 + b2) for a (D,) vector or a (B, D) batch."""
    if y.ndim == 1:
        return classify_head(y.reshape(1, y.shape[0]), p).reshape(p.w2.shape[1])
    return sigmoid(relu(y @ p.w1 + p.b1) @ p.w2 + p.b2)


# -- parameters --------------------------------------------------------------------


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0; LN identity; class token and positions ~ N(0, 0.02)."""
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}

    def uni(name, shape, fan_in):
        lim = 1.0 / math.sqrt(fan_in)
        out[name] = rng.uniform(-lim, lim, size=shape)

    d, pc = cfg.dim, cfg.patch
    c_in = cfg.c_p
    for i, c_out in enumerate(cfg.ext_channels):
        uni(f"ext.{i}.kernel", (3, 3, c_in, c_out), 9 * c_in)
        out[f"ext.{i}.bias"] = np.zeros(c_out)
        c_in = c_out
    feat = pc.features
    head_in = feat
    if cfg.kind != "r":
        uni("embed.proj", (feat, d), feat)
        out["embed.pos"] = rng.normal(0.0, 0.02, size=(pc.n_p + 1, d))
        out["embed.cls"] = rng.normal(0.0, 0.02, size=(d,))
        hk = cfg.heads * cfg.head_dim
        for l in range(cfg.layers):
            pre = f"enc.{l}"
            if cfg.kind == "rdt":
                uni(f"{pre}.transition", ((l + 1) * d, d), (l + 1) * d)
            out[f"{pre}.ln1.g"] = np.ones(d)
            out[f"{pre}.ln1.b"] = np.zeros(d)
            for w in ("wq", "wk", "wv"):
                uni(f"{pre}.attn.{w}", (d, hk), d)
            uni(f"{pre}.attn.wo", (hk, d), hk)
            out[f"{pre}.ln2.g"] = np.ones(d)
            out[f"{pre}.ln2.b"] = np.zeros(d)
            uni(f"{pre}.mlp.w1", (d, 2 * d), d)
            out[f"{pre}.mlp.b1"] = np.zeros(2 * d)
            uni(f"{pre}.mlp.w2", (2 * d, d), 2 * d)
            out[f"{pre}.mlp.b2"] = np.zeros(d)
        out["final_ln.g"] = np.ones(d)
        out["final_ln.b"] = np.zeros(d)
        head_in = d
    hidden = max(d // 2, 1)
    uni("head.w1", (head_in, hidden), head_in)
    out["head.b1"] = np.zeros(hidden)
    uni("head.w2", (hidden, cfg.n_genres), hidden)
    out["head.b2"] = np.zeros(cfg.n_genres)
    return out


class GenreModel:
    """A poster -> per-genre confidence model (R, RT or RDT)."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.cfg = cfg
        arrays = init_params(cfg, seed) if params is None else params
        expected = init_params(cfg, 0)
        missing = set(expected) - set(arrays)
        extra = set(arrays) - set(expected)
        if missing or extra:
            raise ValueError(f"parameter names mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        self.params: dict[str, Tensor] = {}
        for name in expected:  # canonical order
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != expected[name].shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape}, expected {expected[name].shape}")
            self.params[name] = Tensor(arr.copy(), requires_grad=True, name=name)

    # -- grouped views -----------------------------------------------------------

    def embedding(self) -> EmbeddingParams:
        p = self.params
        blocks = [ConvBlock(p[f"ext.{i}.kernel"], p[f"ext.{i}.bias"]) for i in range(len(self.cfg.ext_channels))]
        if self.cfg.kind == "r":
            return EmbeddingParams(blocks, None, None, None)
        return EmbeddingParams(blocks, p["embed.proj"], p["embed.pos"], p["embed.cls"])

    def stack(self) -> DenseStackParams:
        p = self.params
        encoders, transitions = [], []
        for l in range(self.cfg.layers):
            pre = f"enc.{l}"
            attn = AttentionParams(self.cfg.heads, p[f"{pre}.attn.wq"], p[f"{pre}.attn.wk"],
                                   p[f"{pre}.attn.wv"], p[f"{pre}.attn.wo"])
            encoders.append(EncoderParams(attn, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"], p[f"{pre}.ln2.g"],
                                          p[f"{pre}.ln2.b"], p[f"{pre}.mlp.w1"], p[f"{pre}.mlp.b1"],
                                          p[f"{pre}.mlp.w2"], p[f"{pre}.mlp.b2"]))
            if self.cfg.kind == "rdt":
                transitions.append(p[f"{pre}.transition"])
        return DenseStackParams(encoders, transitions if self.cfg.kind == "rdt" else None,
                                p["final_ln.g"], p["final_ln.b"], self.cfg.ln_eps)

    def head(self) -> HeadParams:
        p = self.params
        return HeadParams(p["head.w1"], p["head.b1"], p["head.w2"], p["head.b2"])

    # -- forward ---------------------------------------------------------------------

    def forward(self, images: np.ndarray, attn_log: list | None = None) -> Tensor:
        """(B, w_z, w_z, c_p) images -> (B, delta) confidence scores."""
        pc = self.cfg.patch
        patches = patchify(images, pc)
        b = patches.shape[0]
        emb = self.embedding()
        feats = extract_patch_features(Tensor(patches.reshape(b * pc.n_p, pc.w_p, pc.w_p, pc.c_p)), emb)
        feats = feats.reshape(b, pc.n_p, pc.features)
        if self.cfg.kind == "r":
            y = feats.mean(axis=1)
        else:
            y = dense_encoder_stack(embed_sequence(feats, emb), self.stack(), attn_log)
        return classify_head(y, self.head())

    __call__ = forward

    def predict_scores(self, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        chunks = []
        with no_grad():
            for lo in range(0, images.shape[0], batch_size):
                chunks.append(self.forward(images[lo:lo + batch_size]).data)
        if not chunks:
            return np.zeros((0, self.cfg.n_genres))
        return np.concatenate(chunks, axis=0)

    # -- parameters ------------------------------------------------------------------

    def parameters(self, freeze_extractor: bool = False) -> Iterator[Tensor]:
        for name, t in self.params.items():
            if freeze_extractor and name.startswith("ext."):
                continue
            yield t

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64, copy=True)

    def save(self, path: str | os.PathLike, extra_meta: dict[str, str] | None = None) -> None:
        meta = self.cfg.to_meta()
        meta.update(extra_meta or {})
        save_arrays(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "GenreModel":
        arrays, meta = load_arrays(path)
        return cls(ModelConfig.from_meta(meta), arrays)


def rdt_forward(img: np.ndarray, model: GenreModel) -> np.ndarray:
    """Confidence vector for a single (w_z, w_z, c_p) poster."""
    return model.predict_scores(np.asarray(img)[None])[0]
