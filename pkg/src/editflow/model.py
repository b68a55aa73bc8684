"""Toy diffusion transformer over [references..., target] latent tokens."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .sequence import SequenceLayout
from .text import PAD, embed

_NEG = -1e9


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 4
    d_model: int = 128
    heads: int = 4
    d_text: int = 64
    rope_split: tuple[float, float, float] = (0.5, 0.25, 0.25)
    rope_theta: float = 10000.0
    mlp_ratio: int = 4
    max_refs: int = 2
    # "data": the head predicts the clean latent and velocity is (x1_hat - x_t) / (1 - t)
    # "velocity": the head output is the velocity itself
    prediction: str = "data"
    t_floor: float = 0.05
    ref_skip: bool = True
    ref_align: bool = True

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        bands = self.rope_bands
        if sum(bands) != self.head_dim or any(b % 2 for b in bands):
            raise ValueError(f"rope bands {bands} must be even and sum to head_dim {self.head_dim}")
        if self.prediction not in ("data", "velocity"):
            raise ValueError(f"unknown prediction mode {self.prediction!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def rope_bands(self) -> tuple[int, int, int]:
        hd = self.head_dim
        h = 2 * int(round(self.rope_split[1] * hd / 2))
        w = 2 * int(round(self.rope_split[2] * hd / 2))
        return hd - h - w, h, w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rope_split"] = list(self.rope_split)
        return d


def init_params(cfg: ModelConfig, d_lat: int, vocab_size: int, max_len: int,
                seed: int = 0) -> dict[str, nx.Tensor]:
    """Gaussian(0.02) projections, zero output head, unit norm gains."""
    rng = np.random.default_rng(seed)
    d, dt = cfg.d_model, cfg.d_text
    hid = cfg.mlp_ratio * d

    def g(*shape):
        return rng.standard_normal(shape) * 0.02

    p = {
        "in_proj": g(d_lat, d),
        "role_emb": g(cfg.max_refs + 1, d),
        "time_w1": g(d, d), "time_b1": np.zeros(d), "time_w2": g(d, d), "time_b2": np.zeros(d),
        "text_table": g(vocab_size, dt),
        "text_pos": g(max_len, dt),
        "final_norm": np.ones(d),
        "head": np.zeros((d, d_lat)),
    }
    if cfg.ref_align:
        p["ref_proj"] = g(d_lat, d)
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        p |= {
            b + "norm1": np.ones(d), b + "qkv": g(d, 3 * d), b + "out": g(d, d),
            b + "norm2": np.ones(d), b + "xq": g(d, d), b + "xkv": g(dt, 2 * d), b + "xout": g(d, d),
            b + "norm3": np.ones(d), b + "mlp1": g(d, hid), b + "mlp2": g(hid, d),
        }
    return {k: nx.Tensor(v, requires_grad=True, name=k) for k, v in sorted(p.items())}


# ---------------------------------------------------------------- rotary

def rope_tables(t_idx, h_idx, w_idx, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape (S, head_dim), each angle repeated for its pair."""
    angles = []
    for idx, band in zip((t_idx, h_idx, w_idx), cfg.rope_bands):
        if band == 0:
            continue
        j = np.arange(band // 2)
        freq = cfg.rope_theta ** (-2.0 * j / band)
        angles.append(np.asarray(idx, dtype=np.float64)[:, None] * freq[None, :])
    ang = np.repeat(np.concatenate(angles, axis=1), 2, axis=1)
    dtype = nx.get_dtype()
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def _pair_swap(n: int) -> np.ndarray:
    """Matrix R with (x @ R) mapping each pair (a, b) to (-b, a)."""
    r = np.zeros((n, n))
    for i in range(0, n, 2):
        r[i + 1, i] = -1.0
        r[i, i + 1] = 1.0
    return r.astype(nx.get_dtype())


def rope_rotate(x, t_idx, h_idx, w_idx, cfg: ModelConfig) -> nx.Tensor:
    """Rotate consecutive pairs of the last axis; x is (..., S, head_dim)."""
    x = nx.as_tensor(x)
    cos, sin = rope_tables(t_idx, h_idx, w_idx, cfg)
    return x * cos + (x @ _pair_swap(x.shape[-1])) * sin


# ---------------------------------------------------------------- blocks

def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    arg = 1000.0 * np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(arg), np.sin(arg)], axis=1).astype(nx.get_dtype())


def _heads(x: nx.Tensor, b: int, s: int, h: int, hd: int) -> nx.Tensor:
    return nx.permute(x.reshape(b, s, h, hd), (0, 2, 1, 3))


def _merge(x: nx.Tensor, b: int, s: int, d: int) -> nx.Tensor:
    return nx.permute(x, (0, 2, 1, 3)).reshape(b, s, d)


def attention_weights(q: nx.Tensor, k: nx.Tensor, bias=None) -> nx.Tensor:
    logits = (q @ nx.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        logits = logits + bias
    return nx.softmax(logits)


def forward(params: dict[str, nx.Tensor], cfg: ModelConfig, tokens, layout: SequenceLayout,
            text_ids: np.ndarray, t) -> nx.Tensor:
    """Predicted velocity for the target segment.

    tokens: (B, S, d_lat) or (S, d_lat); text_ids: (B, max_len) or (max_len,);
    t: scalar or (B,). Returns (B, L_t, h_l, w_l, d_lat), batch axis dropped
    when the input had none.
    """
    tokens = nx.as_tensor(tokens)
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = tokens.reshape(1, *tokens.shape)
    text_ids = np.atleast_2d(np.asarray(text_ids))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    bsz, s, d_lat = tokens.shape
    if s != layout.n_tokens:
        raise nx.ShapeError("forward (tokens vs layout)", tokens.shape, (layout.n_tokens,))
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError(f"timestep must lie in [0,1], got {t}")
    if t.shape[0] == 1 and bsz > 1:
        t = np.repeat(t, bsz)
    if text_ids.shape[0] != bsz:
        text_ids = np.broadcast_to(text_ids, (bsz, text_ids.shape[1]))
    d, nh, hd = cfg.d_model, cfg.heads, cfg.head_dim

    # input projection + role + timestep conditioning
    roles = np.where(layout.role_idx == layout.n_refs, 0, layout.role_idx + 1)
    if roles.max() > cfg.max_refs:
        raise ValueError(f"layout has {layout.n_refs} references, model supports {cfg.max_refs}")
    h = tokens @ params["in_proj"] + nx.embedding(params["role_emb"], roles)
    temb = nx.Tensor(timestep_embedding(t, d))
    temb = nx.silu(temb @ params["time_w1"] + params["time_b1"]) @ params["time_w2"] + params["time_b2"]
    h = h + temb.reshape(bsz, 1, d)
    first, n_t = layout.segments[0], layout.target.n_tokens
    aligned = cfg.ref_align and first.length == layout.target.length
    if aligned:
        ref_in = nx.Tensor(tokens.data[:, :first.n_tokens]) @ params["ref_proj"]
        pad = np.zeros((bsz, s - n_t, d), dtype=nx.get_dtype())
        h = h + nx.concat([pad, ref_in], axis=1)

    # instruction context
    z_c = embed(text_ids, params["text_table"], params["text_pos"])
    valid = text_ids != PAD
    x_bias = np.where(valid, 0.0, _NEG).astype(nx.get_dtype())[:, None, None, :]
    has_text = valid.any(axis=1).astype(nx.get_dtype())[:, None, None]
    lc = text_ids.shape[1]

    cos, sin = rope_tables(layout.t_idx, layout.h_idx, layout.w_idx, cfg)
    swap = _pair_swap(hd)

    def rot(x):
        return x * cos + (x @ swap) * sin

    for i in range(cfg.depth):
        b = f"blocks.{i}."
        x = nx.rms_norm(h) * params[b + "norm1"]
        qkv = x @ params[b + "qkv"]
        q, k, v = nx.split(qkv, [d, d, d], axis=-1)
        q, k, v = (_heads(a, bsz, s, nh, hd) for a in (q, k, v))
        att = attention_weights(rot(q), rot(k))
        h = h + _merge(att @ v, bsz, s, d) @ params[b + "out"]

        x = nx.rms_norm(h) * params[b + "norm2"]
        q = _heads(x @ params[b + "xq"], bsz, s, nh, hd)
        kv = z_c @ params[b + "xkv"]
        k, v = nx.split(kv, [d, d], axis=-1)
        k, v = _heads(k, bsz, lc, nh, hd), _heads(v, bsz, lc, nh, hd)
        att = attention_weights(q, k, x_bias)
        h = h + (_merge(att @ v, bsz, s, d) @ params[b + "xout"]) * has_text

        x = nx.rms_norm(h) * params[b + "norm3"]
        h = h + nx.silu(x @ params[b + "mlp1"]) @ params[b + "mlp2"]

    _, h_tar = nx.split(h, [s - n_t, n_t], axis=1)
    out = (nx.rms_norm(h_tar) * params["final_norm"]) @ params["head"]
    if cfg.prediction == "data":
        _, x_t = nx.split(tokens, [s - n_t, n_t], axis=1)
        if cfg.ref_skip and first.length == layout.target.length:
            ref1 = tokens.data[:, :first.n_tokens]
            out = out + ref1
        denom = np.maximum(1.0 - t, cfg.t_floor).astype(nx.get_dtype())[:, None, None]
        out = (out - x_t) / denom
    hl, wl = layout.target.grid
    out = out.reshape(bsz, layout.target.length, hl, wl, d_lat)
    if squeeze:
        out = out.reshape(*out.shape[1:])
    return out
