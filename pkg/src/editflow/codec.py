"""Exactly invertible patch codec used in place of a learned video VAE.

Frame 0 is encoded on its own; later frames are grouped ``s_t`` at a time.
Each (group, patch) is flattened, shifted from [0,1] to [-0.5,0.5] and
multiplied by a fixed orthogonal matrix, so decoding is a transpose.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class VideoClip:
    """Pixels in [0,1], layout (frames, channels, height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 4:
            raise CodecError(f"clip must be 4-D (f,c,h,w), got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def frames(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class LatentVideo:
    """Tokens with layout (l, h_l, w_l, d_lat)."""

    tokens: np.ndarray
    codec_seed: int = 0

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def grid(self) -> tuple[int, int]:
        return self.tokens.shape[1], self.tokens.shape[2]

    @property
    def d_lat(self) -> int:
        return self.tokens.shape[3]


@dataclass(frozen=True)
class Codec:
    seed: int
    p: int
    s_t: int
    c: int
    w_first: np.ndarray  # (d_lat, p*p*c), orthonormal columns
    w_rest: np.ndarray   # (d_lat, d_lat), orthogonal

    @property
    def d_lat(self) -> int:
        return self.p * self.p * self.c * self.s_t

    def latent_length(self, f: int) -> int:
        if f < 1 or (f - 1) % self.s_t:
            raise CodecError(f"frame count {f} must satisfy f = 1 (mod {self.s_t})")
        return 1 + (f - 1) // self.s_t

    def params(self) -> dict:
        return {"seed": self.seed, "p": self.p, "s_t": self.s_t, "c": self.c}


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # sign fix makes the factorization unique
    q = q * np.sign(np.diag(r))[None, :]
    return q


def build_codec(seed: int = 0, p: int = 8, s_t: int = 4, c: int = 3) -> Codec:
    if p < 1 or s_t < 1 or c < 1:
        raise CodecError("p, s_t and c must be >= 1")
    rng = np.random.default_rng(seed)
    d_lat = p * p * c * s_t
    w_rest = _orthonormal(rng, d_lat, d_lat)
    w_first = _orthonormal(rng, d_lat, p * p * c)
    return Codec(seed, p, s_t, c, w_first, w_rest)


def _patches(px: np.ndarray, p: int) -> np.ndarray:
    """(g, c, h, w) -> (h/p, w/p, g*c*p*p) with per-patch order (g, c, py, px)."""
    g, c, h, w = px.shape
    x = px.reshape(g, c, h // p, p, w // p, p)
    x = x.transpose(2, 4, 0, 1, 3, 5)
    return x.reshape(h // p, w // p, g * c * p * p)


def _unpatches(x: np.ndarray, g: int, c: int, p: int) -> np.ndarray:
    hl, wl, _ = x.shape
    x = x.reshape(hl, wl, g, c, p, p).transpose(2, 3, 0, 4, 1, 5)
    return x.reshape(g, c, hl * p, wl * p)


def encode(clip: VideoClip, codec: Codec) -> LatentVideo:
    px = clip.pixels
    f, c, h, w = px.shape
    if c != codec.c:
        raise CodecError(f"clip has {c} channels, codec expects {codec.c}")
    if h % codec.p or w % codec.p:
        raise CodecError(f"height/width {h}x{w} not divisible by patch size {codec.p}")
    l = codec.latent_length(f)
    shifted = px.astype(np.float64) - 0.5
    out = np.empty((l, h // codec.p, w // codec.p, codec.d_lat), dtype=np.float64)
    out[0] = _patches(shifted[:1], codec.p) @ codec.w_first.T
    for k in range(1, l):
        grp = shifted[1 + (k - 1) * codec.s_t: 1 + k * codec.s_t]
        out[k] = _patches(grp, codec.p) @ codec.w_rest.T
    return LatentVideo(out.astype(np.float32), codec.seed)


def decode(z: LatentVideo, codec: Codec) -> VideoClip:
    tok = np.asarray(z.tokens, dtype=np.float64)
    if tok.ndim != 4 or tok.shape[-1] != codec.d_lat:
        raise CodecError(f"latent shape {tok.shape} does not match codec d_lat={codec.d_lat}")
    l, hl, wl, _ = tok.shape
    p, c, s = codec.p, codec.c, codec.s_t
    frames = [_unpatches(tok[0] @ codec.w_first, 1, c, p)]
    for k in range(1, l):
        frames.append(_unpatches(tok[k] @ codec.w_rest, s, c, p))
    px = np.concatenate(frames, axis=0) + 0.5
    return VideoClip(np.clip(px, 0.0, 1.0).astype(np.float32))
