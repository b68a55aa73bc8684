"""Pseudo-video construction, frame-wise token noise and sequence layout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import LatentVideo, VideoClip


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class TemporalMask:
    bits: np.ndarray  # (l,) of 0/1
    ratio: float

    @property
    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class Segment:
    role: str  # "reference_1", ..., "target"
    length: int
    grid: tuple[int, int]

    @property
    def n_tokens(self) -> int:
        return self.length * self.grid[0] * self.grid[1]


@dataclass(frozen=True)
class SequenceLayout:
    segments: tuple[Segment, ...]
    t_idx: np.ndarray
    h_idx: np.ndarray
    w_idx: np.ndarray
    loss_weight: np.ndarray  # one entry per target token
    role_idx: np.ndarray     # 0..n-1 for references, n for target; per token

    @property
    def n_refs(self) -> int:
        return len(self.segments) - 1

    @property
    def n_tokens(self) -> int:
        return int(self.t_idx.size)

    @property
    def target(self) -> Segment:
        return self.segments[-1]

    @property
    def target_slice(self) -> slice:
        n = self.target.n_tokens
        return slice(self.n_tokens - n, self.n_tokens)

    def signature(self) -> tuple:
        return tuple((s.role, s.length, s.grid) for s in self.segments)


def repeat_image(image: VideoClip, n: int, s_t: int = 4) -> VideoClip:
    """Replicate a single-frame clip ``n`` times along the time axis."""
    if image.frames != 1:
        raise LayoutError(f"repeat_image expects a single frame, got {image.frames}")
    if n < 1 or (n - 1) % s_t:
        raise LayoutError(f"repeat count {n} must satisfy N = 1 (mod {s_t})")
    return VideoClip(np.repeat(image.pixels, n, axis=0))


def masked_count(l: int, ratio: float) -> int:
    # at least one latent frame stays supervised
    return min(int(np.floor(ratio * l)), l - 1)


def sample_temporal_mask(l: int, ratio: float, rng: np.random.Generator) -> TemporalMask:
    if l < 1:
        raise LayoutError("mask length must be >= 1")
    if not 0 <= ratio < 1:
        raise LayoutError(f"masking ratio must lie in [0,1), got {ratio}")
    bits = np.zeros(l, dtype=np.int8)
    k = masked_count(l, ratio)
    if k:
        bits[rng.choice(l, size=k, replace=False)] = 1
    return TemporalMask(bits, ratio)


def apply_frame_noise(z: LatentVideo, mask: TemporalMask, rng: np.random.Generator) -> LatentVideo:
    """Replace every spatial token of masked latent frames with N(0, 1) samples."""
    tok = z.tokens
    if mask.bits.shape[0] != tok.shape[0]:
        raise LayoutError(f"mask length {mask.bits.shape[0]} != latent length {tok.shape[0]}")
    out = tok.copy()
    for i in np.flatnonzero(mask.bits):
        out[i] = rng.standard_normal(tok.shape[1:]).astype(tok.dtype)
    return LatentVideo(out, z.codec_seed)


def build_layout(ref_lengths: list[int], target_length: int, grid: tuple[int, int],
                 mask: TemporalMask | None = None) -> SequenceLayout:
    """Indices for [ref_1, ..., ref_n, target]; each segment's time index restarts at 0."""
    if not ref_lengths:
        raise LayoutError("at least one reference is required")
    if mask is not None and mask.bits.shape[0] != target_length:
        raise LayoutError(f"mask length {mask.bits.shape[0]} != target length {target_length}")
    hl, wl = grid
    segs = [Segment(f"reference_{k + 1}", L, grid) for k, L in enumerate(ref_lengths)]
    segs.append(Segment("target", target_length, grid))
    t_parts, h_parts, w_parts, r_parts = [], [], [], []
    for k, seg in enumerate(segs):
        t, h, w = np.meshgrid(np.arange(seg.length), np.arange(hl), np.arange(wl), indexing="ij")
        t_parts.append(t.ravel())
        h_parts.append(h.ravel())
        w_parts.append(w.ravel())
        r_parts.append(np.full(seg.n_tokens, k))
    if mask is None:
        weight = np.ones(segs[-1].n_tokens, dtype=np.float32)
    else:
        weight = np.repeat(1.0 - mask.bits.astype(np.float32), hl * wl)
    return SequenceLayout(tuple(segs), np.concatenate(t_parts), np.concatenate(h_parts),
                          np.concatenate(w_parts), weight.astype(np.float32), np.concatenate(r_parts))


def build_sequence(refs: list[LatentVideo], target: LatentVideo,
                   mask: TemporalMask | None = None) -> tuple[SequenceLayout, np.ndarray]:
    """Layout plus the flat (n_tokens, d_lat) token array, segment-major then (t, h, w)."""
    if not refs:
        raise LayoutError("at least one reference is required")
    grid, d = target.grid, target.d_lat
    for r in refs:
        if r.grid != grid or r.d_lat != d:
            raise LayoutError(f"reference grid/dim {r.grid}/{r.d_lat} != target {grid}/{d}")
    layout = build_layout([r.length for r in refs], target.length, grid, mask)
    flat = np.concatenate([z.tokens.reshape(-1, d) for z in [*refs, target]], axis=0)
    return layout, flat
