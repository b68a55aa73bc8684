"""Euler integration of the learned velocity field, noise -> edited latent."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .codec import Codec, LatentVideo, VideoClip, decode, encode
from .model import ModelConfig, forward
from .sequence import build_layout, repeat_image
from .synth import EditSample
from .text import Vocab, tokenize

VelocityField = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 20
    target_length: int | None = None  # latent frames; defaults to the first reference's length
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("sampler needs at least one step")


def euler_integrate(field: VelocityField, x: np.ndarray, steps: int) -> np.ndarray:
    """x <- x + f(x, k/K) / K for k = 0..K-1."""
    x = np.array(x, dtype=np.float32)
    dt = 1.0 / steps
    for k in range(steps):
        x = (x + dt * np.asarray(field(x, k / steps), dtype=np.float32)).astype(np.float32)
    return x


def model_field(params, model_cfg: ModelConfig, refs: list[LatentVideo], text_ids: np.ndarray) -> VelocityField:
    grid = refs[0].grid
    ref_flat = np.concatenate([r.tokens.reshape(-1, r.d_lat) for r in refs], axis=0)

    def field(x: np.ndarray, t: float) -> np.ndarray:
        layout = build_layout([r.length for r in refs], x.shape[0], grid)
        tokens = np.concatenate([ref_flat, x.reshape(-1, x.shape[-1])], axis=0)
        return forward(params, model_cfg, tokens, layout, text_ids, t).data
    return field


def euler_sample(params, model_cfg: ModelConfig, refs: list[LatentVideo], text_ids: np.ndarray,
                 cfg: SamplerConfig, field: VelocityField | None = None) -> LatentVideo:
    """Integrate from a seeded Gaussian latent shaped like the target segment.

    ``field`` overrides the model (used to check the integrator on closed forms).
    """
    length = cfg.target_length or refs[0].length
    hl, wl = refs[0].grid
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal((length, hl, wl, refs[0].d_lat)).astype(np.float32)
    if field is None:
        field = model_field(params, model_cfg, refs, text_ids)
    return LatentVideo(euler_integrate(field, x, cfg.steps), refs[0].codec_seed)


def working_clips(sample: EditSample, codec: Codec, repeat_n: int, use_repeat: bool = True):
    """References and target at the frame count the model sees (pseudo-videos for images)."""
    refs, target = sample.references, sample.target
    if sample.origin == "image" and use_repeat:
        refs = [repeat_image(r, repeat_n, codec.s_t) for r in refs]
        target = repeat_image(target, repeat_n, codec.s_t)
    return refs, target


def edit(params, model_cfg: ModelConfig, sample: EditSample, codec: Codec, vocab: Vocab,
         cfg: SamplerConfig, repeat_n: int = 9, use_repeat: bool = True) -> VideoClip:
    refs, _ = working_clips(sample, codec, repeat_n, use_repeat)
    z_refs = [encode(r, codec) for r in refs]
    ids = tokenize(sample.instruction, vocab)
    with nx.precision(np.float32):
        z = euler_sample(params, model_cfg, z_refs, ids, cfg)
    return decode(z, codec)
