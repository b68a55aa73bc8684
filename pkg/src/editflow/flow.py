"""Flow-matching objective and the single training update."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .codec import Codec, LatentVideo, encode
from .model import ModelConfig, forward
from .sequence import TemporalMask, apply_frame_noise, build_sequence, repeat_image, sample_temporal_mask
from .synth import EditSample
from .text import Vocab, tokenize


class SupervisionError(ValueError):
    pass


def logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def sample_timestep(rng: np.random.Generator, mu: float = 0.0, sigma: float = 1.0, size=None):
    """Logit-normal draw: logistic(z) with z ~ N(mu, sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return logistic(rng.normal(mu, sigma, size=size))


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    x0, x1 = np.asarray(x0), np.asarray(x1)
    if x0.shape != x1.shape:
        raise nx.ShapeError("interpolate", x0.shape, x1.shape)
    if not 0 <= t <= 1:
        raise ValueError(f"t must lie in [0,1], got {t}")
    if t == 0:
        return x0.copy()
    if t == 1:
        return x1.copy()
    return t * x1 + (1 - t) * x0


def velocity(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    x0, x1 = np.asarray(x0), np.asarray(x1)
    if x0.shape != x1.shape:
        raise nx.ShapeError("velocity", x0.shape, x1.shape)
    return x1 - x0


@dataclass
class LossReport:
    loss: nx.Tensor
    supervised: int
    masked: int
    frame_loss: np.ndarray  # mean squared error per target latent frame
    t: list[float] = field(default_factory=list)

    @property
    def value(self) -> float:
        return float(self.loss.data)


def mse_loss(pred, v_t) -> nx.Tensor:
    pred = nx.as_tensor(pred)
    diff = pred - v_t
    return nx.sum_(diff * diff) / float(pred.size)


def _weighted_sq_sum(pred: nx.Tensor, v_t: np.ndarray, weights: np.ndarray):
    if pred.shape != np.shape(v_t):
        raise nx.ShapeError("loss_masked", pred.shape, np.shape(v_t))
    diff = pred - v_t
    w = np.asarray(weights, dtype=pred.data.dtype).reshape(*pred.shape[:-1], 1)
    return nx.sum_(diff * diff * w), diff


def loss_masked(pred, v_t, weights) -> LossReport:
    """sum(w * (pred - v)^2) / (sum(w) * d_lat); weight-0 tokens contribute nothing.

    pred/v_t: (..., L, h_l, w_l, d_lat); weights: one entry per token.
    """
    pred = nx.as_tensor(pred)
    w = np.asarray(weights, dtype=np.float64).reshape(pred.shape[:-1])
    n_sup = int(w.sum())
    if n_sup == 0:
        raise SupervisionError("all loss weights are zero")
    total, diff = _weighted_sq_sum(pred, v_t, w)
    loss = total / float(max(1, n_sup * pred.shape[-1]))
    return LossReport(loss, n_sup, int(w.size - n_sup), _frame_loss(diff.data))


def _frame_loss(diff: np.ndarray) -> np.ndarray:
    sq = diff.astype(np.float64) ** 2
    frame_axis = sq.ndim - 4
    axes = tuple(i for i in range(sq.ndim) if i != frame_axis)
    return sq.mean(axis=axes)


# ---------------------------------------------------------------- training step

@dataclass
class StepConfig:
    """Knobs consumed by a training step (a subset of the run config)."""

    repeat_n: int = 9
    mask_ratio: float = 0.25
    use_repeat: bool = True
    use_noise: bool = True
    mask_videos: bool = False
    mask_reference_too: bool = False
    t_mu: float = 0.0
    t_sigma: float = 1.0
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 0.0


@dataclass
class Prepared:
    refs: list[LatentVideo]
    target: LatentVideo
    mask: TemporalMask | None
    text_ids: np.ndarray


def prepare(sample: EditSample, codec: Codec, vocab: Vocab, cfg: StepConfig,
            rng: np.random.Generator) -> Prepared:
    """Repeat (image origin), encode, and draw the temporal mask."""
    refs, target = sample.references, sample.target
    if sample.origin == "image" and cfg.use_repeat:
        refs = [repeat_image(r, cfg.repeat_n, codec.s_t) for r in refs]
        target = repeat_image(target, cfg.repeat_n, codec.s_t)
    z_refs = [encode(r, codec) for r in refs]
    z_tar = encode(target, codec)
    mask = None
    if cfg.use_noise and cfg.mask_ratio > 0 and (sample.origin == "image" or cfg.mask_videos):
        mask = sample_temporal_mask(z_tar.length, cfg.mask_ratio, rng)
    return Prepared(z_refs, z_tar, mask, tokenize(sample.instruction, vocab))


def corrupt(prep: Prepared, cfg: StepConfig, rng: np.random.Generator, t: float | None = None):
    """Noise pair, interpolant with masked frames replaced by fresh noise, sequence."""
    x1 = prep.target.tokens
    x0 = rng.standard_normal(x1.shape).astype(np.float32)
    if t is None:
        t = float(sample_timestep(rng, cfg.t_mu, cfg.t_sigma))
    x_t = LatentVideo(interpolate(x0, x1, t).astype(np.float32), prep.target.codec_seed)
    refs = prep.refs
    if prep.mask is not None and prep.mask.count:
        x_t = apply_frame_noise(x_t, prep.mask, rng)
        if cfg.mask_reference_too:
            refs = [apply_frame_noise(r, prep.mask, rng) if r.length == prep.mask.bits.size else r
                    for r in refs]
    layout, tokens = build_sequence(refs, x_t, prep.mask)
    return layout, tokens, velocity(x0, x1), t


def batch_loss(samples: Sequence[EditSample], params, model_cfg: ModelConfig, codec: Codec,
               vocab: Vocab, cfg: StepConfig, rng: np.random.Generator) -> LossReport:
    """Masked flow-matching loss over a batch, normalised by the total supervised count.

    Samples sharing a sequence layout run through the model together; groups
    are visited in first-appearance order so the reduction order is fixed.
    """
    items = []
    for s in samples:
        prep = prepare(s, codec, vocab, cfg, rng)
        layout, tokens, v_t, t = corrupt(prep, cfg, rng)
        items.append((layout, tokens, v_t, t, prep.text_ids))
    groups: dict[tuple, list] = {}
    for it in items:
        groups.setdefault(it[0].signature(), []).append(it)
    total = None
    n_sup = n_mask = 0
    d_lat = items[0][2].shape[-1]
    frame_losses = []
    for members in groups.values():
        layout = members[0][0]
        tokens = np.stack([m[1] for m in members])
        v_t = np.stack([m[2] for m in members])
        weights = np.stack([m[0].loss_weight for m in members])
        ts = np.array([m[3] for m in members])
        ids = np.stack([m[4] for m in members])
        pred = forward(params, model_cfg, tokens, layout, ids, ts)
        part, diff = _weighted_sq_sum(pred, v_t, weights.reshape(pred.shape[:-1]))
        total = part if total is None else total + part
        n_sup += int(weights.sum())
        n_mask += int(weights.size - weights.sum())
        frame_losses.append(_frame_loss(diff.data))
    if n_sup == 0:
        raise SupervisionError("batch has no supervised tokens")
    loss = total / float(n_sup * d_lat)
    fl = frame_losses[0] if len(frame_losses) == 1 else np.array([f.mean() for f in frame_losses])
    return LossReport(loss, n_sup, n_mask, fl, [it[3] for it in items])


def train_step(samples: EditSample | Sequence[EditSample], params: dict[str, nx.Tensor],
               opt_state: nx.OptimizerState, model_cfg: ModelConfig, codec: Codec, vocab: Vocab,
               cfg: StepConfig, rng: np.random.Generator) -> LossReport:
    """Forward, masked loss, backward and one AdamW update (parameters change in place)."""
    if isinstance(samples, EditSample):
        samples = [samples]
    for p in params.values():
        p.zero_grad()
    report = batch_loss(samples, params, model_cfg, codec, vocab, cfg, rng)
    nx.backward(report.loss)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    if cfg.max_grad_norm > 0:
        nx.clip_grad_norm(grads, cfg.max_grad_norm)
    nx.adamw_step(params, grads, opt_state, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
    return report
