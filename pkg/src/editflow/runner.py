"""Run-directory plumbing: corpus, training loop with checkpoints, evaluation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .codec import Codec, build_codec
from .config import RunConfig
from .curriculum import next_sample
from .evaluation import MetricReport, metric_report
from .flow import train_step
from .inference import SamplerConfig, edit, working_clips
from .model import ModelConfig, init_params
from .synth import DatasetManifest, ManifestEntry, gen_dataset, regenerate, vocabulary_words
from .text import Vocab

log = logging.getLogger(__name__)

LOSS_LOG = "loss.log"
LOSS_HEADER = "step\tloss\tsupervised\tt\tstage\timage_fraction"


class CheckpointError(RuntimeError):
    pass


class CorpusError(RuntimeError):
    pass


def make_codec(cfg: RunConfig) -> Codec:
    c = cfg.codec
    return build_codec(c.seed, c.p, c.s_t, c.c)


def make_vocab() -> Vocab:
    return Vocab.from_words(vocabulary_words())


# ---------------------------------------------------------------- corpus

def corpus_counts(cfg: RunConfig) -> dict:
    return {(t, o): int(n) for t, per in cfg.data.counts.items() for o, n in per.items()}


def write_corpus(cfg: RunConfig, run_dir: Path, blobs: bool = False) -> DatasetManifest:
    manifest, samples = gen_dataset(corpus_counts(cfg), cfg.seed, cfg.data.video_frames,
                                    materialize=blobs)
    out = Path(run_dir) / "data"
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(manifest.to_text())
    if blobs:
        from .synth import write_clip
        for e, s in zip(manifest.entries, samples):
            for k, r in enumerate(s.references):
                write_clip(out / f"{e.seed}_ref{k}.raw", r)
            write_clip(out / f"{e.seed}_target.raw", s.target)
    return manifest


def read_corpus(run_dir: Path) -> DatasetManifest:
    path = Path(run_dir) / "data" / "manifest.txt"
    if not path.exists():
        raise CorpusError(f"no corpus at {path}; run gen-data first")
    return DatasetManifest.from_text(path.read_text())


def train_pool(manifest: DatasetManifest) -> dict[tuple[str, str], list[int]]:
    train, _ = manifest.split()
    pool: dict[tuple[str, str], list[int]] = {}
    for e in train.entries:
        pool.setdefault((e.task_id, e.origin), []).append(e.seed)
    return pool


def held_out(manifest: DatasetManifest, per_task: int) -> list[ManifestEntry]:
    _, test = manifest.split()
    seen: dict[tuple[str, str], int] = {}
    out = []
    for e in test.entries:
        key = (e.task_id, e.origin)
        if seen.get(key, 0) < per_task:
            seen[key] = seen.get(key, 0) + 1
            out.append(e)
    return out


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(run_dir: Path, step: int, params, opt: nx.OptimizerState, cfg: RunConfig,
                    vocab: Vocab) -> Path:
    d = Path(run_dir) / "checkpoints" / f"step_{step:06d}"
    d.mkdir(parents=True, exist_ok=True)
    nx.save_arrays(d / "params", nx.parameters_to_arrays(params))
    moments = {f"m/{k}": v for k, v in opt.m.items()} | {f"v/{k}": v for k, v in opt.v.items()}
    nx.save_arrays(d / "optim", moments)
    (d / "vocab.txt").write_text(vocab.to_text())
    stage = cfg.schedule().stage_at(step).stage_id if step < cfg.schedule().total_steps else None
    meta = {
        "step": step,
        "stage": stage,
        "optimizer_step_count": opt.step_count,
        "model": cfg.model_config().to_dict(),
        "codec": make_codec(cfg).params(),
        "rng": {"seed": cfg.seed, "stream": "default_rng([seed, step, slot])", "next_step": step},
        "vocab_max_len": vocab.max_len,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def list_checkpoints(run_dir: Path) -> list[Path]:
    root = Path(run_dir) / "checkpoints"
    return sorted(root.glob("step_*")) if root.exists() else []


def load_checkpoint(path: Path) -> tuple[dict[str, nx.Tensor], nx.OptimizerState, dict, Vocab]:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
        arrays = nx.load_arrays(path / "params")
        moments = nx.load_arrays(path / "optim")
        vocab = Vocab.from_text((path / "vocab.txt").read_text(), meta.get("vocab_max_len", 16))
    except (OSError, ValueError, KeyError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    params = {k: nx.Tensor(v, requires_grad=True, name=k) for k, v in sorted(arrays.items())}
    opt = nx.OptimizerState(
        {k[2:]: v.copy() for k, v in moments.items() if k.startswith("m/")},
        {k[2:]: v.copy() for k, v in moments.items() if k.startswith("v/")},
        int(meta["optimizer_step_count"]))
    return params, opt, meta, vocab


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    params: dict[str, nx.Tensor]
    opt: nx.OptimizerState
    losses: list[float] = field(default_factory=list)
    start_step: int = 0
    seconds: float = 0.0


def _log_line(step, report, stage, fraction) -> str:
    return (f"{step}\t{report.value:.9g}\t{report.supervised}\t{float(np.mean(report.t)):.6f}"
            f"\t{stage}\t{fraction:.6f}")


def train(cfg: RunConfig, run_dir: Path | None = None, until: int | None = None, resume: bool = True,
          pool: dict | None = None, checkpoint: bool = True) -> TrainResult:
    """Run the schedule from scratch or from the latest checkpoint.

    Every random draw is derived from (seed, step, slot), so an interrupted and
    resumed run reproduces the uninterrupted loss trace exactly.
    """
    codec = make_codec(cfg)
    vocab = make_vocab()
    model_cfg = cfg.model_config()
    schedule = cfg.schedule()
    end = schedule.total_steps if until is None else min(until, schedule.total_steps)
    if pool is None:
        if run_dir is None:
            raise CorpusError("either a run directory with a corpus or an explicit pool is required")
        pool = train_pool(read_corpus(run_dir))

    start = 0
    params = opt = None
    if run_dir is not None and resume:
        ckpts = [c for c in list_checkpoints(run_dir) if int(c.name[5:]) <= end]
        if ckpts:
            params, opt, meta, vocab = load_checkpoint(ckpts[-1])
            start = int(meta["step"])
    if params is None:
        params = init_params(model_cfg, codec.d_lat, len(vocab), vocab.max_len, cfg.train.init_seed)
        opt = nx.OptimizerState()

    log_fh = None
    if run_dir is not None:
        path = Path(run_dir) / LOSS_LOG
        kept = []
        if path.exists() and start > 0:
            kept = [ln for ln in path.read_text().splitlines()[1:] if int(ln.split("\t")[0]) < start]
        path.write_text("\n".join([LOSS_HEADER] + kept) + "\n")
        log_fh = open(path, "a")

    result = TrainResult(params, opt, start_step=start)
    t0 = time.time()
    prev_stage = schedule.stage_at(start).stage_id if start < end else None
    try:
        for step in range(start, end):
            stage = schedule.stage_at(step)
            if stage.stage_id != prev_stage:
                log.info("stage %d starts at step %d", stage.stage_id, step)
                prev_stage = stage.stage_id
            refs = [next_sample(schedule, step, slot, pool)[0] for slot in range(cfg.train.batch_size)]
            batch = [regenerate(ManifestEntry(r.seed, r.task_id, r.origin), cfg.data.video_frames)
                     for r in refs]
            step_cfg = cfg.train.step_config(stage.mask_ratio)
            rng = np.random.default_rng([cfg.seed, step, 1_000_003])
            report = train_step(batch, params, opt, model_cfg, codec, vocab, step_cfg, rng)
            result.losses.append(report.value)
            if log_fh is not None:
                log_fh.write(_log_line(step, report, stage.stage_id, stage.image_fraction) + "\n")
            done = step + 1
            if run_dir is not None and checkpoint and (done % cfg.train.checkpoint_every == 0 or done == end):
                log_fh.flush()
                save_checkpoint(run_dir, done, params, opt, cfg, vocab)
    finally:
        if log_fh is not None:
            log_fh.close()
    result.seconds = time.time() - t0
    return result


def read_loss_log(run_dir: Path) -> list[tuple[int, float, int, float, int, float]]:
    rows = []
    for ln in (Path(run_dir) / LOSS_LOG).read_text().splitlines()[1:]:
        s, loss, sup, t, stage, frac = ln.split("\t")
        rows.append((int(s), float(loss), int(sup), float(t), int(stage), float(frac)))
    return rows


# ---------------------------------------------------------------- evaluation

def evaluate(params, model_cfg: ModelConfig, cfg: RunConfig, entries: list[ManifestEntry],
             codec: Codec | None = None, vocab: Vocab | None = None) -> list[MetricReport]:
    """Edit each held-out sample and score it against its oracle target."""
    codec = codec or make_codec(cfg)
    vocab = vocab or make_vocab()
    out = []
    for e in entries:
        s = regenerate(e, cfg.data.video_frames)
        sampler = SamplerConfig(steps=cfg.sampler.steps, seed=(cfg.seed * 1_000_003 + e.seed) % 2**63)
        clip = edit(params, model_cfg, s, codec, vocab, sampler, cfg.train.repeat_n, cfg.train.use_repeat)
        _, target = working_clips(s, codec, cfg.train.repeat_n, cfg.train.use_repeat)
        out.append(metric_report(clip, target, codec, e.task_id, e.origin, e.seed, cfg.eval.threshold_db))
    return out
