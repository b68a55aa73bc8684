"""Toggle-matrix and mixing-ratio ablations over full train/eval runs."""
from __future__ import annotations

import copy
import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, StageConfig
from .curriculum import MIX_RATIOS, parse_ratio
from .evaluation import MetricReport, TaskBreakdown, task_sr
from .runner import evaluate, held_out, read_corpus, train, train_pool
from .synth import DatasetManifest

ABLATION_COLUMNS = ("row", "image", "repeat", "noise", "stage2", "image_fraction", "steps",
                    "task_sr", "mean_psnr", "success_rate", "pixel_tc", "latent_tc",
                    "dynamics_error", "final_loss")


@dataclass
class GridRow:
    name: str
    image: bool
    repeat: bool
    noise: bool
    stage2: bool
    config: RunConfig


@dataclass
class AblationRow:
    grid: GridRow
    breakdown: TaskBreakdown
    reports: list[MetricReport]
    final_loss: float

    def values(self) -> dict:
        cfg = self.grid.config
        rs = self.reports

        def m(attr):
            xs = [getattr(r, attr) for r in rs if not math.isnan(getattr(r, attr))]
            return float(np.mean(xs)) if xs else float("nan")
        return {
            "row": self.grid.name, "image": int(self.grid.image), "repeat": int(self.grid.repeat),
            "noise": int(self.grid.noise), "stage2": int(self.grid.stage2),
            "image_fraction": cfg.stages[0].image_fraction, "steps": sum(s.steps for s in cfg.stages),
            "task_sr": self.breakdown.task_sr, "mean_psnr": m("psnr"),
            "success_rate": float(np.mean([r.success for r in rs])), "pixel_tc": m("pixel_tc"),
            "latent_tc": m("latent_tc"), "dynamics_error": m("dynamics_error"),
            "final_loss": self.final_loss,
        }


def _variant(base: RunConfig, stages: list[StageConfig], repeat: bool, noise: bool) -> RunConfig:
    cfg = copy.deepcopy(base)
    cfg.stages = copy.deepcopy(stages)
    cfg.train.use_repeat = repeat
    cfg.train.use_noise = noise
    return cfg


def toggle_grid(base: RunConfig) -> list[GridRow]:
    """Five rows: video only, +images as single frames, +repeat, +token noise, +second stage."""
    s1 = copy.deepcopy(base.stages[0])
    video_only = copy.deepcopy(s1)
    video_only.image_fraction = 0.0
    rows = [
        GridRow("video_only", False, False, False, False, _variant(base, [video_only], False, False)),
        GridRow("image", True, False, False, False, _variant(base, [s1], False, False)),
        GridRow("image_repeat", True, True, False, False, _variant(base, [s1], True, False)),
        GridRow("image_repeat_noise", True, True, True, False, _variant(base, [s1], True, True)),
    ]
    if len(base.stages) > 1:
        rows.append(GridRow("image_repeat_noise_stage2", True, True, True, True,
                            _variant(base, base.stages[:2], True, True)))
    return rows


def ratio_grid(base: RunConfig, ratios=MIX_RATIOS) -> list[GridRow]:
    """Single-stage runs differing only in the video:image mixing ratio."""
    rows = []
    for r in ratios:
        s1 = copy.deepcopy(base.stages[0])
        s1.image_fraction = parse_ratio(r)
        rows.append(GridRow(f"ratio_{r.replace(':', 'to')}" if isinstance(r, str) else f"ratio_{r}",
                            True, True, True, False, _variant(base, [s1], True, True)))
    return rows


def ablation_matrix(grid: list[GridRow], manifest: DatasetManifest, per_task: int) -> list[AblationRow]:
    """Train every row from the same initial seed and score it on the shared held-out split."""
    pool = train_pool(manifest)
    entries = held_out(manifest, per_task)
    rows = []
    for g in grid:
        res = train(g.config, None, pool=pool, checkpoint=False)
        reports = evaluate(res.params, g.config.model_config(), g.config, entries)
        final = float(np.mean(res.losses[-10:])) if res.losses else float("nan")
        rows.append(AblationRow(g, task_sr(reports, g.config.eval.threshold_db), reports, final))
    return rows


def run_from_dir(base: RunConfig, run_dir, which: str = "all") -> list[AblationRow]:
    manifest = read_corpus(run_dir)
    grid = []
    if which in ("all", "toggles"):
        grid += toggle_grid(base)
    if which in ("all", "ratios"):
        grid += ratio_grid(base, base.eval.ablation_ratios)
    return ablation_matrix(grid, manifest, base.eval.per_task)


def ablation_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        v = r.values()
        w.writerow([f"{v[c]:.6f}" if isinstance(v[c], float) else v[c] for c in ABLATION_COLUMNS])
    return buf.getvalue()
