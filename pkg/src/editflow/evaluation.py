"""Oracle-referenced metrics and per-task success rate."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .codec import Codec, LatentVideo, VideoClip, encode

PSNR_CAP = 99.0
DEFAULT_THRESHOLD_DB = 25.0


class MetricError(ValueError):
    pass


def _pixels(v) -> np.ndarray:
    if isinstance(v, VideoClip):
        return v.pixels
    if isinstance(v, LatentVideo):
        return v.tokens
    return np.asarray(v)


def mse(a, b) -> float:
    a, b = _pixels(a).astype(np.float64), _pixels(b).astype(np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for [0,1] pixels, capped at 99 dB."""
    m = mse(a, b)
    if m == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / m))


def temporal_consistency(v) -> float:
    """Mean cosine similarity of flattened adjacent frames (pixel or latent)."""
    x = _pixels(v).astype(np.float64)
    if x.shape[0] < 2:
        raise MetricError("temporal consistency needs at least two frames")
    flat = x.reshape(x.shape[0], -1)
    sims = []
    for a, b in zip(flat[:-1], flat[1:]):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            sims.append(1.0 if na == nb else 0.0)
        else:
            sims.append(float(np.clip(a @ b / (na * nb), -1.0, 1.0)))
    return float(np.mean(sims))


@dataclass
class MetricReport:
    task_id: str
    origin: str
    seed: int
    psnr: float
    mse: float
    pixel_tc: float
    latent_tc: float
    target_pixel_tc: float
    dynamics_error: float
    success: bool


def metric_report(output: VideoClip, target: VideoClip, codec: Codec, task_id: str, origin: str,
                  seed: int, threshold_db: float = DEFAULT_THRESHOLD_DB) -> MetricReport:
    p = psnr(output, target)
    if output.frames >= 2:
        ptc = temporal_consistency(output)
        z = encode(output, codec)
        ltc = temporal_consistency(z) if z.length >= 2 else float("nan")
        ttc = temporal_consistency(target)
        dyn = abs(ptc - ttc)
    else:
        ptc = ltc = ttc = dyn = float("nan")
    return MetricReport(task_id, origin, seed, p, mse(output, target), ptc, ltc, ttc, dyn, p >= threshold_db)


@dataclass
class TaskBreakdown:
    per_task: dict[str, dict[str, float]]
    task_sr: float
    threshold_db: float


def task_sr(reports: Iterable[MetricReport], threshold_db: float = DEFAULT_THRESHOLD_DB) -> TaskBreakdown:
    """Fraction of tasks whose mean PSNR reaches ``threshold_db``."""
    groups: dict[str, list[MetricReport]] = {}
    for r in reports:
        groups.setdefault(r.task_id, []).append(r)
    if not groups:
        raise MetricError("no reports to aggregate")
    per_task = {}
    for task in sorted(groups):
        # fixed order inside a group so the means do not depend on report order
        rs = sorted(groups[task], key=lambda r: (r.origin, r.seed, r.psnr))
        if not rs:
            raise MetricError(f"task {task} has no reports")
        mean_psnr = float(np.mean([r.psnr for r in rs]))
        per_task[task] = {
            "n": len(rs),
            "mean_psnr": mean_psnr,
            "mean_mse": float(np.mean([r.mse for r in rs])),
            "success_rate": float(np.mean([r.success for r in rs])),
            "mean_dynamics_error": _nanmean([r.dynamics_error for r in rs]),
            "passed": mean_psnr >= threshold_db,
        }
    sr = sum(v["passed"] for v in per_task.values()) / len(per_task)
    return TaskBreakdown(per_task, sr, threshold_db)


def _nanmean(xs) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else float("nan")


# ---------------------------------------------------------------- report files

SAMPLE_COLUMNS = ("task_id", "origin", "seed", "psnr", "mse", "pixel_tc", "latent_tc",
                  "target_pixel_tc", "dynamics_error", "success")
SUMMARY_COLUMNS = ("task_id", "n", "mean_psnr", "mean_mse", "success_rate", "mean_dynamics_error", "passed")


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6f}"
    return str(x)


def samples_csv(reports: Iterable[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_COLUMNS)
    for r in reports:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in SAMPLE_COLUMNS])
    return buf.getvalue()


def read_samples_csv(text: str) -> list[MetricReport]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(MetricReport(row["task_id"], row["origin"], int(row["seed"]),
                                *(float(row[c]) for c in SAMPLE_COLUMNS[3:9]), row["success"] == "1"))
    return out


def summary_csv(bd: TaskBreakdown) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for task, row in bd.per_task.items():
        w.writerow([task] + [_fmt(row[c]) for c in SUMMARY_COLUMNS[1:]])
    return buf.getvalue()


def summary_text(bd: TaskBreakdown) -> str:
    lines = [f"threshold_db {bd.threshold_db:g}", f"task_sr {bd.task_sr:.6f}"]
    for task, row in bd.per_task.items():
        lines.append(f"{task} mean_psnr {row['mean_psnr']:.4f} passed {int(row['passed'])}")
    return "\n".join(lines) + "\n"
