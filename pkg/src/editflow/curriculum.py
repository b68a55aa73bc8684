"""Two-stage image/video mixing schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synth import MULTI_REF_TASKS, TASKS

# image share of each stage's corpus: 2M images + 350K videos, then 260K images + 116K videos
STAGE1_IMAGE_FRACTION = 2_000_000 / (2_000_000 + 350_000)
STAGE2_IMAGE_FRACTION = 260_000 / (260_000 + 116_000)

SINGLE_REF_TASKS = tuple(t for t in TASKS if t not in MULTI_REF_TASKS)


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class StageSpec:
    stage_id: int
    image_fraction: float
    tasks: tuple[str, ...]
    steps: int
    mask_ratio: float = 0.25
    task_weights: dict[str, float] | None = None

    def __post_init__(self):
        if not 0 <= self.image_fraction <= 1:
            raise ScheduleError(f"image_fraction {self.image_fraction} outside [0,1]")
        if self.steps <= 0:
            raise ScheduleError("stage step budget must be positive")
        unknown = set(self.tasks) - set(TASKS)
        if unknown:
            raise ScheduleError(f"unknown tasks {sorted(unknown)}")
        if not 0 <= self.mask_ratio < 1:
            raise ScheduleError("mask_ratio must lie in [0,1)")

    @property
    def video_fraction(self) -> float:
        return 1.0 - self.image_fraction

    def weight(self, task: str) -> float:
        if self.task_weights is None:
            return 1.0
        return float(self.task_weights.get(task, 0.0))


@dataclass(frozen=True)
class Schedule:
    stages: tuple[StageSpec, ...]
    seed: int = 0

    @property
    def total_steps(self) -> int:
        return sum(s.steps for s in self.stages)

    def boundaries(self) -> list[int]:
        """First global step of each stage."""
        return list(np.cumsum([0] + [s.steps for s in self.stages[:-1]]))

    def stage_at(self, step: int) -> StageSpec:
        if not 0 <= step < self.total_steps:
            raise ScheduleError(f"step {step} outside [0, {self.total_steps})")
        for start, stage in zip(self.boundaries(), self.stages):
            if step < start + stage.steps:
                return stage
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class SampleRef:
    task_id: str
    origin: str
    seed: int


def default_schedule(seed: int = 0, stage1_steps: int = 2000, stage2_steps: int = 400,
                     mask_ratio: float = 0.25) -> Schedule:
    return Schedule((
        StageSpec(1, STAGE1_IMAGE_FRACTION, SINGLE_REF_TASKS, stage1_steps, mask_ratio),
        StageSpec(2, STAGE2_IMAGE_FRACTION, tuple(TASKS), stage2_steps, mask_ratio),
    ), seed)


def next_sample(schedule: Schedule, step: int, slot: int = 0,
                pool: dict[tuple[str, str], list[int]] | None = None) -> tuple[SampleRef, int]:
    """Draw the ``slot``-th sample of ``step``; a pure function of (seed, step, slot).

    With a ``pool`` (task, origin) -> seeds the sample comes from that corpus,
    otherwise a fresh even seed is drawn (odd seeds are held out).
    """
    stage = schedule.stage_at(step)
    rng = np.random.default_rng([schedule.seed, step, slot])
    origin = "image" if rng.random() < stage.image_fraction else "video"
    tasks = [t for t in stage.tasks if origin in TASKS[t].modalities and stage.weight(t) > 0]
    if pool is not None:
        tasks = [t for t in tasks if pool.get((t, origin))]
    if not tasks:
        raise ScheduleError(f"stage {stage.stage_id} has no task available for origin {origin!r}")
    w = np.array([stage.weight(t) for t in tasks], dtype=np.float64)
    task = tasks[int(rng.choice(len(tasks), p=w / w.sum()))]
    if pool is not None:
        seeds = pool[(task, origin)]
        seed = int(seeds[int(rng.integers(len(seeds)))])
    else:
        seed = 2 * int(rng.integers(2**61))
    return SampleRef(task, origin, seed), stage.stage_id


def parse_ratio(ratio) -> float:
    """'1:3' (video:image) or a bare image fraction -> image fraction."""
    if isinstance(ratio, str):
        v, i = (float(x) for x in ratio.split(":"))
        if v < 0 or i < 0 or v + i == 0:
            raise ScheduleError(f"bad ratio {ratio!r}")
        return i / (v + i)
    if isinstance(ratio, (tuple, list)):
        v, i = ratio
        return i / (v + i)
    return float(ratio)


def ratio_sweep(ratios, steps: int, tasks: tuple[str, ...] = SINGLE_REF_TASKS, seed: int = 0,
                mask_ratio: float = 0.25) -> list[Schedule]:
    """One single-stage schedule per video:image ratio, identical apart from the image fraction."""
    return [Schedule((StageSpec(1, parse_ratio(r), tuple(tasks), steps, mask_ratio),), seed)
            for r in ratios]


MIX_RATIOS = ("1:1", "1:2", "1:3", "1:4")
