"""Run configuration: one JSON file per run directory, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .curriculum import SINGLE_REF_TASKS, STAGE1_IMAGE_FRACTION, STAGE2_IMAGE_FRACTION, Schedule, StageSpec
from .flow import StepConfig
from .model import ModelConfig
from .synth import TASKS


class ConfigError(ValueError):
    pass


@dataclass
class CodecConfig:
    seed: int = 0
    p: int = 8
    s_t: int = 4
    c: int = 3


@dataclass
class DataConfig:
    size: int = 16
    video_frames: int = 9
    # task -> {origin: count}; held-out samples are the odd seeds
    counts: dict = field(default_factory=lambda: {
        t: {o: 400 for o in spec.modalities} for t, spec in TASKS.items()})


@dataclass
class TrainConfig:
    batch_size: int = 8
    checkpoint_every: int = 200
    repeat_n: int = 9
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
    init_seed: int = 0

    def step_config(self, mask_ratio: float) -> StepConfig:
        names = {f.name for f in dataclasses.fields(StepConfig)}
        kw = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        return StepConfig(mask_ratio=mask_ratio, **kw)


@dataclass
class StageConfig:
    stage_id: int
    image_fraction: float
    tasks: list
    steps: int
    mask_ratio: float = 0.25
    task_weights: dict | None = None

    def spec(self) -> StageSpec:
        return StageSpec(self.stage_id, self.image_fraction, tuple(self.tasks), self.steps,
                         self.mask_ratio, self.task_weights)


def _default_stages():
    return [StageConfig(1, STAGE1_IMAGE_FRACTION, list(SINGLE_REF_TASKS), 2000),
            StageConfig(2, STAGE2_IMAGE_FRACTION, list(TASKS), 400)]


@dataclass
class SamplerSection:
    steps: int = 20


@dataclass
class EvalConfig:
    threshold_db: float = 25.0
    per_task: int = 50
    ablation_ratios: list = field(default_factory=lambda: ["1:1", "1:2", "1:3", "1:4"])


@dataclass
class RunConfig:
    seed: int = 0
    codec: CodecConfig = field(default_factory=CodecConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    stages: list = field(default_factory=_default_stages)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def model_config(self) -> ModelConfig:
        kw = dict(self.model)
        if "rope_split" in kw:
            kw["rope_split"] = tuple(kw["rope_split"])
        return ModelConfig(**kw)

    def schedule(self) -> Schedule:
        return Schedule(tuple(s.spec() for s in self.stages), self.seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model_config().to_dict()
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**data)


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    unknown = set(data) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    cfg = RunConfig()
    if "seed" in data:
        cfg.seed = int(data["seed"])
    for key, cls in (("codec", CodecConfig), ("data", DataConfig), ("train", TrainConfig),
                     ("sampler", SamplerSection), ("eval", EvalConfig)):
        if key in data:
            setattr(cfg, key, _build(cls, data[key], key))
    if "model" in data:
        model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
        unknown = set(data["model"]) - model_keys
        if unknown:
            raise ConfigError(f"model: unknown keys {sorted(unknown)}")
        cfg.model = dict(data["model"])
    if "stages" in data:
        cfg.stages = [_build(StageConfig, s, f"stages[{i}]") for i, s in enumerate(data["stages"])]
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    try:
        cfg.model_config()
        cfg.schedule()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    for task, per in cfg.data.counts.items():
        if task not in TASKS:
            raise ConfigError(f"data.counts: unknown task {task!r}")
        for origin, n in per.items():
            if origin not in TASKS[task].modalities:
                raise ConfigError(f"data.counts: task {task} has no {origin} modality")
            if int(n) < 0:
                raise ConfigError("data.counts must be non-negative")
    if (cfg.train.repeat_n - 1) % cfg.codec.s_t:
        raise ConfigError(f"train.repeat_n must be 1 mod {cfg.codec.s_t}")
    if (cfg.data.video_frames - 1) % cfg.codec.s_t:
        raise ConfigError(f"data.video_frames must be 1 mod {cfg.codec.s_t}")
    if cfg.data.size != 16:
        # named positions in the instruction templates are laid out on a 16x16 canvas
        raise ConfigError("data.size must be 16")
    if cfg.data.size % cfg.codec.p:
        raise ConfigError("data.size must be divisible by codec.p")


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    return from_dict(data)


def load(path) -> RunConfig:
    return loads(Path(path).read_text())
