"""Run configuration: one JSON document covering every stage.

Unknown keys are rejected so typos fail loudly, and each command writes
the fully resolved config next to its outputs so a run can be reproduced
from its artifacts alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields
from pathlib import Path

from .backbone import BlockConfig
from .diffusion import TrainSchedule


@dataclass
class DataConfig:
    n_clips: int = 256
    height: int = 64
    width: int = 64
    n_frames: int = 17
    fps: float = 16.0
    motion_kinds: tuple = ("linear", "ballistic", "sinusoidal")
    mouth_gain: float | None = None  # None draws a gain per scene

    def __post_init__(self):
        self.motion_kinds = tuple(self.motion_kinds)
        for kind in self.motion_kinds:
            if kind not in ("linear", "ballistic", "sinusoidal"):
                raise ValueError(f"unknown motion kind {kind!r}")


@dataclass
class CodecConfig:
    mode: str = "identity"
    spatial_stride: int = 4
    temporal_stride: int = 1
    pretrain_steps: int = 400
    pretrain_lr: float = 2e-3


@dataclass
class SamplerConfig:
    steps: int = 50


@dataclass
class AblationConfig:
    """Reduced-scale settings for the variant comparison runs.

    The scenes are talking-head style (near-static ball, wide mouth) so
    lip articulation dominates what is left to learn, and the lip loss
    weight is raised accordingly.
    """

    seeds: tuple = (0, 1, 2)
    n_train_clips: int = 24
    n_eval_clips: int = 8
    height: int = 32
    width: int = 32
    n_frames: int = 9
    face_size: int = 18
    mouth_width: int = 12
    ball_speed: float = 0.15
    total_steps: int = 5000
    lr: float = 3e-3
    lambda_lip_end: float = 4.0
    batch_size: int = 8
    sampler_steps: int = 50
    depth: int = 3
    d_model: int = 96
    heads: int = 4
    d_cond: int = 48

    def __post_init__(self):
        self.seeds = tuple(self.seeds)


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    conditions: tuple = ("text", "image", "audio")
    data: DataConfig = None
    codec: CodecConfig = None
    model: BlockConfig = None
    schedule: TrainSchedule = None
    sampler: SamplerConfig = None
    ablation: AblationConfig = None

    def __post_init__(self):
        self.conditions = tuple(self.conditions)
        for name in self.conditions:
            if name not in ("text", "image", "audio"):
                raise ValueError(f"unknown condition {name!r}")
        self.data = self.data or DataConfig()
        self.codec = self.codec or CodecConfig()
        self.model = self.model or BlockConfig()
        self.schedule = self.schedule or TrainSchedule()
        self.sampler = self.sampler or SamplerConfig()
        self.ablation = self.ablation or AblationConfig()


_SECTIONS = {
    "data": DataConfig,
    "codec": CodecConfig,
    "model": BlockConfig,
    "schedule": TrainSchedule,
    "sampler": SamplerConfig,
    "ablation": AblationConfig,
}


def _build(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ValueError(f"{where} must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**payload)


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ValueError("config document must be a mapping")
    top = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - top
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=1)
        fh.write("\n")
