"""Strict JSON experiment specs for the command-line tools.

A spec has the sections ``scene_a``, ``scene_b``, ``motions``, ``model``,
``train`` and ``output``. Every section is optional and falls back to the
desk-scale defaults; unknown keys anywhere are rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .losses import ConsistencyConfig, KernelSpec
from .model import ModelScale, get_preset
from .synthcsi import ACTIONS, LOCATIONS, MotionSpec, SceneSpec, default_scene, standard_motions
from .trainer import METHODS, Schedule, TrainConfig

TASKS = ("A2B", "B2A")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SceneSection(_Strict):
    rotation_deg: float = 0.0
    seed: int = 0
    n_antennas: int = Field(3, ge=1)
    tx_pos: Optional[tuple[float, float]] = None
    rx_pos: Optional[list[tuple[float, float]]] = None
    static_scatterers: Optional[list[tuple[float, float, float]]] = None
    rotation_center: Optional[tuple[float, float]] = None
    subject_center: Optional[tuple[float, float]] = None
    carrier_freq: float = Field(5.32e9, gt=0)
    direct_coeff: float = Field(1.0, gt=0)
    noise_std: float = Field(0.0005, ge=0)
    window_len: int = Field(32, ge=1)
    n_subcarriers: int = Field(30, ge=1)
    subcarrier_stride: int = Field(4, ge=1)

    def scene(self) -> SceneSpec:
        overrides = {k: getattr(self, k) for k in ("tx_pos", "rotation_center", "subject_center")
                     if getattr(self, k) is not None}
        if self.rx_pos is not None:
            overrides["rx_pos"] = tuple(tuple(p) for p in self.rx_pos)
        if self.static_scatterers is not None:
            overrides["static_scatterers"] = tuple(tuple(s) for s in self.static_scatterers)
        try:
            return default_scene(math.radians(self.rotation_deg), seed=self.seed, n_antennas=self.n_antennas,
                                 carrier_freq=self.carrier_freq, direct_coeff=self.direct_coeff,
                                 noise_std=self.noise_std, **overrides)
        except ConfigurationError as exc:
            raise ConfigurationError(f"scene: {exc}") from None


class MotionEntry(_Strict):
    action: Literal[ACTIONS]
    location: Literal[tuple(LOCATIONS)]
    subject_scale: float = Field(1.0, ge=0.5, le=1.5)
    duration: int = Field(1280, ge=1)
    frame_rate: float = Field(200.0, gt=0)
    seed: int = 0


class MotionSet(_Strict):
    """Either ``subjects`` (every action at every location per subject) or an explicit list."""

    subjects: int = Field(3, ge=1)
    duration: int = Field(1280, ge=1)
    frame_rate: float = Field(200.0, gt=0)
    seed: int = 0
    explicit: Optional[list[MotionEntry]] = None

    def motions(self) -> list[MotionSpec]:
        if self.explicit is not None:
            return [MotionSpec(**m.model_dump()) for m in self.explicit]
        return standard_motions(self.subjects, self.duration, self.frame_rate, self.seed)


class MotionsSection(_Strict):
    a: MotionSet = MotionSet(subjects=3, seed=1)
    b: MotionSet = MotionSet(subjects=3, seed=2)


class ModelSection(_Strict):
    preset: Literal["paper", "desk", "tiny"] = "desk"
    stem_channels: Optional[int] = Field(None, ge=1)
    block_widths: Optional[list[int]] = None
    block_strides: Optional[list[int]] = None
    bottleneck_channels: Optional[int] = Field(None, ge=1)

    def scale(self, input_shape: tuple[int, int, int]) -> ModelScale:
        base = get_preset(self.preset)
        fields = {k: v for k, v in self.model_dump(exclude={"preset"}).items() if v is not None}
        for key in ("block_widths", "block_strides"):
            if key in fields:
                fields[key] = tuple(fields[key])
        c, h, w = input_shape
        try:
            return ModelScale(**{**base.__dict__, **fields, "in_channels": c, "in_height": h, "in_width": w})
        except ConfigurationError as exc:
            raise ConfigurationError(f"model: {exc}") from None


class TrainSection(_Strict):
    tasks: list[Literal[TASKS]] = ["A2B", "B2A"]
    methods: list[Literal[METHODS]] = ["source_only", "adapose"]
    seeds: list[int] = [0, 1, 2]
    label_fraction: float = Field(0.01, ge=0, le=1)
    mask_seed: int = 0
    epochs: int = Field(50, ge=1)
    milestones: list[int] = [20, 30, 40]
    decay: float = Field(0.5, gt=0, le=1)
    batch_size: int = Field(16, ge=2)
    base_lr: float = Field(0.001, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    r1: float = Field(0.5, gt=0)
    r2: float = Field(0.5, gt=0)
    alpha: float = Field(0.3, ge=0)
    beta: float = Field(0.3, ge=0)
    epsilon: float = Field(1e-6, gt=0)
    mmd_weight: float = Field(1.0, ge=0)
    kernel: Literal["rbf_multi", "linear"] = "rbf_multi"
    bandwidths: Optional[list[float]] = None
    pretrain_epochs: int = Field(10, ge=0)
    eval_every: int = Field(10, ge=0)
    dtype: Literal["float32", "float64"] = "float32"

    @field_validator("seeds")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        return v

    @model_validator(mode="after")
    def _milestones(self):
        ms = self.milestones
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m <= 0 or m >= self.epochs for m in ms):
            raise ValueError("milestones must be strictly increasing and inside (0, epochs)")
        return self

    def config(self, scale: ModelScale, method: str, seed: int, label_fraction: float) -> TrainConfig:
        mode = "weakly_supervised" if label_fraction > 0 else "unsupervised"
        if method == "source_only" and label_fraction == 0:
            mode = "source_only"
        try:
            return TrainConfig(
                mode=mode, method=method, batch_size=self.batch_size, base_lr=self.base_lr,
                momentum=self.momentum,
                schedule=Schedule(tuple(self.milestones), self.decay, self.epochs),
                consistency=ConsistencyConfig(self.r1, self.r2, self.alpha, self.beta, self.epsilon,
                                              self.mmd_weight if method == "mmd_feature_align" else 0.0),
                kernel=KernelSpec(self.kernel, tuple(self.bandwidths) if self.bandwidths else None),
                scale=scale, seed=seed, data_seed=seed, label_fraction=label_fraction,
                eval_every=self.eval_every, pretrain_epochs=self.pretrain_epochs, dtype=self.dtype)
        except (ConfigurationError, ValueError) as exc:
            raise ConfigurationError(f"train: {exc}") from None


class OutputSection(_Strict):
    data_dir: str = "data"
    run_dir: str = "runs"
    report_dir: str = "reports"


class ExperimentSpec(_Strict):
    scene_a: SceneSection = SceneSection(rotation_deg=0.0, seed=1)
    scene_b: SceneSection = SceneSection(rotation_deg=90.0, seed=2)
    motions: MotionsSection = MotionsSection()
    model: Union[Literal["paper", "desk", "tiny"], ModelSection] = "desk"
    train: TrainSection = TrainSection()
    output: OutputSection = OutputSection()

    def model_section(self) -> ModelSection:
        return ModelSection(preset=self.model) if isinstance(self.model, str) else self.model

    def data_hash(self) -> str:
        """Digest of everything that determines the generated datasets."""
        doc = self.model_dump(include={"scene_a", "scene_b", "motions"}, mode="json")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_spec(doc) -> ExperimentSpec:
    try:
        return ExperimentSpec.model_validate(doc)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid experiment spec: {_format_errors(exc)}") from None


def load_spec(path) -> ExperimentSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read spec {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_spec(doc)
