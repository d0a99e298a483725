"""Experiment configuration, presets and JSON (de)serialization.

A config file is a JSON object with the sections ``code``, ``channel``,
``model``, ``train`` and ``eval`` plus the scalar ``mode``.  An optional
top-level ``"preset"`` (``"paper"`` or ``"desk"``) supplies defaults that
the remaining keys override.  Unknown keys are rejected.  Serialization
always writes the fully resolved config (no ``preset`` key), with sorted
keys, so parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError

MODES = ("mac2", "single_user")


@dataclass(frozen=True)
class CodeConfig:
    K: int = 51
    m: int = 3
    l: int = 17  # noqa: E741
    T: int = 8
    n_iter: int = 2


@dataclass(frozen=True)
class ChannelSection:
    snr_ff_db: float = 0.0


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    clamp_bound: float = 10.0
    dropout: float = 0.0
    share_parity_weights: bool = False


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8192
    total_batches: int = 180_000
    curriculum_batches: int = 30_000
    lr: float = 1e-3
    weight_decay: float = 0.01
    grad_clip: float = 0.5
    snr_start_db: float = 3.0
    snr_target_db: float = 0.0
    seed: int = 0
    calibration_batch: int = 16384
    log_every: int = 1


@dataclass(frozen=True)
class EvalConfig:
    trials: int = 100_000
    seed: int = 1
    stop_at_errors: int | None = None
    batch_size: int = 4096


@dataclass(frozen=True)
class ExperimentConfig:
    code: CodeConfig = field(default_factory=CodeConfig)
    channel: ChannelSection = field(default_factory=ChannelSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    mode: str = "mac2"

    def __post_init__(self):
        c = self.code
        if min(c.K, c.m, c.l, c.T) < 1 or c.n_iter < 0:
            raise ConfigurationError("code sizes must be positive and n_iter nonnegative")
        if c.K != c.l * c.m:
            raise ConfigurationError(f"K={c.K} must equal l*m = {c.l}*{c.m}")
        if self.model.d_model % self.model.n_heads:
            raise ConfigurationError(
                f"d_model={self.model.d_model} is not divisible by n_heads={self.model.n_heads}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        t = self.train
        if t.curriculum_batches > t.total_batches:
            raise ConfigurationError("curriculum_batches must not exceed total_batches")
        if min(t.batch_size, t.total_batches, t.lr, t.grad_clip) <= 0:
            raise ConfigurationError("batch_size, total_batches, lr and grad_clip must be positive")
        if self.eval.trials < 1:
            raise ConfigurationError("eval.trials must be at least 1")

    @property
    def num_users(self) -> int:
        return 2 if self.mode == "mac2" else 1

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with whole sections or section fields replaced.

        ``cfg.replace(train={"seed": 3}, mode="single_user")``
        """
        updates = {}
        for name, value in sections.items():
            current = getattr(self, name)
            if isinstance(value, dict):
                value = dataclasses.replace(current, **value)
            updates[name] = value
        return dataclasses.replace(self, **updates)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {
    "code": CodeConfig,
    "channel": ChannelSection,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def _paper() -> ExperimentConfig:
    return ExperimentConfig()


def _desk() -> ExperimentConfig:
    return ExperimentConfig(
        code=CodeConfig(K=12, m=2, l=6, T=6, n_iter=2),
        channel=ChannelSection(snr_ff_db=2.0),
        train=TrainConfig(batch_size=512, total_batches=5000, curriculum_batches=1000,
                          snr_target_db=2.0, calibration_batch=16384, log_every=10),
        eval=EvalConfig(trials=10_000, batch_size=4096),
    )


PRESETS = {"paper": _paper, "desk": _desk}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _section_from_dict(cls, base, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {where!r} must be an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigurationError(f"unknown config key {where}.{key}")
    return dataclasses.replace(base, **data)


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    base = preset(data.pop("preset")) if "preset" in data else ExperimentConfig()
    updates = {}
    for key, value in data.items():
        if key == "mode":
            updates["mode"] = value
        elif key in _SECTIONS:
            updates[key] = _section_from_dict(_SECTIONS[key], getattr(base, key), value, key)
        else:
            raise ConfigurationError(f"unknown config key {key}")
    return dataclasses.replace(base, **updates)


def loads(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")
    return from_dict(data)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def save(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.dumps())
