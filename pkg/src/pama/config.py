"""Schedule and training configuration objects."""

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Raised when a config file or config value is invalid."""


@dataclass(frozen=True)
class StageSchedule:
    """Per-stage loss weights plus histogram/subsampling knobs.

    Defaults: lambda_ss decays (12, 9, 7) across stages, lambda_r and
    lambda_m stay at 2, lambda_h grows (0.25, 0.5, 1), and the pixel
    reconstruction weight is 50.  The self-similarity/REMD/moment weights
    are normalized by their per-stage sum when a stage loss is assembled
    (e.g. 12/(12+2+2) = 0.75 for stage 1); lambda_h is applied raw.
    """

    stages: int = 3
    lambda_ss: tuple = (12.0, 9.0, 7.0)
    lambda_r: tuple = (2.0, 2.0, 2.0)
    lambda_m: tuple = (2.0, 2.0, 2.0)
    lambda_h: tuple = (0.25, 0.5, 1.0)
    lambda_rec_pixel: float = 50.0
    hist_bins: int = 64
    hist_falloff: float = 0.02
    subsample_limit: int = 1024
    # Alternative reading of the self-similarity normalization axis; the
    # default normalizes both distance matrices along rows.
    ss_column_normalize_content: bool = False

    def __post_init__(self):
        if not 1 <= self.stages <= 3:
            raise ConfigError(f"stages must be in 1..3, got {self.stages}")
        for name in ("lambda_ss", "lambda_r", "lambda_m", "lambda_h"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != self.stages:
                raise ConfigError(
                    f"{name} needs {self.stages} entries, got {len(vals)}"
                )
            if any(v < 0 for v in vals):
                raise ConfigError(f"{name} entries must be >= 0")
            object.__setattr__(self, name, vals)
        if self.lambda_rec_pixel < 0:
            raise ConfigError("lambda_rec_pixel must be >= 0")
        if self.hist_bins < 2:
            raise ConfigError("hist_bins must be >= 2")
        if self.hist_falloff <= 0:
            raise ConfigError("hist_falloff must be > 0")
        if self.subsample_limit < 2:
            raise ConfigError("subsample_limit must be >= 2")

    def feature_weights(self, stage: int):
        """Normalized (ss, r, m) weights for a 0-based stage index."""
        if not 0 <= stage < self.stages:
            raise ConfigError(f"stage index {stage} outside schedule")
        ss = self.lambda_ss[stage]
        r = self.lambda_r[stage]
        m = self.lambda_m[stage]
        total = ss + r + m
        if total == 0:
            return 0.0, 0.0, 0.0
        return ss / total, r / total, m / total


@dataclass
class TrainConfig:
    """Desk-scale training run configuration."""

    content_dir: str = ""
    style_dir: str = ""
    out_dir: str = "runs/default"
    profile: str = "tiny"
    batch_size: int = 8
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 2000
    resize: int = 512
    crop: int = 256
    seed: int = 0
    checkpoint_every: int = 500
    num_threads: int = 1
    schedule: StageSchedule = field(default_factory=StageSchedule)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.crop < 16:
            raise ConfigError("crop must be >= 16")
        if self.resize < self.crop:
            raise ConfigError("resize must be >= crop")
        if self.profile not in ("full", "tiny"):
            raise ConfigError(f"unknown profile {self.profile!r}")


_SCHEDULE_KEYS = {
    "stages", "lambda_ss", "lambda_r", "lambda_m", "lambda_h",
    "lambda_rec_pixel", "hist_bins", "hist_falloff", "subsample_limit",
    "ss_column_normalize_content",
}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"schedule"}
_REQUIRED_TRAIN_KEYS = {"content_dir", "style_dir"}


def load_train_config(path) -> TrainConfig:
    """Parse a YAML training config, validating keys by name."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    known = _TRAIN_KEYS | _SCHEDULE_KEYS
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path}: unknown key {key!r}")
    for key in _REQUIRED_TRAIN_KEYS:
        if key not in raw:
            raise ConfigError(f"{path}: missing required key {key!r}")
    sched_kwargs = {k: v for k, v in raw.items() if k in _SCHEDULE_KEYS}
    train_kwargs = {k: v for k, v in raw.items() if k in _TRAIN_KEYS}
    if "lambda_h" in sched_kwargs or "lambda_ss" in sched_kwargs:
        for name in ("lambda_ss", "lambda_r", "lambda_m", "lambda_h"):
            if name in sched_kwargs:
                sched_kwargs[name] = tuple(sched_kwargs[name])
    schedule = StageSchedule(**sched_kwargs)
    return TrainConfig(schedule=schedule, **train_kwargs)
