"""Run configuration: model dimensions and training hyperparameters.

Config files are UTF-8 ``key=value`` lines ('#' starts a comment). Keys
match the dataclass field names below; ``preset`` selects the desk or
full-scale base configuration before the remaining keys are applied.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass
class PipelineConfig:
    n_input: int = 256        # partial-input point budget
    k: int = 16               # feature-map rows
    d: int = 16               # feature-map columns
    heads: int = 4            # feature-map channels
    n_sparse: int = 128
    ratio: int = 4            # dense points per sparse point
    steps: int = 5            # feedback blocks
    kappa: int = 8            # neighborhood size
    c_enc: int = 64           # encoder output width
    c_coarse: int = 32        # coarse feature channels
    c_expand: int = 16        # expansion feature width
    sparse_width: int = 64    # per-path width inside the sparse encoder
    expansion_mode: str = "feedback"
    coarse_mode: str = "sfm"  # or "gfv" (max-pooled baseline)
    dtype: str = "float32"

    @property
    def n_coarse(self):
        return (self.k // 2) * (self.d // 2)

    @property
    def n_dense(self):
        return self.ratio * self.n_sparse

    def validate(self):
        if self.k % 2 or self.d % 2:
            raise ConfigError(f"k and d must be even (got k={self.k}, d={self.d})")
        if self.k < 4 or self.d < 4:
            raise ConfigError("k and d must be at least 4")
        if self.expansion_mode not in ("feedback", "duplication", "multibranch"):
            raise ConfigError(f"unknown expansion_mode {self.expansion_mode!r}")
        if self.coarse_mode not in ("sfm", "gfv"):
            raise ConfigError(f"unknown coarse_mode {self.coarse_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.n_sparse > self.n_input + self.n_coarse:
            raise ConfigError("n_sparse exceeds merged input+coarse point count")
        return self


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_decay: float = 0.7     # multiplied in every decay_every epochs
    decay_every: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    coarse_loss: bool = False   # opt-in extra Chamfer term on the coarse cloud
    train_stage: str = "full"   # "full" or "coarse" (coarse-decoder-only training)
    n_ground_truth: int = 1024  # complete-cloud budget for synthetic data

    def validate(self):
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.train_stage not in ("full", "coarse"):
            raise ConfigError(f"unknown train_stage {self.train_stage!r}")
        return self

    def lr_for_epoch(self, epoch):
        """Learning rate for a 1-based epoch index: decayed every
        decay_every epochs."""
        return self.lr * self.lr_decay ** (epoch // self.decay_every)


PRESETS = {
    # desk-scale defaults (the dataclass defaults)
    "desk": {},
    # full-scale settings from the reference configuration; widths that the
    # reference leaves open keep their desk values
    "full": {
        "n_input": 2048, "k": 64, "d": 64, "heads": 32, "n_sparse": 1024,
        "ratio": 4, "steps": 9, "kappa": 16, "c_expand": 64,
    },
}


class ConfigError(ValueError):
    pass


def _coerce(current, value, key, lineno):
    try:
        if isinstance(current, bool):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"line {lineno}: invalid value {value!r} for key {key!r}")


def parse_config_text(text):
    """Parse key=value lines into (PipelineConfig, TrainConfig)."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        entries.append((lineno, key, value))

    pipe_kwargs = {}
    for lineno, key, value in entries:
        if key == "preset":
            if value not in PRESETS:
                raise ConfigError(f"line {lineno}: unknown preset {value!r}")
            pipe_kwargs.update(PRESETS[value])

    pipe = PipelineConfig(**pipe_kwargs)
    train = TrainConfig()
    pipe_fields = {f.name for f in dataclasses.fields(PipelineConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    for lineno, key, value in entries:
        if key == "preset":
            continue
        if key in pipe_fields:
            setattr(pipe, key, _coerce(getattr(pipe, key), value, key, lineno))
        elif key in train_fields:
            setattr(train, key, _coerce(getattr(train, key), value, key, lineno))
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
    return pipe.validate(), train.validate()


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_dict(pipe, train):
    return {"pipeline": dataclasses.asdict(pipe), "train": dataclasses.asdict(train)}
