"""Run configuration: experiment presets, flat ``key = value`` files."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import GaussianTarget, load_idx_images
from .errors import ConfigError, MissingDatasetError
from .networks import MlpSpec
from .trainer import TrainConfig

EXPERIMENTS = ("syn1", "syn2", "syn3", "mnist", "custom")

# (dim, q, head); syn targets are N((5,...,5), I)
PRESETS = {
    "syn1": {"dim": 2, "q": 10.0},
    "syn2": {"dim": 2, "q": 2.0},
    "syn3": {"dim": 10, "q": 2.0},
    "mnist": {"dim": 784, "q": 2.0},
}


@dataclass
class RunConfig:
    experiment: str = "syn2"
    dim: int = 2
    target_mean: float = 5.0
    target_scale: float = 1.0
    gen_hidden: str = "64,64,64"
    disc_hidden: str = "64,64,64"
    mnist_path: str = ""
    out: str = "runs/default"
    outer_steps: int = 6000
    inner_steps: int = 5
    batch_size: int = 256
    lr_gen: float = 1e-4
    lr_disc: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    q: float = 2.0
    lr_half_life: int = 1500
    seed: int = 0
    eval_every: int = 500
    checkpoint_every: int = 5000
    eval_samples: int = 10000
    hjb_samples: int = 2000
    wall_clock: bool = False

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    def train_config(self):
        names = set(TrainConfig.field_names())
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def specs(self):
        head = "sigmoid" if self.experiment == "mnist" else "linear"
        gen = MlpSpec(self.dim, _widths(self.gen_hidden, "gen_hidden"), self.dim, True, head)
        disc = MlpSpec(self.dim, _widths(self.disc_hidden, "disc_hidden"), 1, True)
        return gen, disc

    def data_source(self):
        if self.experiment == "mnist":
            if not self.mnist_path:
                raise MissingDatasetError("experiment mnist needs --mnist-path (IDX image file)")
            return load_idx_images(self.mnist_path)
        return GaussianTarget.isotropic(self.dim, self.target_mean, self.target_scale)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        preset = PRESETS.get(self.experiment)
        if preset is not None:
            for key, value in preset.items():
                if getattr(self, key) != value:
                    raise ConfigError(f"experiment {self.experiment} fixes {key} = {value}, got {getattr(self, key)}")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        self.specs()
        self.train_config()
        return self


def _widths(text, name):
    try:
        widths = tuple(int(w) for w in str(text).split(",") if w.strip())
    except ValueError:
        raise ConfigError(f"{name} must be comma-separated integers, got {text!r}") from None
    if not widths:
        raise ConfigError(f"{name} must list at least one hidden width")
    return widths


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key, value):
    """Convert a string value to the type of ``RunConfig.<key>``."""
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(RunConfig.keys())}")
    kind = _TYPES[key]
    text = str(value).strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r} (expected {kind})") from None
    return text


def parse_config_text(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = coerce(key, value)
    return values


def read_config_file(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def format_config(cfg):
    lines = ["# effective configuration"]
    for key, value in asdict(cfg).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_effective_config(cfg, out_dir):
    path = Path(out_dir) / "effective_config"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_config(cfg), encoding="utf-8")
    return path


def resolve(experiment=None, file_values=None, overrides=None, environ=None):
    """Preset, then config file, then explicit overrides.

    ``MFGAN_SEED`` supplies the seed when neither the file nor the overrides
    set one.
    """
    environ = os.environ if environ is None else environ
    merged = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if experiment is not None:
        merged["experiment"] = experiment
    name = merged.get("experiment", RunConfig.experiment)
    values = dict(PRESETS.get(name, {}))
    values.update(merged)
    values["experiment"] = name
    if "seed" not in values and environ.get("MFGAN_SEED"):
        values["seed"] = coerce("seed", environ["MFGAN_SEED"])
    for key in values:
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(RunConfig.keys())}")
    return RunConfig(**values).validate()
