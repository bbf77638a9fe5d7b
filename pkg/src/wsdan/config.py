"""Training configuration and the plain ``key = value`` config format."""
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from ._validation import ConfigError, check_threshold

__all__ = ["TrainConfig", "read_config_file", "parse_config_text"]


@dataclass
class TrainConfig:
    # optimization
    epochs: int = 80
    batch_size: int = 16
    lr_init: float = 0.001
    lr_decay: float = 0.9
    lr_decay_every_epochs: int = 2
    momentum: float = 0.9
    weight_decay: float = 1e-5
    # augmentation and regularization
    theta_c: float = 0.5
    theta_d: float = 0.5
    theta_loc: float = 0.1
    beta: float = 0.05
    lam: float = 1.0
    crop: bool = True
    drop: bool = True
    augment: str = "attention"
    select_mode: str = "uniform"
    center_mode: str = "class"
    random_crop_min_scale: float = 0.5
    random_drop_fraction: float = 0.5
    # model
    num_parts: int = 32
    num_features: int = 64
    pool: str = "avg"
    last_stride: int = 2
    input_size: int = 64
    num_classes: int = 0
    # data and bookkeeping
    seed: int = 0
    train_manifest: str = ""
    val_manifest: str = ""
    test_manifest: str = ""
    val_fraction: float = 0.1
    checkpoint_dir: str = "checkpoints"

    def validate(self):
        positive = ("batch_size", "lr_decay_every_epochs", "num_parts", "num_features",
                    "input_size", "num_classes", "last_stride")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("epochs", "lr_init", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)!r}")
        for name in ("theta_c", "theta_d", "theta_loc", "beta", "momentum", "lr_decay",
                     "val_fraction", "random_crop_min_scale", "random_drop_fraction"):
            check_threshold(getattr(self, name), name)
        choices = {"augment": ("attention", "random"), "select_mode": ("uniform", "weighted"),
                   "center_mode": ("class", "global"), "pool": ("avg", "max")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, fields[key].type)
        return cls(**kwargs)


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        values[key.strip()] = value.strip()
    return values


def read_config_file(path):
    """Return the raw key/value mapping of a config file.

    Relative manifest and checkpoint paths are resolved against the config
    file's directory.
    """
    path = Path(path)
    values = parse_config_text(path.read_text(encoding="utf-8"))
    for key in ("train_manifest", "val_manifest", "test_manifest", "checkpoint_dir"):
        if values.get(key):
            p = Path(values[key])
            values[key] = str(p if p.is_absolute() else path.parent / p)
    return values
