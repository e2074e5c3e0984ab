"""
Run configuration for codelnet.

Values are layered: built-in defaults < CODELNET_SEED environment variable
< `key = value` config file < command-line flags. The resolved config is
written next to every run as `run.conf` and can be fed back verbatim.
"""

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .augment import AugmentError, AugmentParams
from .dataset import GROUPINGS, SplitSpec
from .network import NetworkConfig, desk_scale_config, paper_scale_config
from .optim import OPTIMIZERS, TrainConfig
from .preprocess import CHANNELS

SEED_ENV = "CODELNET_SEED"
PRESET_NAMES = ("desk", "paper")


class ConfigError(Exception):
    """Configuration file or value is invalid."""

    pass


def _parse_int_list(value: str, what: str) -> tuple[int, ...]:
    try:
        items = tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of integers, got {value!r}")
    if not items or any(i < 1 for i in items):
        raise ConfigError(f"{what} must list positive integers, got {value!r}")
    return items


@dataclass
class RunConfig:
    """Every setting of a pipeline run."""

    seed: Optional[int] = None  # resolved from CODELNET_SEED, else 0

    # Network
    channels: str = "both"  # t1c | t2 | both
    preset: str = "desk"  # desk | paper
    canvas: int = 64
    filters: int = 16
    kernels: str = "32,16,8"  # one branch per kernel size
    pool: int = 2  # 0 disables pooling
    fc_sizes: str = "64"

    # Training
    optimizer: str = "sgd"
    lr: float = 0.001
    lr_halving_period: int = 50
    batch_size: int = 32
    early_stop_delta: float = 0.02
    early_stop_patience: int = 10
    epochs: int = 100
    augment_fold: int = 0

    # Augmentation
    max_shift: int = 20
    max_rotation: float = 20.0
    flip_probability: float = 0.5

    # Preprocessing
    dilation_radius: int = 5

    # Split
    test_per_class: int = 15
    train_per_class: int = 0  # 0: largest balanced draw the pool allows
    validation_fraction: float = 0.2
    grouping: str = "patient"

    # Paths and execution
    manifest: str = ""
    out: str = "runs/latest"
    workers: int = 1

    def __post_init__(self):
        """Resolve the seed from the environment."""
        if self.seed is None:
            env_seed = os.environ.get(SEED_ENV)
            if env_seed:
                try:
                    self.seed = int(env_seed)
                except ValueError:
                    raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}")
            else:
                self.seed = 0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_sources(
        cls,
        config_path: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """
        Resolve a config from defaults, environment, file and overrides.

        Args:
            config_path: Optional `key = value` file
            overrides: Flag values; None entries are ignored

        Raises:
            ConfigError: Unknown keys or uncoercible values
        """
        values: dict[str, Any] = {}
        if config_path is not None:
            values.update(load_config_file(config_path))
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key not in cls.field_names():
                raise ConfigError(f"Unknown setting {key!r}")
            values[key] = _coerce(key, value)
        config = cls(**values)
        config.validate()
        return config

    def validate(self) -> None:
        """Check every value; raises ConfigError naming the first bad setting."""
        if self.seed is None or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")
        if self.channels not in CHANNELS:
            raise ConfigError(f"channels must be one of {', '.join(CHANNELS)}, got {self.channels!r}")
        if self.preset not in PRESET_NAMES:
            raise ConfigError(f"preset must be one of {', '.join(PRESET_NAMES)}, got {self.preset!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(
                f"optimizer must be one of {', '.join(OPTIMIZERS)}, got {self.optimizer!r}"
            )
        if self.grouping not in GROUPINGS:
            raise ConfigError(f"grouping must be one of {', '.join(GROUPINGS)}, got {self.grouping!r}")
        for name in ("canvas", "filters", "lr_halving_period", "batch_size", "early_stop_patience",
                     "epochs", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("pool", "augment_fold", "dilation_radius", "test_per_class", "train_per_class"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not self.early_stop_delta > 0:
            raise ConfigError(f"early_stop_delta must be positive, got {self.early_stop_delta}")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )
        _parse_int_list(self.kernels, "kernels")
        _parse_int_list(self.fc_sizes, "fc_sizes")
        try:
            self.augment_params().validate(self.resolved_canvas)
        except AugmentError as e:
            raise ConfigError(str(e)) from e

    @property
    def resolved_canvas(self) -> int:
        return paper_scale_config().canvas if self.preset == "paper" else self.canvas

    @property
    def channel_names(self) -> tuple[str, ...]:
        return CHANNELS[self.channels]

    def network_config(self) -> NetworkConfig:
        input_channels = len(self.channel_names)
        if self.preset == "paper":
            return paper_scale_config(input_channels=input_channels, init_seed=self.seed)
        return desk_scale_config(
            input_channels=input_channels,
            canvas=self.canvas,
            kernels=_parse_int_list(self.kernels, "kernels"),
            filters=self.filters,
            pool=self.pool or None,
            fc_sizes=_parse_int_list(self.fc_sizes, "fc_sizes"),
            init_seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            base_lr=self.lr,
            lr_halving_period=self.lr_halving_period,
            batch_size=self.batch_size,
            early_stop_delta=self.early_stop_delta,
            early_stop_patience=self.early_stop_patience,
            max_epochs=self.epochs,
            augmentation_fold=self.augment_fold,
            master_seed=self.seed,
        )

    def split_spec(self) -> SplitSpec:
        return SplitSpec(
            test_per_class=self.test_per_class,
            train_per_class=self.train_per_class or None,
            validation_fraction=self.validation_fraction,
            grouping=self.grouping,
            seed=self.seed,
        )

    def augment_params(self) -> AugmentParams:
        return AugmentParams(
            max_shift=self.max_shift,
            max_rotation=self.max_rotation,
            flip_probability=self.flip_probability,
        )

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with the given non-None settings replaced."""
        clean = {k: _coerce(k, v) for k, v in overrides.items() if v is not None}
        updated = replace(self, **clean)
        updated.validate()
        return updated

    def write(self, path: Union[str, Path]) -> Path:
        """Write the resolved config as `key = value` lines."""
        path = Path(path)
        lines = ["# codelnet resolved run configuration"]
        for name in self.field_names():
            value = getattr(self, name)
            lines.append(f"{name} = {repr(value) if isinstance(value, float) else value}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _coerce(key: str, value: Any) -> Any:
    """Convert a raw value to the type of the field's default."""
    default = RunConfig.__dataclass_fields__[key].default
    kind = int if key == "seed" else type(default)
    if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
        return value
    try:
        if kind is int:
            return int(str(value).strip())
        if kind is float:
            return float(str(value).strip())
        return str(value).strip()
    except ValueError:
        raise ConfigError(f"{key} expects {kind.__name__}, got {value!r}")


def load_config_file(path: Union[str, Path]) -> dict[str, Any]:
    """
    Parse a `key = value` file; `#` starts a comment line.

    Raises:
        ConfigError: Unreadable file, malformed line or unknown key
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e

    known = RunConfig.field_names()
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        values[key] = _coerce(key, value)
    return values


# Global config instance (can be overridden in tests)
_config: Optional[RunConfig] = None


def get_config() -> RunConfig:
    """Get the global configuration instance."""
    global _config
    if _config is None:
        _config = RunConfig()
    return _config


def set_config(config: Optional[RunConfig]) -> None:
    """Set the global configuration instance."""
    global _config
    _config = config
