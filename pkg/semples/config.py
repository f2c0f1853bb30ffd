# MIT License
# Copyright (c) 2024 The semples authors

import enum
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

from .default_values import (
    DEFAULT_BG_THRESHOLD,
    DEFAULT_CHECKPOINT_EVERY,
    DEFAULT_CLAMP_EPS,
    DEFAULT_GENERATOR_PRIOR_LOGIT,
    DEFAULT_GENERATOR_WIDTHS,
    DEFAULT_PROMPT_INIT_STD,
    DEFAULT_SEED,
    DEFAULT_WEIGHT_DECAY,
    SEED_ENV_VAR,
)
from .errors import ConfigError

logger = logging.getLogger(__name__)


class LossFlag(str, enum.Enum):
    MATCH = "match"
    PROMPT_I = "prompt_I"
    PROMPT_T = "prompt_T"
    REFINE = "refine"

    @classmethod
    def parse(cls, value: str) -> "LossFlag":
        try:
            return cls(value.strip())
        except ValueError:
            valid = ", ".join(flag.value for flag in cls)
            raise ConfigError(f"Unknown loss flag {value!r}, valid flags are: {valid}") from None


ALL_LOSSES: FrozenSet[LossFlag] = frozenset(LossFlag)


def _as_flag(flag: Union[str, LossFlag]) -> LossFlag:
    return flag if isinstance(flag, LossFlag) else LossFlag.parse(flag)


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a training run.

    The per phase epoch fields are optional, when left unset the phase
    runs `epochs` epochs.
    """

    lambda_b: float
    lambda_T: float
    lambda_refine: float
    prompt_len: int
    batch_size: int
    lr_phaseA: float
    lr_phaseB: float
    lr_phaseC: float
    epochs: int
    clamp_eps: float = DEFAULT_CLAMP_EPS
    seed: int = DEFAULT_SEED
    enabled_losses: FrozenSet[LossFlag] = ALL_LOSSES
    epochs_phaseA: Optional[int] = None
    epochs_phaseB: Optional[int] = None
    epochs_phaseC: Optional[int] = None
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    prompt_init_std: float = DEFAULT_PROMPT_INIT_STD
    bg_threshold: float = DEFAULT_BG_THRESHOLD
    checkpoint_every: int = DEFAULT_CHECKPOINT_EVERY
    generator_widths: Tuple[int, ...] = field(default=DEFAULT_GENERATOR_WIDTHS)
    generator_prior_logit: float = DEFAULT_GENERATOR_PRIOR_LOGIT

    def __post_init__(self) -> None:
        object.__setattr__(self, "enabled_losses", frozenset(_as_flag(flag) for flag in self.enabled_losses))
        object.__setattr__(self, "generator_widths", tuple(int(width) for width in self.generator_widths))

        for name in ("lambda_b", "lambda_T", "lambda_refine", "weight_decay"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be a finite non negative number, got {value}")

        for name in ("lr_phaseA", "lr_phaseB", "lr_phaseC", "prompt_init_std"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be a positive number, got {value}")

        for name in ("prompt_len", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")

        for name in ("epochs_phaseA", "epochs_phaseB", "epochs_phaseC"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be at least 1 when set, got {value}")

        if not 0 < self.clamp_eps <= 0.01:
            raise ConfigError(f"clamp_eps must be within (0, 0.01], got {self.clamp_eps}")

        if not 0.0 <= self.bg_threshold <= 1.0:
            raise ConfigError(f"bg_threshold must be within [0, 1], got {self.bg_threshold}")

        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every can not be negative, got {self.checkpoint_every}")

        if not self.generator_widths or any(width < 1 for width in self.generator_widths):
            raise ConfigError(f"generator_widths must be positive integers, got {self.generator_widths}")

        if not math.isfinite(self.generator_prior_logit):
            raise ConfigError("generator_prior_logit must be finite")

    def phase_epochs(self, phase: str) -> int:
        """Epochs for phase `A`, `B` or `C`."""
        value = getattr(self, f"epochs_phase{phase}")
        return self.epochs if value is None else value

    def phase_lr(self, phase: str) -> float:
        return getattr(self, f"lr_phase{phase}")

    def loss_enabled(self, flag: LossFlag) -> bool:
        return flag in self.enabled_losses

    def to_lines(self) -> List[str]:
        """Returns the configuration as `key=value` lines, the same flat
        format `read_config_file` consumes."""
        lines = []
        for name, value in asdict(self).items():
            if value is None:
                continue
            lines.append(f"{name}={_format_value(name, value)}")
        return lines


def _format_value(name: str, value) -> str:
    if name == "enabled_losses":
        return ",".join(sorted(LossFlag(flag).value for flag in value))
    if name == "generator_widths":
        return ",".join(str(width) for width in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_optional_int(value: str) -> Optional[int]:
    return None if value.strip().lower() in ("", "none") else int(value)


def _parse_losses(value: str) -> FrozenSet[LossFlag]:
    return frozenset(LossFlag.parse(item) for item in value.split(",") if item.strip())


def _parse_widths(value: str) -> Tuple[int, ...]:
    return tuple(int(item) for item in value.split(",") if item.strip())


_PARSERS: Dict[str, Callable[[str], object]] = {
    "lambda_b": float,
    "lambda_T": float,
    "lambda_refine": float,
    "prompt_len": int,
    "batch_size": int,
    "lr_phaseA": float,
    "lr_phaseB": float,
    "lr_phaseC": float,
    "epochs": int,
    "clamp_eps": float,
    "seed": int,
    "enabled_losses": _parse_losses,
    "epochs_phaseA": _parse_optional_int,
    "epochs_phaseB": _parse_optional_int,
    "epochs_phaseC": _parse_optional_int,
    "weight_decay": float,
    "prompt_init_std": float,
    "bg_threshold": float,
    "checkpoint_every": int,
    "generator_widths": _parse_widths,
    "generator_prior_logit": float,
}

assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


_PRESETS: Dict[str, Dict[str, object]] = {
    "voc": dict(
        lambda_b=2.4,
        lambda_T=0.02,
        lambda_refine=0.05,
        prompt_len=30,
        batch_size=64,
        lr_phaseA=5e-4,
        lr_phaseB=5e-4,
        lr_phaseC=5e-4,
        epochs=60,
    ),
    "coco": dict(
        lambda_b=0.75,
        lambda_T=0.01,
        lambda_refine=0.2,
        prompt_len=30,
        batch_size=64,
        lr_phaseA=5e-6,
        lr_phaseB=5e-6,
        lr_phaseC=5e-6,
        epochs=60,
    ),
    # Desk scale values for the toy corpus, see docs/toy.rst
    "toy": dict(
        lambda_b=0.05,
        lambda_T=0.02,
        lambda_refine=1.0,
        prompt_len=8,
        batch_size=8,
        lr_phaseA=1e-2,
        lr_phaseB=5e-3,
        lr_phaseC=5e-3,
        epochs=20,
    ),
}

PRESET_TAGS: Tuple[str, ...] = tuple(_PRESETS)


def default_config(dataset_tag: str) -> RunConfig:
    """Returns the preset configuration for `voc`, `coco` or `toy`."""
    try:
        preset = _PRESETS[dataset_tag]
    except KeyError:
        raise ConfigError(f"Unknown dataset tag {dataset_tag!r}, valid tags are: {', '.join(PRESET_TAGS)}") from None
    return RunConfig(**preset)


def parse_assignments(lines: Iterable[str], source: str = "overrides") -> Dict[str, str]:
    """Parses `key=value` lines. Blank lines and lines starting with `#`
    are ignored, unknown keys raise `ConfigError`."""
    assignments: Dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown configuration key {key!r}")
        assignments[key] = value.strip()
    return assignments


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Can not read config file {path}: {exc}") from exc
    return parse_assignments(text.splitlines(), source=str(path))


def apply_overrides(config: RunConfig, assignments: Mapping[str, str]) -> RunConfig:
    """Returns a copy of `config` with the textual `assignments` parsed
    by field type and applied."""
    changes = {}
    for key, value in assignments.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            changes[key] = _PARSERS[key](value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"Invalid value {value!r} for {key}: {exc}") from exc
    return replace(config, **changes)


def resolve_config(
    preset: str,
    config_path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Builds the configuration of a command.

    Layers are applied in order: the preset, the config file, the
    `key=value` overrides. The seed environment variable is only used
    when neither the file nor the overrides set `seed`.
    """
    environ = os.environ if environ is None else environ
    config = default_config(preset)
    layered: Dict[str, str] = {}
    if config_path is not None:
        layered.update(read_config_file(config_path))
    layered.update(parse_assignments(overrides))

    if "seed" not in layered and environ.get(SEED_ENV_VAR):
        layered["seed"] = environ[SEED_ENV_VAR]
        logger.info(f"seed taken from {SEED_ENV_VAR}={environ[SEED_ENV_VAR]}")

    return apply_overrides(config, layered)
