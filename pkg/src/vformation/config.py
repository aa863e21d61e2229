"""Experiment configuration files.

An experiment is described by an INI file with one section per component::

    [experiment]
    mode = ares
    seed = 7
    runs = 1

    [flock]
    bird_count = 3

Missing keys take their defaults. ``emit`` writes the canonical form (every
key, fixed order, 17 significant digits), so that ``parse(emit(c)) == c`` and
the SHA-256 digest of the canonical text identifies an experiment.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field, fields

from .ares import AresConfig
from .dampc import DampcConfig
from .errors import ConfigurationError
from .flock import FlockParams, InitBounds, format_float
from .games import GameConfig
from .pso import PsoConfig
from .smc import SmcPlan

MODES = ("ares", "dampc", "game-brg", "game-rdg", "game-ampc", "smc-batch")
RUN_MODES = MODES[:-1]


class ConfigErrors(ConfigurationError):
    """All problems found in one configuration, each naming ``section.key``."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class ExperimentSettings:
    mode: str = "ares"
    seed: int = 0
    runs: int = 1
    target: str = "ares"
    removed_birds: tuple[int, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    flock: FlockParams = field(default_factory=FlockParams)
    init: InitBounds = field(default_factory=InitBounds)
    pso: PsoConfig = field(default_factory=PsoConfig)
    ares: AresConfig = field(default_factory=AresConfig)
    dampc: DampcConfig = field(default_factory=DampcConfig)
    game: GameConfig = field(default_factory=GameConfig)
    smc: SmcPlan = field(default_factory=SmcPlan)

    @property
    def mode(self) -> str:
        return self.experiment.mode

    @property
    def seed(self) -> int:
        return self.experiment.seed

    @property
    def run_mode(self) -> str:
        """Mode executed per run (the batch target for ``smc-batch``)."""
        return self.experiment.target if self.mode == "smc-batch" else self.mode

    @property
    def runs(self) -> int:
        if self.mode == "smc-batch":
            return self.smc.sample_count
        return self.experiment.runs

    def digest(self) -> str:
        return hashlib.sha256(emit(self).encode()).hexdigest()

    def replace(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)


SECTIONS = {
    "experiment": ExperimentSettings,
    "flock": FlockParams,
    "init": InitBounds,
    "pso": PsoConfig,
    "ares": AresConfig,
    "dampc": DampcConfig,
    "game": GameConfig,
    "smc": SmcPlan,
}


# ---------------------------------------------------------------------------
# value codecs


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return value
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in _flatten(value))
    raise TypeError(f"cannot format {value!r}")


def _flatten(value):
    for v in value:
        if isinstance(v, (tuple, list)):
            yield from _flatten(v)
        else:
            yield v


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int(text: str) -> int:
    v = float(text) if any(c in text for c in ".eE") else int(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _parse_floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _parse_value(section: str, key: str, text: str, default):
    t = text.strip()
    if key == "upwash_mean":
        if t.lower() == "none":
            return None
        vals = _parse_floats(t)
        if len(vals) != 2:
            raise ValueError("expected two numbers")
        return tuple(vals)
    if key == "upwash_cov":
        vals = _parse_floats(t)
        if len(vals) != 4:
            raise ValueError("expected four numbers (row-major 2x2)")
        return ((vals[0], vals[1]), (vals[2], vals[3]))
    if key in ("position", "velocity"):
        vals = _parse_floats(t)
        if len(vals) != 2:
            raise ValueError("expected two numbers (lower, upper)")
        return tuple(vals)
    if key == "removed_birds":
        return tuple(_parse_int(s) for s in t.replace(",", " ").split()) if t else ()
    if key in ("mode", "target"):
        return t
    if key in ("k_max", "sample_count") and t.lower() in ("none", "auto", ""):
        return None
    if isinstance(default, bool):
        return _parse_bool(t)
    if isinstance(default, int) or key in ("k_max", "sample_count"):
        return _parse_int(t)
    value = float(t)
    if not math.isfinite(value):
        raise ValueError("must be finite")
    return value


# ---------------------------------------------------------------------------
# parse / validate / emit


def _defaults(cls) -> dict:
    out = {}
    for f in fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def _build(cls, values: dict, section: str, errors: list[str]):
    probe = cls.__new__(cls)
    for k, v in values.items():
        object.__setattr__(probe, k, v)
    problems = probe.violations() if hasattr(probe, "violations") else []
    if problems:
        errors.extend(f"{section}.{_field_of(p)}: {p}" for p in problems)
        return None
    try:
        return cls(**values)
    except (ConfigurationError, ValueError, TypeError) as exc:
        errors.append(f"{section}: {exc}")
        return None


def _field_of(message: str) -> str:
    return message.split()[0].rstrip(",")


def validate_config(text: str) -> ExperimentConfig:
    """Parse and check an INI configuration, reporting every problem at once."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigErrors([f"syntax: {exc}"]) from exc
    errors: list[str] = []
    for name in parser.sections():
        if name not in SECTIONS:
            errors.append(f"{name}: unknown section")
    built = {}
    raw_values = {}
    for name, cls in SECTIONS.items():
        defaults = _defaults(cls)
        values = dict(defaults)
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in defaults:
                    errors.append(f"{name}.{key}: unknown key")
                    continue
                try:
                    values[key] = _parse_value(name, key, raw, defaults[key])
                except ValueError as exc:
                    errors.append(f"{name}.{key}: {exc}")
        raw_values[name] = values
        if name == "experiment":
            built[name] = _check_experiment(values, errors)
        else:
            built[name] = _build(cls, values, name, errors)
    _cross_check(built, raw_values["flock"]["bird_count"], errors)
    if errors:
        raise ConfigErrors(errors)
    return ExperimentConfig(**built)


def _check_experiment(values: dict, errors: list[str]) -> ExperimentSettings:
    if values["mode"] not in MODES:
        errors.append(f"experiment.mode: must be one of {', '.join(MODES)}")
    if values["target"] not in RUN_MODES:
        errors.append(f"experiment.target: must be one of {', '.join(RUN_MODES)}")
    if not 0 <= values["seed"] < 2**64:
        errors.append("experiment.seed: must be an unsigned 64-bit integer")
    if values["runs"] < 1:
        errors.append("experiment.runs: must be >= 1")
    return ExperimentSettings(**values)


def _cross_check(built: dict, B, errors: list[str]) -> None:
    if not isinstance(B, int) or B < 1:
        return
    exp = built["experiment"]
    if built["dampc"] is not None:
        for msg in built["dampc"].violations(B):
            errors.append(f"dampc.{_field_of(msg)}: {msg}")
    game = built["game"]
    if game is not None and game.attacked_count >= B:
        errors.append("game.attacked_count: must be smaller than flock.bird_count")
    birds = exp.removed_birds
    if birds:
        if any(not 1 <= b <= B for b in birds):
            errors.append(f"experiment.removed_birds: bird numbers must lie in 1..{B}")
        if len(set(birds)) >= B:
            errors.append("experiment.removed_birds: at least one bird must remain")
        if len(set(birds)) != len(birds):
            errors.append("experiment.removed_birds: duplicate bird number")


def emit(config: ExperimentConfig) -> str:
    """Canonical INI text of ``config``."""
    parts = []
    for name in SECTIONS:
        obj = getattr(config, name)
        parts.append(f"[{name}]")
        for f in fields(obj):
            parts.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        parts.append("")
    return "\n".join(parts)


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return validate_config(fh.read())
