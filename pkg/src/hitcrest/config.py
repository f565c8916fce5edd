"""Flat ``key = value`` run configuration.

Keys are dotted (``model.lambda``) or grouped under ``[section]`` headers.
Lines starting with ``#`` or ``;`` are comments. Unknown keys are errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .jumps import parse_family
from .model import ModelSpec, ModelVariant, SeriesControl


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _positive_float(text):
    value = float(text)
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"expected a positive number, got {text!r}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise ValueError(f"expected a positive integer, got {text!r}")
    return value


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    return value


def _int_list(text):
    values = [_positive_int(v) for v in text.replace(",", " ").split()]
    if not values:
        raise ValueError("expected at least one integer")
    return values


def parse_grid(text: str) -> Optional[np.ndarray]:
    """``start:stop:num`` (inclusive linspace), a comma list, or ``auto``."""
    text = text.strip()
    if text.lower() == "auto":
        return None
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid must be start:stop:num, got {text!r}")
        start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
        if num < 0:
            raise ValueError(f"grid size must be >= 0, got {num}")
        return np.linspace(start, stop, num)
    return np.array([float(v) for v in text.replace(",", " ").split()])


def _format_grid(grid) -> str:
    if grid is None:
        return "auto"
    return ", ".join(repr(float(v)) for v in grid)


SCHEMA = {
    "model.lambda": _positive_float,
    "model.x": _positive_float,
    "model.z": _positive_float,
    "model.jump_x": parse_family,
    "model.jump_z": parse_family,
    "model.variant": ModelVariant.parse,
    "fit.multistarts": _positive_int,
    "fit.tolerance": _positive_float,
    "fit.max_iter": _positive_int,
    "fit.seed": _u64,
    "series.epsilon": _positive_float,
    "series.hard_cap": _positive_int,
    "simulate.n": _positive_int,
    "simulate.seed": _u64,
    "study.sample_sizes": _int_list,
    "study.n_replicates": int,
    "study.t_grid": parse_grid,
    "study.seed": _u64,
}
REQUIRED = ("model.lambda", "model.x", "model.z", "model.jump_x", "model.jump_z")
BOUNDS_PREFIX = "fit.bounds."


def _bounds_pair(text):
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError(f"bounds need two numbers 'low, high', got {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if not lo < hi:
        raise ValueError(f"lower bound must be below upper bound, got {text!r}")
    return lo, hi


def _resolve_key(key: str) -> str:
    if key in SCHEMA or key.startswith(BOUNDS_PREFIX):
        return key
    matches = [full for full in SCHEMA if full.split(".", 1)[1] == key]
    if len(matches) == 1:
        return matches[0]
    if matches:
        raise KeyError(f"ambiguous key {key!r}; use one of {matches}")
    raise KeyError(f"unknown key {key!r}")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Raw ``{dotted key: value string}`` with ``source:line`` in every error."""
    raw = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split(" #", 1)[0].strip()
        if not stripped or stripped[0] in "#;":
            continue
        where = f"{source}:{lineno}"
        if stripped.startswith("["):
            if not stripped.endswith("]") or len(stripped) < 3:
                raise ConfigError(f"{where}: malformed section header {stripped!r}")
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"{where}: empty key")
        full = f"{section}.{key}" if section else key
        try:
            full = _resolve_key(full)
        except KeyError as exc:
            raise ConfigError(f"{where}: {exc.args[0]}") from None
        if full in raw:
            raise ConfigError(f"{where}: duplicate key {full!r}")
        raw[full] = (value, where)
    return raw


@dataclass
class RunConfig:
    """Everything a command needs, with defaults filled in."""

    spec: ModelSpec
    control: SeriesControl = field(default_factory=SeriesControl)
    multistarts: int = 8
    tolerance: float = 1e-8
    max_iter: Optional[int] = None
    fit_seed: int = 0
    bounds: dict = field(default_factory=dict)
    simulate_n: Optional[int] = None
    simulate_seed: int = 0
    sample_sizes: list = field(default_factory=lambda: [50, 100, 200])
    n_replicates: int = 100
    t_grid: Optional[np.ndarray] = None
    study_seed: int = 0

    @classmethod
    def from_raw(cls, raw: dict) -> "RunConfig":
        values = {}
        bounds = {}
        for key, (text, where) in raw.items():
            try:
                if key.startswith(BOUNDS_PREFIX):
                    bounds[key[len(BOUNDS_PREFIX):]] = _bounds_pair(text)
                else:
                    values[key] = SCHEMA[key](text)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{where}: {key}: {exc}") from None
        missing = [key for key in REQUIRED if key not in values]
        if missing:
            raise ConfigError(f"missing required key(s): {', '.join(missing)}")
        try:
            spec = ModelSpec(values["model.lambda"], values["model.jump_x"], values["model.x"],
                             values["model.jump_z"], values["model.z"],
                             values.get("model.variant", ModelVariant.I))
            control = SeriesControl(values.get("series.epsilon", 1e-10),
                                    values.get("series.hard_cap", 10_000))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        unknown = set(bounds) - set(spec.param_names)
        if unknown:
            raise ConfigError(f"bounds for unknown parameter(s) {sorted(unknown)}; "
                              f"free parameters are {spec.param_names}")
        n_rep = values.get("study.n_replicates", 100)
        if n_rep < 2:
            raise ConfigError(f"study.n_replicates must be >= 2, got {n_rep}")
        return cls(spec=spec, control=control,
                   multistarts=values.get("fit.multistarts", 8),
                   tolerance=values.get("fit.tolerance", 1e-8),
                   max_iter=values.get("fit.max_iter"),
                   fit_seed=values.get("fit.seed", 0), bounds=bounds,
                   simulate_n=values.get("simulate.n"),
                   simulate_seed=values.get("simulate.seed", 0),
                   sample_sizes=values.get("study.sample_sizes", [50, 100, 200]),
                   n_replicates=n_rep, t_grid=values.get("study.t_grid"),
                   study_seed=values.get("study.seed", 0))

    @property
    def fit_options(self) -> dict:
        return {"multistarts": self.multistarts, "tolerance": self.tolerance,
                "max_iter": self.max_iter, "bounds": self.bounds or None}

    def to_text(self) -> str:
        """Fully resolved configuration; parses back to an equal ``RunConfig``."""
        s = self.spec
        lines = [
            "[model]",
            f"lambda = {s.lam!r}",
            f"jump_x = {s.family_x}",
            f"x = {s.x!r}",
            f"jump_z = {s.family_z}",
            f"z = {s.z!r}",
            f"variant = {s.variant.value}",
            "",
            "[fit]",
            f"multistarts = {self.multistarts}",
            f"tolerance = {self.tolerance!r}",
        ]
        if self.max_iter is not None:
            lines.append(f"max_iter = {self.max_iter}")
        lines.append(f"seed = {self.fit_seed}")
        for name, (lo, hi) in sorted(self.bounds.items()):
            lines.append(f"bounds.{name} = {lo!r}, {hi!r}")
        lines += ["", "[series]", f"epsilon = {self.control.epsilon!r}",
                  f"hard_cap = {self.control.hard_cap}", "", "[simulate]"]
        if self.simulate_n is not None:
            lines.append(f"n = {self.simulate_n}")
        lines += [f"seed = {self.simulate_seed}", "", "[study]",
                  f"sample_sizes = {', '.join(str(n) for n in self.sample_sizes)}",
                  f"n_replicates = {self.n_replicates}",
                  f"t_grid = {_format_grid(self.t_grid)}",
                  f"seed = {self.study_seed}"]
        return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    return RunConfig.from_raw(parse_config_text(text, str(path)))


def loads_config(text: str) -> RunConfig:
    return RunConfig.from_raw(parse_config_text(text))
