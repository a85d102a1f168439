"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Lists are comma separated. Unknown keys and out-of-range values are
rejected with the offending line number. Every key and its meaning:

=============  ==============================================================
kind           streamfunction: standard, corner_patched or cutoff
base           field truncated by ``cutoff``: standard or corner_patched
N              cut-off multiplier (plateau from level 2N/sqrt(A))
c0             corner-patch radius, in (0, 1/10)
epsilon        roll width, in (0, 1)
amplitude      stirring amplitude A >= 0 (single solves and Monte Carlo)
alpha          roll height exponent (height eps**alpha) >= 0
p              velocity norm index >= 1 (``inf`` allowed)
gamma          sweep amplitude exponent, A = eps**-gamma, >= 0
epsilons       sweep widths, strictly decreasing, each in (0, 1)
alphas         heights compared by ``alt-scaling``, must include 0
nx, ny         grid nodes (horizontal, vertical per unit-height strip)
ny_per_roll    vertical nodes per roll for stacked-roll strips
bc_bottom      neumann (insulated) or dirichlet (cold)
rtol           linear-solver relative residual
solver         ilu-gmres or direct
n_samples      Monte Carlo paths
seed           Monte Carlo seed (64-bit unsigned)
dt_safety      path time-step safety factor in (0, 1]
dt_max         largest path time step
workers        worker threads (results do not depend on it)
point          start point / probe ``x1, x2`` in cell coordinates
pe_resolution  Peclet quadrature points per axis of a quarter cell
sde_check      cross-check the coarsest sweep row by Monte Carlo (true/false)
sde_paths      paths used by that cross-check
n_levels       levels of the averaged-coefficient table
h_min, h_max   level range of that table
n_points       samples per traced level set
run_label      free-text label copied into the manifest
=============  ==============================================================
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields

_KINDS = ("standard", "corner_patched", "cutoff")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` and ``line`` locate the problem."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None,
                 path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}{message}")
        self.key = key
        self.line = line


@dataclass
class RunConfig:
    kind: str = "cutoff"
    base: str = "standard"
    N: float = 1.0
    c0: float = 0.05
    epsilon: float = 0.1
    amplitude: float = 100.0
    alpha: float = 0.0
    p: float = 2.0
    gamma: float = 2.0
    epsilons: tuple = (1 / 8, 1 / 12, 1 / 16, 1 / 24, 1 / 32, 1 / 48, 1 / 64)
    alphas: tuple = (0.0, 0.5, 1.0)
    nx: int = 512
    ny: int = 512
    ny_per_roll: int = 96
    bc_bottom: str = "neumann"
    rtol: float = 1e-10
    solver: str = "ilu-gmres"
    n_samples: int = 10_000
    seed: int = 20240607
    dt_safety: float = 0.1
    dt_max: float = 0.05
    workers: int = 1
    point: tuple = (0.5, 0.5)
    pe_resolution: int = 1024
    sde_check: bool = False
    sde_paths: int = 2000
    n_levels: int = 200
    h_min: float = 0.05
    h_max: float = 0.95
    n_points: int = 256
    run_label: str = "run"

    def __post_init__(self):
        validate(self)


KEYS = tuple(f.name for f in fields(RunConfig))
_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _parse_float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "infinity"):
        return math.inf
    return float(t)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: str, text: str):
    """Convert the text of ``key`` to its configured type."""
    if key not in _TYPES:
        raise ConfigError(f"unknown key {key!r}", key)
    kind = _TYPES[key]
    try:
        if kind is bool:
            return _parse_bool(text)
        if kind is int:
            return int(text.strip())
        if kind is float:
            return _parse_float(text)
        if kind is tuple:
            return tuple(_parse_float(s) for s in text.split(",") if s.strip())
        return text.strip()
    except ValueError as err:
        raise ConfigError(f"bad value for {key!r}: {err}", key) from None


def _check(cond: bool, key: str, message: str):
    if not cond:
        raise ConfigError(f"{key}: {message}", key)


def validate(cfg: RunConfig) -> None:
    """Range checks on every physical and numerical parameter."""
    _check(cfg.kind in _KINDS, "kind", f"must be one of {', '.join(_KINDS)}")
    _check(cfg.base in _KINDS[:2], "base", "must be standard or corner_patched")
    _check(0.0 < cfg.c0 < 0.1, "c0",
           f"{cfg.c0} is outside (0, 1/10); the corner patch needs c0 < 1/10")
    _check(cfg.N > 0, "N", "must be positive")
    _check(0.0 < cfg.epsilon < 1.0, "epsilon", f"{cfg.epsilon} is outside (0, 1)")
    _check(cfg.amplitude >= 0, "amplitude", "must be non-negative")
    _check(cfg.alpha >= 0, "alpha", "must be non-negative")
    _check(cfg.p >= 1, "p", f"{cfg.p} is below 1")
    _check(cfg.gamma >= 0, "gamma", "must be non-negative")
    _check(len(cfg.epsilons) > 0, "epsilons", "needs at least one value")
    _check(all(0.0 < e < 1.0 for e in cfg.epsilons), "epsilons", "every value must lie in (0, 1)")
    _check(all(b < a for a, b in zip(cfg.epsilons, cfg.epsilons[1:])), "epsilons",
           "must be strictly decreasing")
    _check(all(a >= 0 for a in cfg.alphas), "alphas", "must be non-negative")
    _check(0.0 in cfg.alphas, "alphas", "must include 0")
    for key in ("nx", "ny", "ny_per_roll"):
        _check(getattr(cfg, key) >= 8, key, "must be at least 8")
    _check(cfg.bc_bottom in ("neumann", "dirichlet"), "bc_bottom", "must be neumann or dirichlet")
    _check(0.0 < cfg.rtol < 1.0, "rtol", "must lie in (0, 1)")
    _check(cfg.solver in ("ilu-gmres", "direct"), "solver", "must be ilu-gmres or direct")
    _check(cfg.n_samples >= 1, "n_samples", "must be positive")
    _check(0 <= cfg.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
    _check(0.0 < cfg.dt_safety <= 1.0, "dt_safety", "must lie in (0, 1]")
    _check(cfg.dt_max > 0, "dt_max", "must be positive")
    _check(cfg.workers >= 1, "workers", "must be at least 1")
    _check(len(cfg.point) == 2, "point", "needs exactly two coordinates")
    _check(cfg.pe_resolution >= 8, "pe_resolution", "must be at least 8")
    _check(cfg.sde_paths >= 1, "sde_paths", "must be positive")
    _check(cfg.n_levels >= 3, "n_levels", "must be at least 3")
    _check(0.0 < cfg.h_min < cfg.h_max < 1.0, "h_min", "need 0 < h_min < h_max < 1")
    _check(cfg.n_points >= 8, "n_points", "must be at least 8")


def parse_lines(lines, path: str | None = None) -> dict:
    """Key/value pairs of a config text, with line-numbered errors."""
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"expected 'key = value', got {text!r}", line=lineno, path=path)
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}", key, lineno, path)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", key, lineno, path)
        try:
            out[key] = (parse_value(key, value), lineno)
        except ConfigError as err:
            raise ConfigError(str(err), key, lineno, path) from None
    return out


def build(values: dict, lines: dict | None = None, path: str | None = None) -> RunConfig:
    """A validated config from parsed values; ``lines`` maps keys to line numbers."""
    try:
        return RunConfig(**values)
    except ConfigError as err:
        line = (lines or {}).get(err.key)
        raise ConfigError(str(err), err.key, line, path) from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a config file; ``overrides`` (key -> text) win."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        parsed = parse_lines(fh, path)
    values = {k: v for k, (v, _) in parsed.items()}
    lines = {k: n for k, (_, n) in parsed.items()}
    for key, text in (overrides or {}).items():
        values[key] = parse_value(key, text)
        lines.pop(key, None)
    return build(values, lines, path)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{k} = {format_value(getattr(cfg, k))}\n" for k in KEYS)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(cfg))
