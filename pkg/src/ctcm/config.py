"""Experiment configuration files.

A config is a YAML mapping.  Rates are per second, times are in hours and
converted to seconds (x3600) when read.  Any scalar under ``params`` that
names a rate or a site count may instead be a list, which turns the run into
a sweep over the Cartesian product.  Example::

    params:
      theta_a: 0.05
      theta_d: [0.2, 0.05, 0.0125]
      n: [1, 2, 4, 8, 16, 32]
      dim: 2
      eta: {kind: uniform-box, mean: [1, 1], half_width: 1}
    engines:
      - distribution: exponential
    horizon_h: 75
    burn_in_h: 10
    window_end_h: 75
    ensemble_size: 2000
    seed: 1
    output: {path: sweep.csv}

Each entry of ``engines`` picks a wait-time family.  Wait means come from the
rates (attach ``1/theta_a``, detach ``1/theta_d``).  Exponential waits run on
the Markov engine unless ``engine: semi-markov`` is given; the other families
always use per-site clocks.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .model import ModelParams, State, initial_state
from .simulator import SemiMarkovConfig
from .stochastic import as_perturbation, perturbation_spec, wait_from_mean

__all__ = [
    "ConfigError",
    "EngineSpec",
    "InitialSpec",
    "OutputSpec",
    "ExperimentConfig",
    "GridPoint",
    "load_config",
    "parse_config",
    "dump_config",
    "DEFAULT_ETA",
    "DEFAULT_N_SWEEP",
]

HOUR = 3600.0
DEFAULT_N_SWEEP = (1, 2, 4, 8, 16, 32)
DEFAULT_ETA = {"kind": "uniform-box", "mean": [1.0, 1.0], "half_width": 1.0}
DISTRIBUTIONS = ("exponential", "truncated-normal", "continuous-poisson")
ENGINES = ("markov", "semi-markov")
FORMATS = ("csv",)


class ConfigError(ValueError):
    """Invalid configuration; carries the offending field and source line."""

    def __init__(self, message: str, field: str = "", line: int | None = None):
        self.field = field
        self.line = line
        where = ""
        if line is not None:
            where += f"line {line}: "
        if field:
            where += f"{field}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class EngineSpec:
    distribution: str = "exponential"
    engine: str = ""  # resolved in __post_init__
    scale_s: float = 1.0  # truncated-normal standard deviation

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}; choose from {', '.join(DISTRIBUTIONS)}")
        engine = self.engine or ("markov" if self.distribution == "exponential" else "semi-markov")
        if engine not in ENGINES:
            raise ValueError(f"unknown engine {engine!r}")
        if engine == "markov" and self.distribution != "exponential":
            raise ValueError("the markov engine needs exponential waits")
        if not self.scale_s > 0:
            raise ValueError("scale_s must be positive")
        object.__setattr__(self, "engine", engine)
        object.__setattr__(self, "scale_s", float(self.scale_s))

    def build(self, params: ModelParams):
        """``"markov"`` or the :class:`SemiMarkovConfig` for these rates."""
        if self.engine == "markov":
            return "markov"
        return SemiMarkovConfig(
            wait_from_mean(self.distribution, 1.0 / params.theta_a, self.scale_s),
            wait_from_mean(self.distribution, 1.0 / params.theta_d, self.scale_s),
        )


@dataclass(frozen=True)
class InitialSpec:
    attached: bool = True
    origin: tuple[float, ...] | None = None

    def build(self, n: int, dim: int) -> State:
        origin = None if self.origin is None else np.asarray(self.origin, dtype=float)
        if origin is not None and origin.shape != (dim,):
            raise ValueError(f"origin has {origin.size} coordinates, expected {dim}")
        return initial_state(n, dim, attached=self.attached, origin=origin)


@dataclass(frozen=True)
class OutputSpec:
    path: str | None = None
    format: str = "csv"
    trajectories: str | None = None  # optional JSON-lines dump

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"unsupported output format {self.format!r}")


@dataclass(frozen=True)
class GridPoint:
    index: int
    params: ModelParams
    spec: EngineSpec


@dataclass(frozen=True)
class ExperimentConfig:
    theta_a: tuple[float, ...]
    theta_d: tuple[float, ...]
    n: tuple[int, ...] = DEFAULT_N_SWEEP
    dim: int = 2
    eta: dict = field(default_factory=lambda: dict(DEFAULT_ETA))
    support_radius: float | None = None
    engines: tuple[EngineSpec, ...] = (EngineSpec(),)
    initial: InitialSpec = InitialSpec()
    horizon_h: float = 75.0
    burn_in_h: float = 10.0
    window_end_h: float = 75.0
    ensemble_size: int = 2000
    seed: int = 0
    output: OutputSpec = OutputSpec()

    @property
    def horizon(self) -> float:
        return self.horizon_h * HOUR

    @property
    def burn_in(self) -> float:
        return self.burn_in_h * HOUR

    @property
    def window_end(self) -> float:
        return self.window_end_h * HOUR

    def grid(self) -> list[GridPoint]:
        """Sweep points in output order: n, then theta_a, theta_d, engine."""
        eta = as_perturbation(self.eta)
        points = []
        for n, ta, td, spec in itertools.product(self.n, self.theta_a, self.theta_d, self.engines):
            params = ModelParams(ta, td, n, self.dim, eta, self.support_radius)
            points.append(GridPoint(len(points), params, spec))
        return points

    def replace(self, **changes) -> "ExperimentConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return ExperimentConfig(**d)

    def to_dict(self) -> dict:
        return {
            "params": {
                "theta_a": list(self.theta_a),
                "theta_d": list(self.theta_d),
                "n": list(self.n),
                "dim": self.dim,
                "eta": perturbation_spec(as_perturbation(self.eta)),
                **({"support_radius": self.support_radius} if self.support_radius is not None else {}),
            },
            "engines": [asdict(e) for e in self.engines],
            "initial": {
                "attached": self.initial.attached,
                **({"origin": list(self.initial.origin)} if self.initial.origin is not None else {}),
            },
            "horizon_h": self.horizon_h,
            "burn_in_h": self.burn_in_h,
            "window_end_h": self.window_end_h,
            "ensemble_size": self.ensemble_size,
            "seed": self.seed,
            "output": {k: v for k, v in asdict(self.output).items() if v is not None},
        }


# ---------------------------------------------------------------------------
# parsing


class _Lines:
    """Source line lookup for dotted field paths in a composed YAML tree."""

    def __init__(self, node):
        self.node = node

    def __call__(self, path: str, exact: bool = False) -> int | None:
        """Line of ``path``, or of its deepest present ancestor unless ``exact``."""
        node = self.node
        line = None if node is None else node.start_mark.line + 1
        for part in path.split("."):
            if isinstance(node, yaml.MappingNode):
                for key, value in node.value:
                    if key.value == part:
                        node, line = value, key.start_mark.line + 1
                        break
                else:
                    return None if exact else line
            elif isinstance(node, yaml.SequenceNode) and part.isdigit() and int(part) < len(node.value):
                node = node.value[int(part)]
                line = node.start_mark.line + 1
            else:
                return None if exact else line
        return line


_TOP_KEYS = {
    "params", "engines", "initial", "horizon_h", "burn_in_h", "window_end_h", "ensemble_size", "seed", "output",
}
_PARAM_KEYS = {"theta_a", "theta_d", "n", "dim", "eta", "support_radius"}


def _as_list(value, path, line, kind=float) -> tuple:
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ConfigError("must not be empty", path, line(path))
    out = []
    for j, v in enumerate(items):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"expected a number, got {v!r}", path, line(f"{path}.{j}" if isinstance(value, list) else path))
        if kind is int and int(v) != v:
            raise ConfigError(f"expected an integer, got {v!r}", path, line(path))
        out.append(kind(v))
    return tuple(out)


def _number(d: dict, key: str, default, path: str, line, kind=float):
    v = d.get(key, default)
    if v is None:
        raise ConfigError("is required", path, line(path))
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", path, line(path))
    if kind is int and int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}", path, line(path))
    return kind(v)


def _mapping(value, path, line) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError("expected a mapping", path, line(path))
    return value


def _reject_unknown(d: dict, allowed: set, prefix: str, line) -> None:
    for key in d:
        if key not in allowed:
            path = f"{prefix}.{key}" if prefix else str(key)
            raise ConfigError(f"unknown field (expected one of {', '.join(sorted(allowed))})", path, line(path))


def parse_config(text: str) -> ExperimentConfig:
    """Parse YAML text; raises :class:`ConfigError` naming the bad field and line."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML ({getattr(exc, 'problem', exc)})", "", None if mark is None else mark.line + 1)
    line = _Lines(node)
    raw = _mapping(raw, "", line)
    _reject_unknown(raw, _TOP_KEYS, "", line)

    p = _mapping(raw.get("params"), "params", line)
    _reject_unknown(p, _PARAM_KEYS, "params", line)
    for key in ("theta_a", "theta_d"):
        if key not in p:
            raise ConfigError("is required", f"params.{key}", line("params"))
    theta_a = _as_list(p["theta_a"], "params.theta_a", line)
    theta_d = _as_list(p["theta_d"], "params.theta_d", line)
    for key, values in (("theta_a", theta_a), ("theta_d", theta_d)):
        if any(not v > 0 for v in values):
            raise ConfigError("rates must be positive (per second)", f"params.{key}", line(f"params.{key}"))
    ns = _as_list(p.get("n", list(DEFAULT_N_SWEEP)), "params.n", line, int)
    if any(v < 1 for v in ns):
        raise ConfigError("site counts must be at least 1", "params.n", line("params.n"))
    dim = _number(p, "dim", 2, "params.dim", line, int)
    if dim < 1:
        raise ConfigError("must be at least 1", "params.dim", line("params.dim"))
    eta_raw = p.get("eta")
    if eta_raw is None:
        eta_raw = {"kind": "uniform-box", "mean": [1.0] * dim, "half_width": 1.0}
    try:
        eta = as_perturbation(_mapping(eta_raw, "params.eta", line))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid perturbation law ({exc})", "params.eta", line("params.eta")) from None
    if eta.dim != dim:
        raise ConfigError(f"has dimension {eta.dim}, but dim is {dim}", "params.eta", line("params.eta"))
    support_radius = p.get("support_radius")
    if support_radius is not None:
        support_radius = _number(p, "support_radius", None, "params.support_radius", line)
        if support_radius < 0:
            raise ConfigError("must be nonnegative", "params.support_radius", line("params.support_radius"))

    engines_raw = raw.get("engines", [{"distribution": "exponential"}])
    if not isinstance(engines_raw, list) or not engines_raw:
        raise ConfigError("expected a non-empty list", "engines", line("engines"))
    engines = []
    for j, e in enumerate(engines_raw):
        path = f"engines.{j}"
        e = _mapping(e, path, line)
        _reject_unknown(e, {"distribution", "engine", "scale_s"}, path, line)
        try:
            engines.append(EngineSpec(e.get("distribution", "exponential"), e.get("engine", ""), e.get("scale_s", 1.0)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), path, line(path)) from None

    ini = _mapping(raw.get("initial"), "initial", line)
    _reject_unknown(ini, {"attached", "origin"}, "initial", line)
    attached = ini.get("attached", True)
    if not isinstance(attached, bool):
        raise ConfigError("expected true or false", "initial.attached", line("initial.attached"))
    origin = ini.get("origin")
    if origin is not None:
        origin = _as_list(origin, "initial.origin", line)
        if len(origin) != dim:
            raise ConfigError(f"has {len(origin)} coordinates, expected {dim}", "initial.origin", line("initial.origin"))

    horizon_h = _number(raw, "horizon_h", 75.0, "horizon_h", line)
    burn_in_h = _number(raw, "burn_in_h", 10.0, "burn_in_h", line)
    window_end_h = _number(raw, "window_end_h", horizon_h, "window_end_h", line)
    if not 0 <= burn_in_h < window_end_h <= horizon_h:
        raise ConfigError(
            f"need 0 <= burn_in_h < window_end_h <= horizon_h (got {burn_in_h}, {window_end_h}, {horizon_h})",
            "window_end_h", line("window_end_h", True) or line("burn_in_h", True) or line("horizon_h"),
        )
    size = _number(raw, "ensemble_size", 2000, "ensemble_size", line, int)
    if size < 1:
        raise ConfigError("must be at least 1", "ensemble_size", line("ensemble_size"))
    seed = _number(raw, "seed", 0, "seed", line, int)
    if seed < 0:
        raise ConfigError("must be nonnegative", "seed", line("seed"))

    out = _mapping(raw.get("output"), "output", line)
    _reject_unknown(out, {"path", "format", "trajectories"}, "output", line)
    try:
        output = OutputSpec(out.get("path"), out.get("format", "csv"), out.get("trajectories"))
    except ValueError as exc:
        raise ConfigError(str(exc), "output.format", line("output.format")) from None

    return ExperimentConfig(
        theta_a=theta_a,
        theta_d=theta_d,
        n=ns,
        dim=dim,
        eta=perturbation_spec(eta),
        support_radius=support_radius,
        engines=tuple(engines),
        initial=InitialSpec(attached, origin),
        horizon_h=horizon_h,
        burn_in_h=burn_in_h,
        window_end_h=window_end_h,
        ensemble_size=size,
        seed=seed,
        output=output,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", str(path)) from None
    return parse_config(text)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


def from_mapping(data: dict[str, Any]) -> ExperimentConfig:
    """Parse an in-memory mapping with the same rules as a file."""
    return parse_config(yaml.safe_dump(data, sort_keys=False))
