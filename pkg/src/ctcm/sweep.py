"""Running configured sweeps and writing their tables."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

import numpy as np

from .analysis import (
    CountDistribution,
    empirical_count_distribution,
    estimate_velocity,
    expected_velocity,
    steady_state,
    tv_distance,
)
from .config import ExperimentConfig, GridPoint
from .model import ModelParams
from .simulator import TrajectorySummary, simulate_ensemble

__all__ = ["SweepRow", "TheoryRow", "run_point", "run_sweep", "theory_rows", "write_csv", "write_theory", "axis_names"]

log = logging.getLogger(__name__)

UNITS_LINE = "# rates per second; times in seconds; velocities in length units per second"


def axis_names(dim: int) -> list[str]:
    return list("xyz"[:dim]) if dim <= 3 else [str(d) for d in range(dim)]


def _fmt(x) -> str:
    x = float(x)
    return "nan" if np.isnan(x) else repr(x)


@dataclass(frozen=True)
class SweepRow:
    """Aggregate result for one grid point."""

    n: int
    theta_a: float
    theta_d: float
    engine: str
    distribution: str
    M: int
    burn_in_s: float
    window_s: float
    est: np.ndarray
    se: np.ndarray
    theory: np.ndarray
    tv_to_sigma: float

    def within_tolerance(self, n_se: float = 3.0, rel: float = 0.05) -> np.ndarray:
        """Per coordinate: within ``n_se`` standard errors and ``rel`` relative error of theory."""
        diff = np.abs(self.est - self.theory)
        ok = diff <= n_se * self.se
        nonzero = self.theory != 0
        ok[nonzero] &= diff[nonzero] < rel * np.abs(self.theory[nonzero])
        return ok


@dataclass(frozen=True)
class TheoryRow:
    n: int
    theta_a: float
    theta_d: float
    sigma: CountDistribution
    theory: np.ndarray


def _member_record(point: GridPoint, s: TrajectorySummary, burn_in: float, window_end: float) -> dict:
    return {
        "trajectory_id": s.index,
        "grid_point": point.index,
        "n": point.params.n,
        "theta_a": point.params.theta_a,
        "theta_d": point.params.theta_d,
        "distribution": point.spec.distribution,
        "t_burn_centroid": s.centroid_at(burn_in).tolist(),
        "t_end_centroid": s.centroid_at(window_end).tolist(),
        "jump_count": s.jump_count,
        "occupancy": s.occupancy.tolist(),
    }


def run_point(
    config: ExperimentConfig,
    point: GridPoint,
    threads: int | None = None,
    trajectories: IO[str] | None = None,
) -> SweepRow:
    """Simulate one grid point; optionally stream per-member JSON lines."""
    params: ModelParams = point.params
    initial = config.initial.build(params.n, params.dim)
    burn_in, window_end = config.burn_in, config.window_end
    members = simulate_ensemble(
        params,
        point.spec.build(params),
        initial,
        config.horizon,
        config.ensemble_size,
        config.seed,
        window=(burn_in, window_end),
        threads=threads,
        stream=(point.index,),
    )
    kept = []
    for s in members:
        if trajectories is not None:
            trajectories.write(json.dumps(_member_record(point, s, burn_in, window_end)) + "\n")
        kept.append(s)
    vel = estimate_velocity(kept, burn_in, window_end)
    sigma = steady_state(params.n, params.theta_a, params.theta_d)
    tv = tv_distance(empirical_count_distribution(kept, burn_in, params.n), sigma)
    return SweepRow(
        params.n, params.theta_a, params.theta_d, point.spec.engine, point.spec.distribution,
        config.ensemble_size, burn_in, window_end - burn_in,
        vel.mean_velocity, vel.standard_error, expected_velocity(params), tv,
    )


def run_sweep(
    config: ExperimentConfig, threads: int | None = None, trajectories: IO[str] | None = None
) -> Iterator[SweepRow]:
    for point in config.grid():
        start = time.perf_counter()
        row = run_point(config, point, threads, trajectories)
        log.info(
            "n=%d theta_a=%g theta_d=%g %s/%s: %.2fs",
            row.n, row.theta_a, row.theta_d, row.engine, row.distribution, time.perf_counter() - start,
        )
        yield row


def write_csv(rows: Iterable[SweepRow], dim: int, fh: IO[str]) -> None:
    axes = axis_names(dim)
    cols = ["n", "theta_a", "theta_d", "engine", "distribution", "M", "burn_in_s", "window_s"]
    for prefix in ("est_v", "se_v", "theory_v"):
        cols += [prefix + a for a in axes]
    cols.append("tv_to_sigma")
    fh.write(UNITS_LINE + "\n")
    fh.write(",".join(cols) + "\n")
    for r in rows:
        fields = [str(r.n), _fmt(r.theta_a), _fmt(r.theta_d), r.engine, r.distribution, str(r.M),
                  _fmt(r.burn_in_s), _fmt(r.window_s)]
        fields += [_fmt(v) for v in r.est] + [_fmt(v) for v in r.se] + [_fmt(v) for v in r.theory]
        fields.append(_fmt(r.tv_to_sigma))
        fh.write(",".join(fields) + "\n")
        fh.flush()


def theory_rows(config: ExperimentConfig) -> list[TheoryRow]:
    """One row per distinct ``(n, theta_a, theta_d)``; engines do not matter here."""
    seen = set()
    rows = []
    for point in config.grid():
        p = point.params
        key = (p.n, p.theta_a, p.theta_d)
        if key in seen:
            continue
        seen.add(key)
        rows.append(TheoryRow(p.n, p.theta_a, p.theta_d, steady_state(*key), expected_velocity(p)))
    return rows


def write_theory(rows: Iterable[TheoryRow], dim: int, fh: IO[str]) -> None:
    """``sigma`` holds the count probabilities for ``k = 0..n`` separated by spaces."""
    axes = axis_names(dim)
    fh.write(UNITS_LINE + "\n")
    fh.write(",".join(["n", "theta_a", "theta_d"] + ["theory_v" + a for a in axes] + ["sigma"]) + "\n")
    for r in rows:
        fields = [str(r.n), _fmt(r.theta_a), _fmt(r.theta_d)] + [_fmt(v) for v in r.theory]
        fields.append(" ".join(_fmt(p) for p in r.sigma.probs))
        fh.write(",".join(fields) + "\n")
