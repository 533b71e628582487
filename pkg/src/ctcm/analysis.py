"""Closed-form results, estimators and path diagnostics.

The attached count is a birth-death chain on ``{0, ..., n}`` whose
stationary law is Binomial(n, theta_a / (theta_a + theta_d)).  The
centroid's long-run drift follows from it; :func:`expected_velocity` gives
the closed form and :func:`drift_oracle` evaluates the unsimplified sum the
closed form comes from, so each checks the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .model import ModelParams
from .simulator import Trajectory, TrajectorySummary, state_at

__all__ = [
    "CountDistribution",
    "VelocityEstimate",
    "Violation",
    "steady_state",
    "invariance_check",
    "expected_velocity",
    "drift_oracle",
    "estimate_velocity",
    "empirical_count_distribution",
    "time_averaged_occupancy",
    "tv_distance",
    "check_growth_bounds",
    "level_transitions",
    "holding_times_by_level",
    "mean_centroid_curve",
]

BOUND_TOL = 1e-9


@dataclass(frozen=True)
class CountDistribution:
    """Probability vector over the attached count ``0 .. n``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size < 2:
            raise ValueError("a count distribution needs at least two entries (n >= 1)")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n(self) -> int:
        return self.probs.size - 1

    def __getitem__(self, k):
        return self.probs[k]

    def __len__(self):
        return self.probs.size

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)


@dataclass(frozen=True)
class VelocityEstimate:
    """Ensemble mean of per-member centroid velocities over ``window``."""

    mean_velocity: np.ndarray
    standard_error: np.ndarray
    window: tuple[float, float]
    ensemble_size: int

    def within(self, target, n_se: float = 3.0) -> np.ndarray:
        """Per-coordinate test ``|mean - target| <= n_se * SE``."""
        return np.abs(self.mean_velocity - np.asarray(target, dtype=float)) <= n_se * self.standard_error


def _probs(dist) -> np.ndarray:
    return dist.probs if isinstance(dist, CountDistribution) else np.asarray(dist, dtype=float)


def steady_state(n: int, theta_a: float, theta_d: float) -> CountDistribution:
    """Binomial(n, theta_a/(theta_a+theta_d)) weights, computed in log space."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not (theta_a > 0 and theta_d > 0):
        raise ValueError("rates must be positive")
    k = np.arange(n + 1)
    total = theta_a + theta_d
    log_p = math.log(theta_a / total)
    log_q = math.log(theta_d / total)
    log_w = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1) + k * log_p + (n - k) * log_q
    w = np.exp(log_w)
    return CountDistribution(w / w.sum())


def invariance_check(dist, n: int, theta_a: float, theta_d: float) -> float:
    """Largest absolute net flow of the birth-death generator under ``dist``.

    Zero exactly when ``dist`` is stationary.
    """
    p = _probs(dist)
    if p.size != n + 1:
        raise ValueError(f"distribution has {p.size} entries, expected {n + 1}")
    k = np.arange(n + 1)
    up = theta_a * (n - k) * p  # flow k -> k+1
    down = theta_d * k * p  # flow k -> k-1
    inflow = np.zeros(n + 1)
    inflow[1:] += up[:-1]
    inflow[:-1] += down[1:]
    return float(np.abs(inflow - (up + down)).max())


def expected_velocity(params: ModelParams) -> np.ndarray:
    """Long-run centroid velocity ``eta_mean * theta_d * (1 - (theta_d/(theta_a+theta_d))**n)``."""
    p = params.theta_a / (params.theta_a + params.theta_d)
    # 1 - (1-p)**n without cancellation for small p
    factor = -math.expm1(params.n * math.log1p(-p))
    return params.eta_mean * (params.theta_d * factor)


def drift_oracle(params: ModelParams) -> np.ndarray:
    """Stationary-weighted drift: attachments at count ``i`` move the centroid by ``eta_mean/(i+1)``."""
    sigma = steady_state(params.n, params.theta_a, params.theta_d).probs
    i = np.arange(params.n)
    scalar = float(np.sum(sigma[:-1] * params.theta_a * (params.n - i) / (i + 1)))
    return params.eta_mean * scalar


def _centroid_at(member, t: float) -> np.ndarray:
    if isinstance(member, TrajectorySummary):
        try:
            return member.centroid_at(t)
        except KeyError:
            if member.path is not None:
                return _centroid_at(member.path, t)
            raise ValueError(f"member {member.index} has no snapshot at t={t}") from None
    if isinstance(member, Trajectory):
        if t > member.horizon:
            raise ValueError(f"trajectory horizon {member.horizon} is shorter than t={t}")
        return state_at(member, t).centroid
    raise TypeError(f"expected a Trajectory or TrajectorySummary, got {type(member).__name__}")


def _count_at(member, t: float) -> int:
    if isinstance(member, TrajectorySummary):
        try:
            return member.count_at(t)
        except KeyError:
            if member.path is not None:
                return _count_at(member.path, t)
            raise ValueError(f"member {member.index} has no snapshot at t={t}") from None
    if isinstance(member, Trajectory):
        return state_at(member, t).attached_count
    raise TypeError(f"expected a Trajectory or TrajectorySummary, got {type(member).__name__}")


def estimate_velocity(members: Iterable, burn_in: float, window_end: float) -> VelocityEstimate:
    """Mean and standard error of ``(c(window_end) - c(burn_in)) / (window_end - burn_in)``.

    ``members`` may be a generator; it is consumed once.  With a single
    member the standard error is NaN.
    """
    if not window_end > burn_in:
        raise ValueError("window_end must exceed burn_in")
    span = window_end - burn_in
    v = np.array([(_centroid_at(m, window_end) - _centroid_at(m, burn_in)) / span for m in members])
    if v.size == 0:
        raise ValueError("no ensemble members")
    m = len(v)
    se = v.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.full(v.shape[1], np.nan)
    return VelocityEstimate(v.mean(axis=0), se, (float(burn_in), float(window_end)), m)


def empirical_count_distribution(members: Iterable, t: float, n: int | None = None) -> CountDistribution:
    """Histogram of the attached count at time ``t`` across the ensemble."""
    counts = np.array([_count_at(m, t) for m in members], dtype=np.int64)
    if counts.size == 0:
        raise ValueError("no ensemble members")
    size = (int(counts.max()) if n is None else n) + 1
    hist = np.bincount(counts, minlength=size).astype(float)
    if hist.size > size:
        raise ValueError(f"observed count {counts.max()} exceeds n={n}")
    return CountDistribution(hist / hist.sum())


def time_averaged_occupancy(summaries: Iterable[TrajectorySummary]) -> CountDistribution:
    """Ensemble mean of the per-member fraction of time spent at each count.

    A diagnostic only; convergence is judged at fixed times.
    """
    occ = np.array([s.occupancy for s in summaries])
    avg = occ.mean(axis=0)
    return CountDistribution(avg / avg.sum())


def tv_distance(a, b) -> float:
    pa, pb = _probs(a), _probs(b)
    if pa.shape != pb.shape:
        raise ValueError(f"length mismatch: {pa.size} vs {pb.size}")
    return 0.5 * float(np.abs(pa - pb).sum())


@dataclass(frozen=True)
class Violation:
    """One failed path-wise inequality ``lhs <= rhs``."""

    kind: str  # "growth" or "movement"
    k1: int
    k2: int
    lhs: float
    rhs: float

    @property
    def excess(self) -> float:
        return self.lhs - self.rhs


def check_growth_bounds(
    traj: Trajectory,
    params: ModelParams,
    rng: np.random.Generator | None = None,
    pairs: int = 1000,
    tol: float = BOUND_TOL,
) -> list[Violation]:
    """Scan a path for breaches of the growth and movement bounds.

    growth:    g(Y[k+1]) <= g(Y[k]) + R for every consecutive pair;
    movement:  |c(Y[k2]) - c(Y[k1])|_inf <= 2 g(Y[0]) + (k1 + k2) R for all
               pairs (0, k) and ``pairs`` random pairs.

    ``g`` is the largest ∞-norm over all sites and the centroid, ``R`` is
    ``params.support_radius``.  An empty list means no violation beyond
    ``tol``.
    """
    R = params.support_radius
    g = traj.max_norms()
    out: list[Violation] = []
    if len(traj) < 2:
        return out

    bad = np.flatnonzero(g[1:] > g[:-1] + R + tol)
    out += [Violation("growth", int(k), int(k) + 1, float(g[k + 1]), float(g[k] + R)) for k in bad]

    c = traj.centroids
    g0 = g[0]
    ks = np.arange(len(traj))
    moved = np.abs(c - c[0]).max(axis=1)
    bad = np.flatnonzero(moved > 2 * g0 + ks * R + tol)
    out += [Violation("movement", 0, int(k), float(moved[k]), float(2 * g0 + k * R)) for k in bad]

    if pairs > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        k1 = rng.integers(0, len(traj), size=pairs)
        k2 = rng.integers(0, len(traj), size=pairs)
        moved = np.abs(c[k2] - c[k1]).max(axis=1)
        rhs = 2 * g0 + (k1 + k2) * R
        bad = np.flatnonzero(moved > rhs + tol)
        out += [Violation("movement", int(k1[j]), int(k2[j]), float(moved[j]), float(rhs[j])) for j in bad]
    return out


def level_transitions(traj: Trajectory) -> np.ndarray:
    """``(n+1, 2)`` array: number of down and up moves made from each count."""
    counts = traj.counts
    out = np.zeros((traj.n + 1, 2), dtype=np.int64)
    if len(counts) > 1:
        up = (np.diff(counts) > 0).astype(np.int64)
        np.add.at(out, (counts[:-1], up), 1)
    return out


def holding_times_by_level(traj: Trajectory) -> list[np.ndarray]:
    """Completed holding times grouped by the attached count held."""
    counts = traj.counts[:-1]
    h = traj.holding_times
    return [h[counts == k] for k in range(traj.n + 1)]


def mean_centroid_curve(summaries: Sequence[TrajectorySummary]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample times, ensemble-mean centroid and its standard error at each."""
    if not summaries:
        raise ValueError("no ensemble members")
    times = summaries[0].sample_times
    stack = np.array([s.centroids for s in summaries])
    m = len(summaries)
    se = stack.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.full(stack.shape[1:], np.nan)
    return times, stack.mean(axis=0), se
