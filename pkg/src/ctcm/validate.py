"""Validation battery run by ``ctcm validate`` and the acceptance tests.

Each check returns a :class:`CheckResult`.  ``level="full"`` uses the sizes
the acceptance criteria call for; ``level="quick"`` shrinks ensembles and
draw counts so the whole battery finishes in about a minute, keeping the
same tolerances.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from . import _kernels as K
from .analysis import (
    check_growth_bounds,
    drift_oracle,
    empirical_count_distribution,
    estimate_velocity,
    expected_velocity,
    invariance_check,
    level_transitions,
    steady_state,
    tv_distance,
)
from .config import EngineSpec, ExperimentConfig, InitialSpec
from .model import CENTROID_TOL, ModelParams, State, expect_one_step, initial_state
from .simulator import SemiMarkovConfig, simulate_ensemble, simulate_markov, simulate_semi_markov
from .stochastic import TruncatedNormal, UniformBox, make_rng, substream
from .sweep import run_sweep, write_csv

__all__ = ["CheckResult", "CHECKS", "QUICK_CHECKS", "run_checks", "DEFAULT_SEED"]

DEFAULT_SEED = 20240607
LEVELS = ("quick", "full")
SWEEP_N = (1, 2, 4, 8, 16, 32)
SWEEP_THETA_D = (1 / 5, 1 / 20, 1 / 80)
THETA_A = 1 / 20
ETA = {"kind": "uniform-box", "mean": [1.0, 1.0], "half_width": 1.0}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    failures: list[str] = field(default_factory=list)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _level(level: str) -> bool:
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    return level == "full"


def _default_eta() -> UniformBox:
    return UniformBox((1.0, 1.0), (1.0, 1.0))


# ---------------------------------------------------------------------------
# velocity reproduction


def _grid_rows(config: ExperimentConfig, threads):
    rows = list(run_sweep(config, threads))
    bad = []
    for r in rows:
        ok = r.within_tolerance()
        if not ok.all():
            rel = np.abs(r.est - r.theory) / np.abs(r.theory)
            z = np.abs(r.est - r.theory) / r.se
            bad.append(
                f"n={r.n} theta_d={r.theta_d:g} {r.engine}/{r.distribution}: "
                f"est={r.est.tolist()} theory={r.theory.tolist()} z={z.round(2).tolist()} rel={rel.round(4).tolist()}"
            )
    return rows, bad


def velocity_config(full: bool, seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        theta_a=(THETA_A,),
        theta_d=SWEEP_THETA_D if full else (1 / 5, 1 / 80),
        n=SWEEP_N if full else (1, 8),
        dim=2,
        eta=dict(ETA),
        horizon_h=75.0,
        burn_in_h=10.0,
        window_end_h=75.0,
        ensemble_size=2000 if full else 400,
        seed=seed,
    )


def check_velocity(level="full", seed=DEFAULT_SEED, threads=None) -> CheckResult:
    """Estimated velocity within 3 SE and 5% of the closed form on the sweep grid."""
    config = velocity_config(_level(level), seed)
    rows, bad = _grid_rows(config, threads)
    return CheckResult(
        "velocity",
        not bad,
        f"{len(rows) - len(bad)}/{len(rows)} grid points within 3 SE and 5% (M={config.ensemble_size})",
        bad,
    )


# ---------------------------------------------------------------------------
# stationary law


def check_stationary(level="full", seed=DEFAULT_SEED, threads=None) -> CheckResult:
    """Closed form equals the binomial pmf, is invariant, and attracts the ensemble."""
    failures = []
    worst_pmf = worst_res = 0.0
    for n in range(1, 65):
        for ta, td in ((0.05, 0.2), (0.05, 0.05), (0.05, 0.0125), (1.0, 3.0), (2.5, 0.1)):
            sigma = steady_state(n, ta, td)
            worst_pmf = max(worst_pmf, float(np.abs(sigma.probs - stats.binom.pmf(np.arange(n + 1), n, ta / (ta + td))).max()))
            worst_res = max(worst_res, invariance_check(sigma, n, ta, td))
    if worst_pmf > 1e-12:
        failures.append(f"pmf mismatch {worst_pmf:.2e}")
    if worst_res > 1e-12:
        failures.append(f"invariance residual {worst_res:.2e}")

    n, rate = 8, 1 / 20
    params = ModelParams(rate, rate, n, 2, _default_eta())
    t = 10 * 3600.0
    members = simulate_ensemble(params, "markov", initial_state(n, 2), t, 10_000, seed, sample_times=(t,), threads=threads)
    tv = tv_distance(empirical_count_distribution(members, t, n), steady_state(n, rate, rate))
    if not tv < 0.02:
        failures.append(f"TV distance {tv:.4f} >= 0.02")
    return CheckResult(
        "stationary",
        not failures,
        f"pmf error {worst_pmf:.1e}, invariance residual {worst_res:.1e}, TV at 10 h = {tv:.4f} (M=10000)",
        failures,
    )


# ---------------------------------------------------------------------------
# closed form against the drift sum


def check_drift_identity(level="full", seed=DEFAULT_SEED, threads=None) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 65))
        ta, td = 10 ** rng.uniform(-3, 1, size=2)
        mean = rng.uniform(-2, 2, size=2)
        params = ModelParams(ta, td, n, 2, UniformBox(tuple(mean), (0.5, 0.5)))
        a, b = drift_oracle(params), expected_velocity(params)
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))))
    return CheckResult("drift-identity", worst <= 1e-10, f"max relative difference {worst:.1e} over 100 triples")


# ---------------------------------------------------------------------------
# one-step expectation oracle


def random_state(n: int, dim: int, rng: np.random.Generator) -> State:
    """Random status vector and positions; the centroid is the attached mean."""
    psi = rng.random(n) < 0.5
    positions = rng.uniform(-5, 5, size=(n, dim))
    centroid = positions[psi].mean(axis=0) if psi.any() else rng.uniform(-5, 5, size=dim)
    return State(psi, positions, centroid)


def battery(state: State):
    """Test functions: centroid coordinates, site-0 coordinates, count indicators."""
    n = state.n

    def f(s: State) -> np.ndarray:
        ind = np.zeros(n + 1)
        ind[s.attached_count] = 1.0
        return np.concatenate([s.centroid, s.positions[0], ind])

    return f


def projected_kernel(k: int, n: int, theta_a: float, theta_d: float) -> np.ndarray:
    c = theta_d * k + theta_a * (n - k)
    out = np.zeros(n + 1)
    if k > 0:
        out[k - 1] = theta_d * k / c
    if k < n:
        out[k + 1] = theta_a * (n - k) / c
    return out


def one_step_samples(state: State, params: ModelParams, size: int, rng) -> np.ndarray:
    """Battery values after ``size`` independent jumps, shape (size, 2*dim + n + 1)."""
    kind, table, cumw = params.eta.encode()
    sites, counts, cents, site_pos = K.call(
        K.sample_jumps, rng, params.theta_a, params.theta_d, state.psi.copy(),
        np.ascontiguousarray(state.positions), state.centroid.copy(), kind,
        np.ascontiguousarray(table, dtype=float), np.ascontiguousarray(cumw, dtype=float), size,
    )
    pos0 = np.where((sites == 0)[:, None], site_pos, state.positions[0])
    ind = np.zeros((size, params.n + 1))
    ind[np.arange(size), counts] = 1.0
    return np.hstack([cents, pos0, ind])


def check_one_step(level="full", seed=DEFAULT_SEED, threads=None) -> CheckResult:
    full = _level(level)
    draws = 1_000_000 if full else 100_000
    n_states = 20 if full else 6
    rng = make_rng(seed)
    failures = []
    worst_z = 0.0
    worst_kernel = 0.0
    for j in range(n_states):
        n = (1, 3, 8)[j % 3]
        params = ModelParams(THETA_A, 1 / 5, n, 2, _default_eta())
        state = random_state(n, 2, rng)
        exact = expect_one_step(battery(state), state, params)
        sample = one_step_samples(state, params, draws, rng)
        mean = sample.mean(axis=0)
        se = sample.std(axis=0, ddof=1) / math.sqrt(draws)
        diff = np.abs(mean - exact)
        # constant coordinates give a rounding-level std rather than exact zero
        degenerate = se <= 1e-12 * np.maximum(1.0, np.abs(exact))
        if np.any(diff[degenerate] > 1e-9):
            failures.append(f"state {j}: deterministic coordinates differ")
        z = diff[~degenerate] / se[~degenerate]
        if z.size:
            worst_z = max(worst_z, float(z.max()))
            if np.any(z > 4):
                failures.append(f"state {j} (n={n}): z={z.max():.2f}")
        kernel = projected_kernel(state.attached_count, n, params.theta_a, params.theta_d)
        gap = float(np.abs(exact[4:] - kernel).max())
        worst_kernel = max(worst_kernel, gap)
        if gap > 1e-12:
            failures.append(f"state {j}: count indicators differ from projected kernel by {gap:.1e}")
    return CheckResult(
        "one-step",
        not failures,
        f"{n_states} states x {draws} draws: max z={worst_z:.2f}, projected-kernel gap {worst_kernel:.1e}",
        failures,
    )


# ---------------------------------------------------------------------------
# path-wise bounds


def _bound_cases(config: ExperimentConfig | None):
    if config is not None:
        return [(p.params, p.spec.build(p.params), config.initial) for p in config.grid()]
    cases = []
    for n in (1, 3, 8):
        params = ModelParams(THETA_A, 1 / 5, n, 2, _default_eta())
        cases.append((params, "markov", InitialSpec()))
        waits = SemiMarkovConfig(TruncatedNormal(20.0, 1.0), TruncatedNormal(5.0, 1.0))
        cases.append((params, waits, InitialSpec()))
    return cases


def check_path_bounds(level="full", seed=DEFAULT_SEED, threads=None, config: ExperimentConfig | None = None) -> CheckResult:
    """Growth, movement and centroid-consistency bounds on simulated paths.

    With ``config`` the paths use its grid points (including any
    ``support_radius`` override) instead of the built-in cases.
    """
    count = 1000 if _level(level) else 100
    jumps = 10_000
    cases = _bound_cases(config)
    failures = []
    total = 0
    worst_res = 0.0
    for j in range(count):
        params, engine, init = cases[j % len(cases)]
        initial = init.build(params.n, params.dim)
        rng = substream(seed, j)
        if engine == "markov":
            traj = simulate_markov(params, initial, math.inf, rng, max_jumps=jumps)
        else:
            traj = simulate_semi_markov(params, engine, initial, math.inf, rng, max_jumps=jumps)
        found = check_growth_bounds(traj, params, rng=rng)
        total += len(found)
        if found and len(failures) < 5:
            v = found[0]
            failures.append(f"path {j} (n={params.n}): {v.kind} bound broken at ({v.k1}, {v.k2}) by {v.excess:.3g}")
        res = float(traj.centroid_residuals().max())
        worst_res = max(worst_res, res)
        if res > CENTROID_TOL and len(failures) < 5:
            failures.append(f"path {j}: centroid residual {res:.2e}")
        flips = np.abs(np.diff(traj.psi.astype(np.int8), axis=0)).sum(axis=1)
        if np.any(flips != 1) and len(failures) < 5:
            failures.append(f"path {j}: a jump changed other than one status bit")
    passed = total == 0 and worst_res <= CENTROID_TOL and not failures
    return CheckResult(
        "path-bounds",
        passed,
        f"{count} paths x {jumps} jumps: {total} bound violations, max centroid residual {worst_res:.1e}",
        failures,
    )


# ---------------------------------------------------------------------------
# semi-Markov engine with exponential clocks


def engine_comparison(params: ModelParams, events: int, seed: int):
    """Two-sample statistics between the engines; returns (ks p-value, chi-square p-value)."""
    initial = initial_state(params.n, params.dim)
    a = simulate_markov(params, initial, math.inf, substream(seed, 0), max_jumps=events)
    b = simulate_semi_markov(params, SemiMarkovConfig.exponential(params), initial, math.inf, substream(seed, 1), max_jumps=events)
    ks = stats.ks_2samp(a.holding_times, b.holding_times)
    table = np.vstack([level_transitions(a).ravel(), level_transitions(b).ravel()])
    table = table[:, table.sum(axis=0) > 0]
    chi = stats.chi2_contingency(table)
    return float(ks.pvalue), float(chi.pvalue)


def check_semi_markov(level="full", seed=DEFAULT_SEED, threads=None) -> CheckResult:
    full = _level(level)
    params = ModelParams(THETA_A, 1 / 5, 8, 2, _default_eta())
    p_ks, p_chi = engine_comparison(params, 100_000 if full else 20_000, seed)
    failures = []
    if p_ks < 0.01:
        failures.append(f"holding-time KS p={p_ks:.4f}")
    if p_chi < 0.01:
        failures.append(f"transition chi-square p={p_chi:.4f}")

    config = ExperimentConfig(
        theta_a=(THETA_A,), theta_d=(1 / 20,), n=(8,), dim=2, eta=dict(ETA),
        engines=(EngineSpec("exponential", "semi-markov"),),
        horizon_h=75.0, burn_in_h=10.0, window_end_h=75.0,
        ensemble_size=2000 if full else 400, seed=seed,
    )
    rows, bad = _grid_rows(config, threads)
    failures += bad
    r = rows[0]
    return CheckResult(
        "semi-markov",
        not failures,
        f"KS p={p_ks:.3f}, chi-square p={p_chi:.3f}; velocity z={np.round(np.abs(r.est - r.theory) / r.se, 2).tolist()}",
        failures,
    )


# ---------------------------------------------------------------------------
# non-exponential sweep


def wait_families_config(full: bool, seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        theta_a=(1 / 20,),
        theta_d=(1 / 60,),
        n=tuple(range(1, 11)) if full else (1, 5, 10),
        dim=2,
        eta=dict(ETA),
        engines=(
            EngineSpec("exponential"),
            EngineSpec("truncated-normal", scale_s=1.0),
            EngineSpec("continuous-poisson"),
        ),
        horizon_h=75.0,
        burn_in_h=10.0,
        window_end_h=75.0,
        ensemble_size=2000 if full else 100,
        seed=seed,
    )


def check_wait_families(level="full", seed=DEFAULT_SEED, threads=None) -> CheckResult:
    full = _level(level)
    config = wait_families_config(full, seed)
    rows = list(run_sweep(config, threads))
    buf = io.StringIO()
    write_csv(rows, config.dim, buf)
    lines = buf.getvalue().splitlines()
    failures = []
    expected_rows = len(config.n) * len(config.engines)
    if len(lines) != expected_rows + 2:
        failures.append(f"CSV has {len(lines) - 2} data rows, expected {expected_rows}")
    for r in rows:
        if not (np.all(np.isfinite(r.est)) and np.all(np.isfinite(r.se))):
            failures.append(f"n={r.n} {r.distribution}: non-finite estimate")
    exp_rows = [r for r in rows if r.distribution == "exponential"]
    # the exponential column is held to the velocity tolerance; at quick
    # sizes it is reported only
    bad = [r for r in exp_rows if not r.within_tolerance().all()]
    if full:
        failures += [f"exponential n={r.n}: est={r.est.tolist()} theory={r.theory.tolist()}" for r in bad]
    return CheckResult(
        "wait-families",
        not failures,
        f"{len(rows)} rows emitted; exponential column {len(exp_rows) - len(bad)}/{len(exp_rows)} within tolerance",
        failures,
    )


# ---------------------------------------------------------------------------
# determinism


DETERMINISM_YAML = """\
params:
  theta_a: 0.05
  theta_d: [0.2, 0.0125]
  n: [1, 4]
  dim: 2
  eta: {kind: uniform-box, mean: [1, 1], half_width: 1}
engines:
  - distribution: exponential
  - distribution: truncated-normal
    scale_s: 1
  - distribution: continuous-poisson
horizon_h: 3
burn_in_h: 1
window_end_h: 3
ensemble_size: 25
seed: 7
"""


def check_determinism(level="full", seed=DEFAULT_SEED, threads=None) -> CheckResult:
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "run.yaml")
        with open(cfg, "w") as fh:
            fh.write(DETERMINISM_YAML)
        outputs = []
        for j, t in enumerate((1, 2 if threads is None else threads)):
            out = os.path.join(tmp, f"out{j}.csv")
            code = main(["simulate", "--config", cfg, "--seed", str(seed), "--out", out, "--threads", str(t)])
            if code != 0:
                return CheckResult("determinism", False, f"simulate exited with status {code}")
            with open(out, "rb") as fh:
                outputs.append(fh.read())
    same = outputs[0] == outputs[1]
    return CheckResult("determinism", same, f"two runs {'byte-identical' if same else 'differ'} ({len(outputs[0])} bytes)")


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "velocity": check_velocity,
    "stationary": check_stationary,
    "drift-identity": check_drift_identity,
    "one-step": check_one_step,
    "path-bounds": check_path_bounds,
    "semi-markov": check_semi_markov,
    "wait-families": check_wait_families,
    "determinism": check_determinism,
}
QUICK_CHECKS = ("stationary", "drift-identity", "one-step", "path-bounds", "semi-markov", "velocity", "determinism")


def run_checks(level="quick", seed=DEFAULT_SEED, threads=None, names=None, config=None, report=None) -> list[CheckResult]:
    """Run the named checks (default: all for ``full``, the quick subset otherwise).

    ``config`` redirects the path-bound check to the config's grid points.
    ``report`` is called with each result as it completes.
    """
    _level(level)
    if names is None:
        names = list(CHECKS) if level == "full" else list(QUICK_CHECKS)
    results = []
    for name in names:
        if name not in CHECKS:
            raise ValueError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")
        kwargs = {"config": config} if name == "path-bounds" else {}
        result = CHECKS[name](level=level, seed=seed, threads=threads, **kwargs)
        results.append(result)
        if report is not None:
            report(result)
    return results
