"""Trajectory generation.

Two engines are provided:

* :func:`simulate_markov` draws one exponential holding time at the total
  rate, then picks the jumping site with the selection probabilities;
* :func:`simulate_semi_markov` gives every site its own clock drawn from an
  arbitrary wait law and processes events in time order from a binary heap.

With exponential waits the two are equal in law.  Both return a
:class:`Trajectory` holding the full jump record.  :func:`simulate_ensemble`
runs many independent members and keeps only per-member summaries unless
paths are requested.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from . import _kernels as K
from .model import ModelParams, State, CENTROID_TOL
from .stochastic import Exponential, WaitDistribution, substream

__all__ = [
    "Trajectory",
    "SemiMarkovConfig",
    "TrajectorySummary",
    "simulate_markov",
    "simulate_semi_markov",
    "state_at",
    "simulate_ensemble",
    "default_threads",
    "THREADS_ENV",
]

THREADS_ENV = "CTCM_THREADS"
_MIN_CHUNK = 1024
_MAX_CHUNK = 1 << 20


@dataclass(frozen=True)
class SemiMarkovConfig:
    """Wait laws for the per-site clocks.

    ``attach_wait`` is the time a detached site waits before attaching;
    ``detach_wait`` is how long an attached site stays attached.
    """

    attach_wait: WaitDistribution
    detach_wait: WaitDistribution

    @classmethod
    def exponential(cls, params: ModelParams) -> "SemiMarkovConfig":
        return cls(Exponential(params.theta_a), Exponential(params.theta_d))


Engine = Union[str, SemiMarkovConfig]


class Trajectory:
    """Jump record ``(jump_times[k], state k)`` of one run on ``[0, horizon]``.

    States are stored column-wise (``psi``, ``positions``, ``centroids``);
    :meth:`state` materializes a :class:`State`.
    """

    def __init__(self, jump_times, psi, positions, centroids, horizon: float):
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.psi = np.asarray(psi, dtype=bool)
        self.positions = np.asarray(positions, dtype=float)
        self.centroids = np.asarray(centroids, dtype=float)
        self.horizon = float(horizon)
        m = len(self.jump_times)
        if not (len(self.psi) == len(self.positions) == len(self.centroids) == m) or m == 0:
            raise ValueError("trajectory arrays must be non-empty and share their first dimension")
        if self.jump_times[0] != 0.0:
            raise ValueError("a trajectory starts at time 0")
        for a in (self.jump_times, self.psi, self.positions, self.centroids):
            a.setflags(write=False)

    def __len__(self) -> int:
        return len(self.jump_times)

    @property
    def n(self) -> int:
        return self.psi.shape[1]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def jump_count(self) -> int:
        return len(self) - 1

    @property
    def counts(self) -> np.ndarray:
        """Attached count of every recorded state."""
        return self.psi.sum(axis=1)

    @property
    def holding_times(self) -> np.ndarray:
        """Completed holding times (excludes the censored last one)."""
        return np.diff(self.jump_times)

    def state(self, k: int) -> State:
        return State(self.psi[k], self.positions[k], self.centroids[k])

    @property
    def states(self) -> list[State]:
        return [self.state(k) for k in range(len(self))]

    def __getitem__(self, k: int) -> State:
        return self.state(k)

    def max_norms(self) -> np.ndarray:
        """``g`` for every state: largest ∞-norm over sites and centroid."""
        sites = np.abs(self.positions).max(axis=(1, 2))
        return np.maximum(sites, np.abs(self.centroids).max(axis=1))

    def centroid_residuals(self) -> np.ndarray:
        diff = (self.positions - self.centroids[:, None, :]) * self.psi[:, :, None]
        return np.abs(diff.sum(axis=1)).max(axis=1)

    def index_at(self, t: float) -> int:
        if not 0.0 <= t <= self.horizon:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        return int(np.searchsorted(self.jump_times, t, side="right")) - 1


def state_at(traj: Trajectory, t: float) -> State:
    """State at time ``t``; right-continuous at jump times."""
    return traj.state(traj.index_at(t))


def _check_initial(params: ModelParams, initial: State, horizon: float) -> None:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    initial.check(params, tol=CENTROID_TOL)


def _encode_eta(params: ModelParams):
    kind, table, cumw = params.eta.encode()
    return kind, np.ascontiguousarray(table, dtype=float), np.ascontiguousarray(cumw, dtype=float)


def _encode_waits(waits: SemiMarkovConfig):
    a = waits.attach_wait.encode()
    d = waits.detach_wait.encode()
    return tuple(a) + tuple(d)


def _chunk_size(params: ModelParams, horizon: float) -> int:
    expected = params.theta_bound * horizon
    if not np.isfinite(expected):
        return _MAX_CHUNK
    return int(min(max(expected + 6 * np.sqrt(expected) + 16, _MIN_CHUNK), _MAX_CHUNK))


def _record(run_chunk, params: ModelParams, initial: State, horizon: float, max_jumps: int | None) -> Trajectory:
    psi = initial.psi.copy()
    pos = initial.positions.copy()
    cen = initial.centroid.copy()
    times = [np.zeros(1)]
    psis = [psi[None].copy()]
    poss = [pos[None].copy()]
    cens = [cen[None].copy()]
    t, jumps, done = 0.0, 0, False
    cap = _chunk_size(params, horizon)
    limit = np.inf if max_jumps is None else int(max_jumps)
    while not done and jumps < limit:
        size = int(min(cap, limit - jumps))
        rec_t = np.empty(size)
        rec_psi = np.empty((size, params.n), dtype=np.bool_)
        rec_pos = np.empty((size, params.n, params.dim))
        rec_cen = np.empty((size, params.dim))
        m, t, jumps, done = run_chunk(psi, pos, cen, t, jumps, rec_t, rec_psi, rec_pos, rec_cen)
        times.append(rec_t[:m])
        psis.append(rec_psi[:m])
        poss.append(rec_pos[:m])
        cens.append(rec_cen[:m])
        cap = min(cap * 2, _MAX_CHUNK)
    if not done:
        horizon = t
    return Trajectory(
        np.concatenate(times), np.concatenate(psis), np.concatenate(poss), np.concatenate(cens), horizon
    )


def _check_max_jumps(horizon: float, max_jumps: int | None) -> None:
    if max_jumps is not None and max_jumps < 0:
        raise ValueError("max_jumps must be nonnegative")
    if max_jumps is None and not np.isfinite(horizon):
        raise ValueError("an infinite horizon needs max_jumps")


def simulate_markov(
    params: ModelParams,
    initial: State,
    horizon: float,
    rng: np.random.Generator,
    max_jumps: int | None = None,
) -> Trajectory:
    """Exact jump-chain simulation on ``[0, horizon]`` seconds.

    Each step draws a standard exponential ``gamma``, advances time by
    ``gamma / rate``, then applies one sampled jump.  The first jump past the
    horizon is drawn but not recorded.

    With ``max_jumps`` the run also stops after that many jumps; the
    trajectory's horizon is then the last jump time.  ``horizon`` may be
    ``math.inf`` in that case.
    """
    _check_initial(params, initial, horizon)
    _check_max_jumps(horizon, max_jumps)
    horizon = float(horizon)
    kind, table, cumw = _encode_eta(params)

    def run_chunk(psi, pos, cen, t, jumps, rec_t, rec_psi, rec_pos, rec_cen):
        return K.call(
            K.markov_record,
            rng, params.theta_a, params.theta_d, psi, pos, cen, t, jumps, horizon,
            kind, table, cumw, rec_t, rec_psi, rec_pos, rec_cen,
        )

    return _record(run_chunk, params, initial, horizon, max_jumps)


def simulate_semi_markov(
    params: ModelParams,
    waits: SemiMarkovConfig,
    initial: State,
    horizon: float,
    rng: np.random.Generator,
    max_jumps: int | None = None,
) -> Trajectory:
    """Per-site clock simulation with arbitrary wait laws.

    Clocks start fresh at time 0 (drawn in site order from the law matching
    each site's status).  Events are taken from a heap keyed by
    ``(time, site)``, so simultaneous events resolve by ascending site index.
    Only the site that changed status redraws its clock.

    ``params.theta_a`` and ``params.theta_d`` are not used here; the waits
    alone drive the dynamics.  ``max_jumps`` works as in
    :func:`simulate_markov`.
    """
    _check_initial(params, initial, horizon)
    _check_max_jumps(horizon, max_jumps)
    horizon = float(horizon)
    kind, table, cumw = _encode_eta(params)
    w = _encode_waits(waits)
    clocks = np.empty(params.n)
    psi0 = initial.psi.copy()
    K.call(K.init_clocks, rng, psi0, clocks, *w)

    def run_chunk(psi, pos, cen, t, jumps, rec_t, rec_psi, rec_pos, rec_cen):
        return K.call(
            K.semi_record,
            rng, psi, pos, cen, clocks, t, jumps, horizon, kind, table, cumw, *w,
            rec_t, rec_psi, rec_pos, rec_cen,
        )

    return _record(run_chunk, params, initial, horizon, max_jumps)


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class TrajectorySummary:
    """What an ensemble keeps from one member.

    ``counts[j]`` and ``centroids[j]`` are the attached count and centroid at
    ``sample_times[j]``.  ``occupancy[k]`` is the fraction of the occupancy
    window spent with ``k`` sites attached.
    """

    index: int
    jump_count: int
    sample_times: np.ndarray
    counts: np.ndarray
    centroids: np.ndarray
    occupancy: np.ndarray
    occupancy_window: tuple[float, float]
    final_centroid: np.ndarray
    path: Trajectory | None = field(default=None, repr=False)

    def snapshot(self, t: float) -> int:
        hits = np.flatnonzero(self.sample_times == t)
        if hits.size == 0:
            raise KeyError(f"no snapshot recorded at t={t}")
        return int(hits[0])

    def centroid_at(self, t: float) -> np.ndarray:
        return self.centroids[self.snapshot(t)]

    def count_at(self, t: float) -> int:
        return int(self.counts[self.snapshot(t)])


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _summary_from_path(index, traj: Trajectory, times: np.ndarray, window) -> TrajectorySummary:
    idx = [traj.index_at(t) for t in times]
    counts = traj.counts[idx] if idx else np.zeros(0, dtype=np.int64)
    centroids = traj.centroids[idx] if idx else np.zeros((0, traj.dim))
    occ = np.zeros(traj.n + 1)
    a, b = window
    ends = np.append(traj.jump_times[1:], traj.horizon)
    lo = np.maximum(traj.jump_times, a)
    hi = np.minimum(ends, b)
    np.add.at(occ, traj.counts, np.clip(hi - lo, 0.0, None))
    return TrajectorySummary(
        index, traj.jump_count, times, np.asarray(counts, dtype=np.int64), np.asarray(centroids),
        occ / (b - a), (a, b), traj.centroids[-1].copy(), traj,
    )


def _run_member(params, engine, initial, horizon, seed, stream, index, times, window, keep_path) -> TrajectorySummary:
    rng = substream(seed, *stream, index)
    if keep_path:
        if engine == "markov":
            traj = simulate_markov(params, initial, horizon, rng)
        else:
            traj = simulate_semi_markov(params, engine, initial, horizon, rng)
        return _summary_from_path(index, traj, times, window)

    kind, table, cumw = _encode_eta(params)
    psi = initial.psi.copy()
    pos = initial.positions.copy()
    cen = initial.centroid.copy()
    counts = np.zeros(len(times), dtype=np.int64)
    cents = np.zeros((len(times), params.dim))
    occ = np.zeros(params.n + 1)
    a, b = window
    if engine == "markov":
        jumps = K.call(
            K.markov_stream,
            rng, params.theta_a, params.theta_d, psi, pos, cen, horizon, kind, table, cumw,
            times, counts, cents, a, b, occ,
        )
    else:
        w = _encode_waits(engine)
        clocks = np.empty(params.n)
        K.call(K.init_clocks, rng, psi, clocks, *w)
        jumps = K.call(
            K.semi_stream,
            rng, psi, pos, cen, clocks, horizon, kind, table, cumw, *w, times, counts, cents, a, b, occ
        )
    return TrajectorySummary(index, int(jumps), times, counts, cents, occ / (b - a), (a, b), cen)


def simulate_ensemble(
    params: ModelParams,
    engine: Engine,
    initial: State,
    horizon: float,
    count: int,
    seed: int,
    *,
    sample_times: Sequence[float] = (),
    window: tuple[float, float] | None = None,
    keep_paths: bool = False,
    threads: int | None = None,
    stream: Sequence[int] = (),
) -> Iterator[TrajectorySummary]:
    """Yield summaries of ``count`` independent members, in index order.

    Member ``i`` uses the generator ``substream(seed, *stream, i)``, so its
    summary does not depend on ``count`` or ``threads``; sweeps pass a
    distinct ``stream`` prefix per grid point.  ``sample_times`` (seconds)
    are the snapshot times; ``window`` sets the occupancy window (defaults to
    ``(0, horizon)``).  When both ends of ``window`` are given they are added
    to the snapshot times.

    ``engine`` is ``"markov"`` or a :class:`SemiMarkovConfig`.
    """
    if count < 1:
        raise ValueError("ensemble size must be at least 1")
    if not (engine == "markov" or isinstance(engine, SemiMarkovConfig)):
        raise ValueError(f"unknown engine {engine!r}")
    _check_initial(params, initial, horizon)
    times = set(float(t) for t in sample_times)
    if window is None:
        window = (0.0, float(horizon))
    else:
        window = (float(window[0]), float(window[1]))
        times.update(window)
    if not 0.0 <= window[0] < window[1] <= horizon:
        raise ValueError(f"window {window} must satisfy 0 <= start < end <= horizon")
    times_arr = np.array(sorted(times), dtype=float)
    if times_arr.size and (times_arr[0] < 0 or times_arr[-1] > horizon):
        raise ValueError("sample times must lie in [0, horizon]")

    stream = tuple(int(k) for k in stream)

    def job(i):
        return _run_member(params, engine, initial, float(horizon), seed, stream, i, times_arr, window, keep_paths)

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1:
        for i in range(count):
            yield job(i)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # bounded look-ahead keeps memory flat for large ensembles
        pending = [pool.submit(job, i) for i in range(min(count, 4 * threads))]
        nxt = len(pending)
        while pending:
            summary = pending.pop(0).result()
            if nxt < count:
                pending.append(pool.submit(job, nxt))
                nxt += 1
            yield summary
