"""State representation and exact jump dynamics of the centroid model.

A state carries the attach status of ``n`` sites, their positions, and an
explicit centroid slot.  The slot is stored rather than derived because the
centroid keeps its last value while no site is attached.

Sites are numbered ``0 .. n-1``; the centroid is the extra slot ``n`` in
:func:`all_slots`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .stochastic import PerturbationDistribution, Quadrature

__all__ = [
    "ModelParams",
    "State",
    "QuadratureError",
    "rate",
    "site_selection_probs",
    "select_site",
    "flip_status",
    "detach",
    "attach",
    "sample_jump",
    "expect_one_step",
    "project",
    "max_norm",
    "centroid_residual",
    "renormalize",
    "initial_state",
    "CENTROID_TOL",
    "RENORMALIZE_EVERY",
]

CENTROID_TOL = 1e-9
RENORMALIZE_EVERY = 1_000_000


class QuadratureError(ValueError):
    """The integration rule cannot evaluate the requested integrand."""


@dataclass(frozen=True)
class ModelParams:
    """Attach/detach rates, site count, spatial dimension and perturbation law.

    ``support_radius`` defaults to the ∞-norm radius of ``eta``'s support.
    Passing a smaller value is allowed (fault injection); the path-wise bound
    checks in :mod:`ctcm.analysis` then report violations.
    """

    theta_a: float
    theta_d: float
    n: int
    dim: int
    eta: PerturbationDistribution
    support_radius: float | None = None

    def __post_init__(self):
        if not (self.theta_a > 0 and self.theta_d > 0):
            raise ValueError("theta_a and theta_d must be positive")
        if not (math.isfinite(self.theta_a) and math.isfinite(self.theta_d)):
            raise ValueError("rates must be finite")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.eta.dim != self.dim:
            raise ValueError(f"eta has dimension {self.eta.dim}, expected {self.dim}")
        object.__setattr__(self, "theta_a", float(self.theta_a))
        object.__setattr__(self, "theta_d", float(self.theta_d))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "dim", int(self.dim))
        if self.support_radius is None:
            object.__setattr__(self, "support_radius", float(self.eta.support_radius))
        elif self.support_radius < 0:
            raise ValueError("support_radius must be nonnegative")

    @property
    def eta_mean(self) -> np.ndarray:
        return self.eta.mean

    @property
    def theta_bound(self) -> float:
        """Upper bound ``n * max(theta_a, theta_d)`` on the jump rate."""
        return self.n * max(self.theta_a, self.theta_d)

    def replace(self, **changes) -> "ModelParams":
        fields = dict(
            theta_a=self.theta_a, theta_d=self.theta_d, n=self.n, dim=self.dim, eta=self.eta, support_radius=None
        )
        fields.update(changes)
        return ModelParams(**fields)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class State:
    """Status vector ``psi``, site ``positions`` (n, dim) and ``centroid`` (dim,).

    Arrays are copied on construction and made read-only, so states can be
    shared freely.
    """

    __slots__ = ("psi", "positions", "centroid")

    def __init__(self, psi, positions, centroid):
        psi = np.array(psi, dtype=bool).reshape(-1)
        positions = np.array(positions, dtype=float)
        if positions.ndim == 1:
            positions = positions.reshape(len(psi), -1)
        centroid = np.array(centroid, dtype=float).reshape(-1)
        if positions.shape != (len(psi), len(centroid)):
            raise ValueError(
                f"positions shape {positions.shape} incompatible with {len(psi)} sites in {len(centroid)} dimensions"
            )
        object.__setattr__(self, "psi", _frozen(psi))
        object.__setattr__(self, "positions", _frozen(positions))
        object.__setattr__(self, "centroid", _frozen(centroid))

    def __setattr__(self, name, value):
        raise AttributeError("State is immutable")

    @property
    def n(self) -> int:
        return len(self.psi)

    @property
    def dim(self) -> int:
        return len(self.centroid)

    @property
    def attached_count(self) -> int:
        return int(self.psi.sum())

    def all_slots(self) -> np.ndarray:
        """Positions of the ``n`` sites followed by the centroid, shape (n+1, dim)."""
        return np.vstack([self.positions, self.centroid])

    def __eq__(self, other):
        if not isinstance(other, State):
            return NotImplemented
        return (
            np.array_equal(self.psi, other.psi)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.centroid, other.centroid)
        )

    def __hash__(self):
        return hash((self.psi.tobytes(), self.positions.tobytes(), self.centroid.tobytes()))

    def __repr__(self):
        return f"State(psi={self.psi.astype(int).tolist()}, positions={self.positions.tolist()}, centroid={self.centroid.tolist()})"

    def check(self, params: ModelParams | None = None, tol: float = CENTROID_TOL) -> None:
        """Raise ``ValueError`` unless the centroid constraint holds within ``tol``."""
        if params is not None and (self.n != params.n or self.dim != params.dim):
            raise ValueError(f"state has n={self.n}, dim={self.dim}; params have n={params.n}, dim={params.dim}")
        res = centroid_residual(self)
        if res > tol:
            raise ValueError(f"centroid constraint violated by {res:.3e}")


def initial_state(n: int, dim: int, attached: bool = True, origin=None) -> State:
    """All sites and the centroid at ``origin`` (default zero)."""
    origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)
    return State(np.full(n, attached), np.tile(origin, (n, 1)), origin)


def _check_dims(state: State, params: ModelParams) -> None:
    if state.n != params.n or state.dim != params.dim:
        raise ValueError(f"state has n={state.n}, dim={state.dim}; params have n={params.n}, dim={params.dim}")


def project(state: State) -> int:
    """Number of attached sites."""
    return state.attached_count


def rate(state: State, params: ModelParams) -> float:
    """Total status-change rate ``theta_d*k + theta_a*(n-k)`` with ``k`` attached."""
    _check_dims(state, params)
    k = state.attached_count
    return params.theta_d * k + params.theta_a * (params.n - k)


def site_selection_probs(psi, params: ModelParams) -> np.ndarray:
    """Probability that the next status change involves each site."""
    psi = np.asarray(psi, dtype=bool)
    if psi.shape != (params.n,):
        raise ValueError(f"psi has length {psi.size}, expected {params.n}")
    k = int(psi.sum())
    weights = np.where(psi, params.theta_d, params.theta_a)
    return weights / (params.theta_d * k + params.theta_a * (params.n - k))


def select_site(psi, params: ModelParams, u: float) -> int:
    """Map a uniform ``u`` in [0, 1) to a site with the selection probabilities.

    Cumulative weights are scanned in index order; kernels use the same rule.
    """
    psi = np.asarray(psi, dtype=bool)
    k = int(psi.sum())
    c = params.theta_d * k + params.theta_a * (params.n - k)
    cum = np.cumsum(np.where(psi, params.theta_d, params.theta_a))
    return min(int(np.searchsorted(cum, u * c, side="right")), params.n - 1)


def flip_status(psi, i: int) -> np.ndarray:
    psi = np.array(psi, dtype=bool)
    if not 0 <= i < len(psi):
        raise IndexError(f"site {i} out of range for {len(psi)} sites")
    psi[i] = ~psi[i]
    return psi


def detach(state: State, i: int) -> State:
    """Detach site ``i``; the centroid moves to the mean of the remaining sites.

    Site positions never change.  If ``i`` was the only attached site, the
    centroid also stays put.
    """
    if not 0 <= i < state.n:
        raise IndexError(f"site {i} out of range for {state.n} sites")
    if not state.psi[i]:
        raise ValueError(f"site {i} is not attached")
    k = state.attached_count
    centroid = state.centroid
    if k > 1:
        centroid = centroid - (state.positions[i] - centroid) / (k - 1)
    return State(flip_status(state.psi, i), state.positions, centroid)


def attach(state: State, i: int, perturbation) -> State:
    """Attach site ``i`` at ``centroid + perturbation`` and update the centroid."""
    if not 0 <= i < state.n:
        raise IndexError(f"site {i} out of range for {state.n} sites")
    if state.psi[i]:
        raise ValueError(f"site {i} is already attached")
    x = np.asarray(perturbation, dtype=float)
    if x.shape != (state.dim,):
        raise ValueError(f"perturbation has shape {x.shape}, expected ({state.dim},)")
    k = state.attached_count
    positions = state.positions.copy()
    positions[i] = x + state.centroid
    centroid = x / (k + 1) + state.centroid
    return State(flip_status(state.psi, i), positions, centroid)


def sample_jump(state: State, params: ModelParams, rng: np.random.Generator) -> State:
    """Draw the state right after the next status change."""
    _check_dims(state, params)
    i = select_site(state.psi, params, rng.random())
    if state.psi[i]:
        return detach(state, i)
    return attach(state, i, params.eta.sample(rng))


def expect_one_step(
    f: Callable[[State], np.ndarray],
    state: State,
    params: ModelParams,
    quadrature: Quadrature | None = None,
) -> np.ndarray:
    """Expected value of ``f`` after one jump from ``state``.

    Detachments contribute ``f`` at the deterministic detached state; each
    attachment contributes the integral of ``f`` over the perturbation law,
    evaluated with ``quadrature`` (default: the law's own rule, which is exact
    for atoms and for integrands polynomial in the perturbation up to degree
    5 per axis on boxes).
    """
    _check_dims(state, params)
    quad = params.eta.quadrature() if quadrature is None else quadrature
    if quad.nodes.ndim != 2 or quad.nodes.shape[1] != params.dim:
        raise QuadratureError(f"quadrature nodes have shape {quad.nodes.shape}, expected (m, {params.dim})")
    r = site_selection_probs(state.psi, params)
    total = None
    for i in range(params.n):
        if state.psi[i]:
            value = np.atleast_1d(np.asarray(f(detach(state, i)), dtype=float))
        else:
            try:
                value = quad.integrate(lambda x, i=i: f(attach(state, i, x)))
            except ValueError as exc:  # ragged or non-numeric outputs
                raise QuadratureError(f"cannot integrate test function: {exc}") from exc
        if not np.all(np.isfinite(value)):
            raise QuadratureError("test function is not finite on the quadrature nodes")
        term = r[i] * value
        if total is not None and term.shape != total.shape:
            raise QuadratureError("test function returned inconsistent shapes")
        total = term if total is None else total + term
    return total


def max_norm(state: State) -> float:
    """Largest ∞-norm over the ``n`` site positions and the centroid."""
    return float(np.abs(state.all_slots()).max())


def centroid_residual(state: State) -> float:
    """Max over coordinates of ``|sum_i psi_i (positions_i - centroid)|``."""
    if not state.psi.any():
        return 0.0
    diff = state.positions[state.psi] - state.centroid
    return float(np.abs(diff.sum(axis=0)).max())


def renormalize(state: State) -> State:
    """Snap the centroid to the recomputed attached mean (no-op when none attached)."""
    if not state.psi.any():
        return state
    return State(state.psi, state.positions, state.positions[state.psi].mean(axis=0))
