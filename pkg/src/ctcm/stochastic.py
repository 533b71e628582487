"""Random sources and the sampling distributions used by the simulators.

Two families live here:

* perturbation laws (where a newly attached site lands relative to the
  centroid), all compactly supported;
* wait-time laws for the per-site clocks of the semi-Markov engine.

Every distribution also knows how to :meth:`encode` itself as plain arrays so
the jitted kernels in :mod:`ctcm._kernels` can sample it with the exact same
sequence of generator calls as the Python ``sample`` methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "make_rng",
    "substream",
    "UniformBox",
    "PointMass",
    "DiscreteMixture",
    "PerturbationDistribution",
    "Quadrature",
    "Exponential",
    "TruncatedNormal",
    "ContinuousPoisson",
    "Deterministic",
    "WaitDistribution",
    "sample_perturbation",
    "sample_wait",
    "sampled_quadrature",
]

# kind codes shared with the kernels
BOX, POINT, MIXTURE = 0, 1, 2
EXPONENTIAL, TRUNCATED_NORMAL, CONTINUOUS_POISSON, DETERMINISTIC = 0, 1, 2, 3

_EMPTY = np.zeros(1)


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator seeded deterministically from ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator addressed by ``(seed, *keys)``.

    Ensembles use ``substream(seed, *prefix, i)`` for member ``i``, so a
    member's stream never depends on how many other members exist or the
    order in which they are run.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def _vec(values) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class Quadrature:
    """Weighted nodes approximating integration against a perturbation law."""

    nodes: np.ndarray  # (m, dim)
    weights: np.ndarray  # (m,)
    exact_degree: float  # per-axis polynomial degree integrated exactly; 0 for sample-based, inf for atoms

    def integrate(self, fn):
        values = [np.atleast_1d(np.asarray(fn(x), dtype=float)) for x in self.nodes]
        return np.tensordot(self.weights, np.stack(values), axes=1)


# ---------------------------------------------------------------------------
# perturbation laws


@dataclass(frozen=True)
class UniformBox:
    """Uniform law on the axis-aligned box ``center +- half_width``."""

    center: tuple[float, ...]
    half_width: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "half_width", _vec(self.half_width))
        if len(self.center) != len(self.half_width):
            raise ValueError("center and half_width must have the same length")
        if any(h < 0 or not math.isfinite(h) for h in self.half_width):
            raise ValueError("half_width entries must be finite and nonnegative")
        if not all(math.isfinite(c) for c in self.center):
            raise ValueError("center must be finite")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def mean(self) -> np.ndarray:
        return np.array(self.center)

    @property
    def support_radius(self) -> float:
        return max(abs(c) + h for c, h in zip(self.center, self.half_width))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.array(self.center) + np.array(self.half_width) * (2.0 * rng.random(self.dim) - 1.0)

    def quadrature(self, order: int = 3) -> Quadrature:
        # tensor Gauss-Legendre: exact for polynomials of degree 2*order-1 per axis
        x, w = np.polynomial.legendre.leggauss(order)
        w = w / 2.0
        grids = np.meshgrid(*[x] * self.dim, indexing="ij")
        unit = np.stack([g.ravel() for g in grids], axis=1)
        wgrid = np.meshgrid(*[w] * self.dim, indexing="ij")
        weights = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
        nodes = np.array(self.center) + unit * np.array(self.half_width)
        return Quadrature(nodes, weights, 2 * order - 1)

    def encode(self):
        return BOX, np.array([self.center, self.half_width]), _EMPTY


@dataclass(frozen=True)
class PointMass:
    vector: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "vector", _vec(self.vector))
        if not all(math.isfinite(v) for v in self.vector):
            raise ValueError("point mass location must be finite")

    @property
    def dim(self) -> int:
        return len(self.vector)

    @property
    def mean(self) -> np.ndarray:
        return np.array(self.vector)

    @property
    def support_radius(self) -> float:
        return max(abs(v) for v in self.vector)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.array(self.vector)

    def quadrature(self, order: int = 1) -> Quadrature:
        return Quadrature(np.array([self.vector]), np.ones(1), math.inf)

    def encode(self):
        return POINT, np.array([self.vector]), _EMPTY


@dataclass(frozen=True)
class DiscreteMixture:
    """Finitely many atoms ``vectors[j]`` with probabilities ``weights[j]``."""

    weights: tuple[float, ...]
    vectors: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        w = _vec(self.weights)
        vs = tuple(_vec(v) for v in self.vectors)
        if len(w) != len(vs) or not vs:
            raise ValueError("need one weight per atom and at least one atom")
        if len({len(v) for v in vs}) != 1:
            raise ValueError("all atoms must share a dimension")
        if any(x < 0 for x in w) or sum(w) <= 0:
            raise ValueError("weights must be nonnegative with positive total")
        total = sum(w)
        object.__setattr__(self, "weights", tuple(x / total for x in w))
        object.__setattr__(self, "vectors", vs)

    @property
    def dim(self) -> int:
        return len(self.vectors[0])

    @property
    def mean(self) -> np.ndarray:
        return np.asarray(self.weights) @ np.asarray(self.vectors)

    @property
    def support_radius(self) -> float:
        return max(max(abs(c) for c in v) for v, w in zip(self.vectors, self.weights) if w > 0)

    @property
    def _cumulative(self) -> np.ndarray:
        return np.cumsum(self.weights)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        cum = self._cumulative
        j = min(int(np.searchsorted(cum, rng.random(), side="right")), len(cum) - 1)
        return np.array(self.vectors[j])

    def quadrature(self, order: int = 1) -> Quadrature:
        return Quadrature(np.array(self.vectors), np.array(self.weights), math.inf)

    def encode(self):
        return MIXTURE, np.array(self.vectors), self._cumulative


PerturbationDistribution = Union[UniformBox, PointMass, DiscreteMixture]


def sample_perturbation(dist: PerturbationDistribution, rng: np.random.Generator) -> np.ndarray:
    return dist.sample(rng)


def sampled_quadrature(dist: PerturbationDistribution, rng: np.random.Generator, size: int = 10_000) -> Quadrature:
    """Equal-weight Monte Carlo rule for integrands that are not polynomial."""
    nodes = np.stack([dist.sample(rng) for _ in range(size)])
    return Quadrature(nodes, np.full(size, 1.0 / size), 0)


# ---------------------------------------------------------------------------
# wait-time laws


@dataclass(frozen=True)
class Exponential:
    rate: float  # per second

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be positive")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng: np.random.Generator) -> float:
        return rng.standard_exponential() / self.rate

    def encode(self):
        return EXPONENTIAL, np.array([self.rate, 0.0]), _EMPTY, _EMPTY


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(location, scale) conditioned on being nonnegative."""

    location: float  # seconds
    scale: float  # seconds

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        # keep rejection sampling cheap
        if special.ndtr(self.location / self.scale) < 1e-3:
            raise ValueError("location too far below zero for rejection sampling")

    @property
    def mean(self) -> float:
        alpha = -self.location / self.scale
        tail = special.ndtr(-alpha)
        return self.location + self.scale * math.exp(-0.5 * alpha * alpha) / math.sqrt(2 * math.pi) / tail

    def sample(self, rng: np.random.Generator) -> float:
        while True:
            x = rng.normal(self.location, self.scale)
            if x >= 0.0:
                return x

    def encode(self):
        return TRUNCATED_NORMAL, np.array([self.location, self.scale]), _EMPTY, _EMPTY


_CP_TABLE_SIZE = 10_000
_CP_TAIL = 1e-10


def _cp_xmax(lam: float) -> float:
    x = lam + 10.0 * math.sqrt(lam) + 10.0
    while special.gammainc(x, lam) >= _CP_TAIL:
        x *= 1.25
    return x


def _cp_mean(lam: float) -> float:
    # E[max(M - 1/2, 0)] with P(M > m) = gammainc(m, lam)
    xmax = _cp_xmax(lam)
    val, _ = integrate.quad(lambda m: special.gammainc(m, lam), 0.5, xmax, limit=400, epsabs=1e-11, epsrel=1e-12)
    return val


@dataclass(frozen=True)
class ContinuousPoisson:
    """Continuous law on ``[0, inf)`` whose rounded samples are Poisson.

    ``M`` has CDF ``Q(x, lam)`` (regularized upper incomplete gamma), so
    ``floor(M)`` is exactly Poisson(lam); the sample is ``max(M - 1/2, 0)``,
    whose nearest integer is therefore Poisson(lam) as well.  ``lam`` is
    solved numerically so the sample mean equals ``mean``.
    """

    mean: float  # seconds
    lam: float = field(init=False, repr=False)
    _grid: np.ndarray = field(init=False, repr=False, compare=False)
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.mean > 0.5:
            raise ValueError("continuous Poisson mean must exceed 0.5 s")
        m = float(self.mean)
        lam = optimize.brentq(lambda lam: _cp_mean(lam) - m, max(1e-6, m - 5.0), m + 5.0, xtol=1e-13)
        grid = np.linspace(0.0, _cp_xmax(lam), _CP_TABLE_SIZE)
        cdf = special.gammaincc(grid, lam)
        cdf[0] = 0.0
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "_grid", grid)
        object.__setattr__(self, "_cdf", cdf)

    def sample(self, rng: np.random.Generator) -> float:
        return _inverse_table(self._cdf, self._grid, rng.random())

    def encode(self):
        return CONTINUOUS_POISSON, np.array([self.mean, self.lam]), self._grid, self._cdf


def _inverse_table(cdf: np.ndarray, grid: np.ndarray, u: float) -> float:
    # same arithmetic as kernels.draw_wait
    j = int(np.searchsorted(cdf, u, side="right")) - 1
    j = min(max(j, 0), len(cdf) - 2)
    width = cdf[j + 1] - cdf[j]
    frac = (u - cdf[j]) / width if width > 0.0 else 0.0
    m = grid[j] + frac * (grid[j + 1] - grid[j])
    return max(m - 0.5, 0.0)


@dataclass(frozen=True)
class Deterministic:
    """Point-mass wait; makes event times exactly predictable in tests."""

    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("deterministic wait must be positive")

    @property
    def mean(self) -> float:
        return float(self.value)

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.value)

    def encode(self):
        return DETERMINISTIC, np.array([self.value, 0.0]), _EMPTY, _EMPTY


WaitDistribution = Union[Exponential, TruncatedNormal, ContinuousPoisson, Deterministic]


def sample_wait(dist: WaitDistribution, rng: np.random.Generator) -> float:
    return dist.sample(rng)


def as_perturbation(spec) -> PerturbationDistribution:
    """Build a perturbation law from a plain mapping (config files)."""
    if isinstance(spec, (UniformBox, PointMass, DiscreteMixture)):
        return spec
    kind = spec.get("kind", "uniform-box")
    if kind == "uniform-box":
        center = spec.get("mean", spec.get("center"))
        if center is None:
            raise ValueError("uniform-box needs 'mean'")
        hw = spec.get("half_width", 1.0)
        if np.isscalar(hw):
            hw = [hw] * len(center)
        return UniformBox(center, hw)
    if kind == "point-mass":
        return PointMass(spec["vector"])
    if kind == "discrete-mixture":
        return DiscreteMixture(spec["weights"], spec["vectors"])
    raise ValueError(f"unknown perturbation kind {kind!r}")


def perturbation_spec(dist: PerturbationDistribution) -> dict:
    if isinstance(dist, UniformBox):
        return {"kind": "uniform-box", "mean": list(dist.center), "half_width": list(dist.half_width)}
    if isinstance(dist, PointMass):
        return {"kind": "point-mass", "vector": list(dist.vector)}
    return {"kind": "discrete-mixture", "weights": list(dist.weights), "vectors": [list(v) for v in dist.vectors]}


def wait_from_mean(kind: str, mean: float, scale: float = 1.0) -> WaitDistribution:
    """Wait law of the named family with the given mean (seconds)."""
    if kind == "exponential":
        return Exponential(1.0 / mean)
    if kind == "truncated-normal":
        return TruncatedNormal(mean, scale)
    if kind == "continuous-poisson":
        return ContinuousPoisson(mean)
    if kind == "deterministic":
        return Deterministic(mean)
    raise ValueError(f"unknown wait distribution {kind!r}")
