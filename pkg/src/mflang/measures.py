"""Measure representations and deterministic RNG streams.

Two measure carriers are used throughout: uniformly weighted point clouds in
R^d (empirical measures of particle systems) and nonnegative densities on a
uniform 1D grid (quadrature carrier for the Gibbs map). Both expose a common
weighted-support view so energy functionals integrate against either one with
the same code path.

Randomness is counter-based: every particle of every replica owns a Philox
stream keyed by (seed, stream_id), so serial and parallel runs produce
bit-identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid


# ---------------------------------------------------------------------------
# weighted-support view
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Support:
    """Weighted point view of a measure: points (m, d), weights (m,) summing to 1.

    Internal integration carrier; empirical measures map to uniform weights,
    grid measures to trapezoid-weighted node masses. Signed weights are allowed
    for difference measures (used by the flat-derivative identity check).
    The cache holds per-field convolution moments, valid for this support's
    lifetime; reuse one Support across calls to share them.
    """

    points: np.ndarray
    weights: np.ndarray
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def integrate(self, values: np.ndarray) -> float:
        """Integrate nodal values against the weights."""
        return float(np.dot(self.weights, values))


def as_support(mu) -> Support:
    """Return the weighted-support view of an EmpiricalMeasure/GridMeasure1D/Support."""
    if isinstance(mu, Support):
        return mu
    if isinstance(mu, EmpiricalMeasure):
        n = mu.n
        return Support(mu.points, np.full(n, 1.0 / n))
    if isinstance(mu, GridMeasure1D):
        return Support(mu.nodes[:, None], mu.node_masses())
    raise TypeError(f"not a measure: {type(mu).__name__}")


# ---------------------------------------------------------------------------
# empirical measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalMeasure:
    """n uniformly weighted points in R^d; points has shape (n, d)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError(f"points must be a nonempty (n, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise ValueError(f"non-finite coordinate in point {bad}")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)


def second_moment(mu: EmpiricalMeasure) -> float:
    """(1/n) sum_i ||x_i||^2."""
    return float(np.mean(np.sum(mu.points**2, axis=1)))


def sample_gaussian_cloud(n, d, mean, sd, rng: "RngStream") -> EmpiricalMeasure:
    """n i.i.d. draws from N(mean, sd^2 I); deterministic given the stream.

    mean may be a scalar (applied to every coordinate) or a length-d vector.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if sd < 0:
        raise ValueError(f"sd must be >= 0, got {sd}")
    mu = np.broadcast_to(np.asarray(mean, dtype=float), (d,))
    pts = mu + sd * rng.generator().standard_normal((n, d))
    return EmpiricalMeasure(pts)


# ---------------------------------------------------------------------------
# 1D grid measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridMeasure1D:
    """Density values on the uniform grid of m nodes over [lo, hi].

    The density is validated nonnegative and finite at construction; call
    grid_normalize to impose unit trapezoid mass.
    """

    lo: float
    hi: float
    density: np.ndarray

    def __post_init__(self):
        dens = np.asarray(self.density, dtype=float)
        if not (self.lo < self.hi):
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if dens.ndim != 1 or dens.shape[0] < 3:
            raise ValueError(f"density must be 1D with m >= 3 nodes, got shape {dens.shape}")
        if not np.all(np.isfinite(dens)):
            bad = int(np.flatnonzero(~np.isfinite(dens))[0])
            raise ValueError(f"non-finite density at node {bad}")
        neg = np.flatnonzero(dens < 0)
        if neg.size:
            raise ValueError(f"negative density at node {int(neg[0])}: {dens[int(neg[0])]}")
        object.__setattr__(self, "density", dens)

    @property
    def m(self) -> int:
        return self.density.shape[0]

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.m)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.m, self.h)
        w[0] = w[-1] = self.h / 2
        return w

    def node_masses(self) -> np.ndarray:
        """Per-node mass under the trapezoid rule (sums to the total mass)."""
        return self.trapezoid_weights() * self.density

    def total_mass(self) -> float:
        return float(np.trapezoid(self.density, dx=self.h))

    def mean(self) -> float:
        return float(np.dot(self.node_masses(), self.nodes))

    def variance(self) -> float:
        x = self.nodes
        w = self.node_masses()
        m1 = float(np.dot(w, x))
        return float(np.dot(w, (x - m1) ** 2))

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid integral of the density at the grid nodes."""
        return cumulative_trapezoid(self.density, dx=self.h, initial=0.0)

    def same_grid(self, other: "GridMeasure1D") -> bool:
        return self.m == other.m and self.lo == other.lo and self.hi == other.hi


def grid_normalize(g: GridMeasure1D) -> GridMeasure1D:
    """Rescale the density so its trapezoid integral is exactly 1.

    Rejects an identically zero density; nonnegativity and finiteness are
    enforced by the GridMeasure1D constructor.
    """
    z = g.total_mass()
    if z <= 0.0:
        raise ValueError("cannot normalize: density is identically zero")
    return GridMeasure1D(g.lo, g.hi, g.density / z)


def gaussian_grid(lo, hi, m, mean=0.0, sd=1.0) -> GridMeasure1D:
    """Normalized Gaussian density sampled on the grid."""
    x = np.linspace(lo, hi, m)
    dens = np.exp(-((x - mean) ** 2) / (2.0 * sd * sd))
    return grid_normalize(GridMeasure1D(lo, hi, dens))


# ---------------------------------------------------------------------------
# deterministic RNG streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """Counter-based Gaussian stream keyed by (seed, stream_id).

    Identical keys reproduce identical draw sequences; distinct stream ids are
    statistically independent. One stream is owned per particle per replica.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))

    def split(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


class GaussianBlockSource:
    """Per-particle streams with vectorized block draws.

    Holds one generator per stream id and hands out standard-normal blocks of
    shape (n_streams, steps, d); row i always comes from stream ids[i], so the
    per-particle sequences do not depend on block sizes of earlier calls with
    the same (steps, d) chunking.
    """

    def __init__(self, seed: int, stream_ids):
        self.seed = seed
        self.stream_ids = list(stream_ids)
        self._gens = [RngStream(seed, sid).generator() for sid in self.stream_ids]

    def normal_block(self, steps: int, d: int) -> np.ndarray:
        n = len(self._gens)
        out = np.empty((n, steps, d))
        for i, g in enumerate(self._gens):
            out[i] = g.standard_normal((steps, d))
        return out


class SingleStreamSource:
    """Block-normal source for n slots backed by one stream.

    Used for reference systems in propagation-of-chaos runs, where no noise is
    shared and no per-particle stream identity is needed; one sequential
    Philox stream fills (n, steps, d) blocks in a single vectorized draw.
    """

    def __init__(self, seed: int, stream_id: int, n: int):
        self.n = n
        self._gen = RngStream(seed, stream_id).generator()

    def normal_block(self, steps: int, d: int) -> np.ndarray:
        return self._gen.standard_normal((self.n, steps, d))


class StreamAllocator:
    """Hands out contiguous stream-id ranges in a fixed order.

    Experiments allocate one range per role (initial clouds, dynamics noise,
    reference system, ...) so the stream layout is a pure function of the
    allocation order, independent of thread scheduling.
    """

    def __init__(self, seed: int, base: int = 0):
        self.seed = seed
        self._next = base

    def take(self, count: int) -> list[int]:
        ids = list(range(self._next, self._next + count))
        self._next += count
        return ids

    def stream(self) -> RngStream:
        (sid,) = self.take(1)
        return RngStream(self.seed, sid)

    def block_source(self, count: int) -> GaussianBlockSource:
        return GaussianBlockSource(self.seed, self.take(count))

    def bulk_source(self, count: int) -> SingleStreamSource:
        (sid,) = self.take(1)
        return SingleStreamSource(self.seed, sid, count)
