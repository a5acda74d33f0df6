"""The Gibbs map on 1D grids, its fixed-point iteration, and stationarity checks.

The map sends a grid measure mu to the normalized density exp(-f(mu, .)) where
f is the flat derivative of the energy. Exponentiation is stabilized by
subtracting the nodal minimum (the map is invariant to additive constants of
f, so this changes nothing), and a boundary-mass diagnostic rejects grids too
small for the current energy. Fixed points are located by undamped Picard
iteration, with per-step W1 distances and their successive ratios recorded as
contraction-factor observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mflang.energy import EnergySpec, energy_value, flat_derivative, intrinsic_derivative
from mflang.measures import EmpiricalMeasure, GridMeasure1D, grid_normalize
from mflang.wasserstein import w1_grid

_BOUNDARY_MASS_TOL = 1e-6
_DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class PicardHistory:
    """Iterates of mu_{k+1} = Phi(mu_k) with step distances and their ratios."""

    iterates: list[GridMeasure1D]
    step_distances: list[float]
    ratio_estimates: list[float]
    converged: bool

    @property
    def fixed_point(self) -> GridMeasure1D:
        return self.iterates[-1]

    def rows(self) -> list[tuple[int, float, float]]:
        """(iter, step_w1, ratio) rows; the first ratio is undefined (nan)."""
        out = []
        for k, step in enumerate(self.step_distances):
            ratio = self.ratio_estimates[k - 1] if k >= 1 else float("nan")
            out.append((k + 1, step, ratio))
        return out


def gibbs_map(spec: EnergySpec, mu: GridMeasure1D) -> GridMeasure1D:
    """Apply the Gibbs map: normalized exp(-flat_derivative(spec, mu, .)).

    Raises when the flat derivative is not finite on the grid, when the
    stabilized exponential overflows, or when more than 1e-6 of the resulting
    mass sits on the boundary nodes (domain too small).
    """
    x = mu.nodes[:, None]
    f = np.asarray(flat_derivative(spec, mu, x), dtype=float)
    if not np.all(np.isfinite(f)):
        bad = int(np.flatnonzero(~np.isfinite(f))[0])
        raise ValueError(f"flat derivative not finite at grid node {bad} (x={mu.nodes[bad]:.6g})")
    dens = np.exp(-(f - np.min(f)))
    if not np.all(np.isfinite(dens)):
        bad = int(np.flatnonzero(~np.isfinite(dens))[0])
        raise ValueError(f"Gibbs density overflow at node {bad} after stabilization")
    out = grid_normalize(GridMeasure1D(mu.lo, mu.hi, dens))
    boundary_mass = out.h * (out.density[0] + out.density[-1]) / 2.0
    if boundary_mass > _BOUNDARY_MASS_TOL:
        raise ValueError(
            f"boundary nodes carry mass {boundary_mass:.3g} > {_BOUNDARY_MASS_TOL}; "
            f"grid [{mu.lo}, {mu.hi}] is too small for this energy"
        )
    return out


def picard_iterate(spec: EnergySpec, mu0: GridMeasure1D, tol: float = 1e-9,
                   max_iter: int = 200) -> PicardHistory:
    """Iterate the Gibbs map until the W1 step falls below tol.

    Non-convergence within max_iter is reported in the history, not raised.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    iterates = [mu0]
    steps: list[float] = []
    ratios: list[float] = []
    converged = False
    current = mu0
    for _ in range(max_iter):
        nxt = gibbs_map(spec, current)
        step = w1_grid(nxt, current)
        if steps and steps[-1] > 0.0:
            ratios.append(step / steps[-1])
        steps.append(step)
        iterates.append(nxt)
        current = nxt
        if step < tol:
            converged = True
            break
    return PicardHistory(iterates=iterates, step_distances=steps,
                         ratio_estimates=ratios, converged=converged)


def contraction_ratio(spec: EnergySpec, mu: GridMeasure1D, nu: GridMeasure1D) -> float:
    """W1(Phi mu, Phi nu) / W1(mu, nu); the input pair must be distinct."""
    base = w1_grid(mu, nu)
    if base <= 0.0:
        raise ValueError("contraction ratio undefined: W1(mu, nu) = 0")
    return w1_grid(gibbs_map(spec, mu), gibbs_map(spec, nu)) / base


def stationarity_residual(spec: EnergySpec, mu: GridMeasure1D) -> float:
    """Sup over interior nodes of |d/dx ln rho + drift| for the measure's own drift.

    A small residual certifies the critical-point characterization of invariant
    measures; the density is floored at 1e-300 before the logarithm.
    """
    dens = np.maximum(mu.density, _DENSITY_FLOOR)
    logs = np.log(dens)
    dlog = (logs[2:] - logs[:-2]) / (2.0 * mu.h)
    interior = mu.nodes[1:-1][:, None]
    drift = np.asarray(intrinsic_derivative(spec, mu, interior))[:, 0]
    return float(np.max(np.abs(dlog + drift)))


def n_particle_gibbs_logdensity(spec: EnergySpec, x) -> float:
    """Unnormalized log-density of the n-particle Gibbs measure: -n H(mu_x)."""
    cloud = x if isinstance(x, EmpiricalMeasure) else EmpiricalMeasure(np.asarray(x, dtype=float))
    return -cloud.n * energy_value(spec, cloud)
