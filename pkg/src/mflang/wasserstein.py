"""Exact small-scale optimal transport and the empirical-rate function.

Equal-size empirical clouds are compared by sorting in 1D and by an exact
optimal assignment on the squared-distance cost matrix in general dimension
(Jonker-Volgenant via scipy, O(n^3), capped at n = 4096). Grid measures are
compared through their CDFs. delta_d(n) is the dimension-dependent empirical
convergence rate used by the propagation-of-chaos bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from mflang.measures import EmpiricalMeasure, GridMeasure1D

ASSIGNMENT_CAP = 4096


@dataclass(frozen=True)
class TransportPlanResult:
    """Optimal assignment between two equal-size clouds; cost is squared W2."""

    cost: float
    assignment: np.ndarray

    def w2(self) -> float:
        return math.sqrt(max(self.cost, 0.0))


def wp_empirical_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: int = 2) -> float:
    """W_p between equal-size 1D clouds by the monotone (sorted) matching."""
    if mu.d != 1 or nu.d != 1:
        raise ValueError(f"wp_empirical_1d needs d=1 clouds, got d={mu.d} and d={nu.d}")
    if mu.n != nu.n:
        raise ValueError(f"equal cloud sizes required, got {mu.n} and {nu.n}")
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    x = np.sort(mu.points[:, 0])
    y = np.sort(nu.points[:, 0])
    cost = float(np.mean(np.abs(x - y) ** p))
    return cost if p == 1 else math.sqrt(cost)


def w2_empirical_assignment(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> TransportPlanResult:
    """Exact optimal assignment on the n x n squared-distance cost matrix."""
    if mu.n != nu.n:
        raise ValueError(f"equal cloud sizes required, got {mu.n} and {nu.n}")
    if mu.d != nu.d:
        raise ValueError(f"dimension mismatch: {mu.d} vs {nu.d}")
    if mu.n > ASSIGNMENT_CAP:
        raise ValueError(f"n={mu.n} exceeds the assignment cap {ASSIGNMENT_CAP}")
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost = np.sum(diff * diff, axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(mu.n, dtype=int)
    perm[rows] = cols
    return TransportPlanResult(cost=float(cost[rows, cols].mean()), assignment=perm)


def w1_grid(mu: GridMeasure1D, nu: GridMeasure1D) -> float:
    """W1 between grid measures on the same grid: integral of |F_mu - F_nu|."""
    if not mu.same_grid(nu):
        raise ValueError("grid measures must share lo, hi and node count")
    diff = np.abs(mu.cdf() - nu.cdf())
    return float(np.trapezoid(diff, dx=mu.h))


def delta_d(n: int, d: int) -> float:
    """Empirical W2^2 convergence rate: 1/sqrt(n), log-corrected at d=4, n^{-2/d} above."""
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if d < 4:
        return 1.0 / math.sqrt(n)
    if d == 4:
        return math.log(n + 1.0) / math.sqrt(n)
    return float(n) ** (-2.0 / d)


def grid_quantile_cloud(g: GridMeasure1D, n: int) -> EmpiricalMeasure:
    """Subsample a grid measure to n points by inverse-CDF at midpoint ranks.

    Used to compare clouds against grid references through the exact
    assignment path; adds O(1/n) quantization error.
    """
    cdf = g.cdf()
    cdf = cdf / cdf[-1]
    ranks = (np.arange(n) + 0.5) / n
    pts = np.interp(ranks, cdf, g.nodes)
    return EmpiricalMeasure(pts[:, None])
