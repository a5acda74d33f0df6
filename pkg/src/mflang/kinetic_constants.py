"""Constant selection for the under-damped contraction argument.

Follows the printed construction: with eta = gamma + [D]_1 (gamma being the
sum of the drift Lipschitz and interaction operator-norm constants), the
two linear conditions on the quadratic-form parameters admit a solution iff

    2 eta^2 - eta (2 + [A]_1^2/lambda_B + lambda_B + 4 lambda_A)
            + 2 lambda_A lambda_B > 0,

which holds on [0, eta_0) with eta_0 the smaller root, further capped by
2 lambda_A and lambda_B^{3/2} / (1 + 2 sqrt(lambda_B)). With epsilon fixed to
lambda_B the admissible window for the velocity weight b is

    (2 + [A]_1^2/lambda_B) / (2 lambda_A - eta)  <  b  <  (lambda_B - 2 eta) / eta,

and b is taken as the midpoint (intersected with the positive-definiteness
constraint b > 1/sqrt(lambda_B)). The reported decay constant is the minimum
linear-condition slack divided by twice the largest eigenvalue of the form,
a concrete conservative instance of the envelope E[Q_t] <= e^{-2Ct} E[Q_0].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mflang.energy import KineticFields


@dataclass(frozen=True)
class QuadraticForm:
    """Q_{a,b}(p, v) = a|p|^2 + 2 p.v + b|v|^2 on R^d x R^d."""

    a: float
    b: float

    @property
    def positive_definite(self) -> bool:
        return self.a * self.b > 1.0 and self.a + self.b > 0.0

    def eigenvalues(self) -> tuple[float, float]:
        """Extreme eigenvalues of the block matrix [[a I, I], [I, b I]]."""
        half = math.sqrt((self.a - self.b) ** 2 + 4.0) / 2.0
        mid = (self.a + self.b) / 2.0
        return mid - half, mid + half

    def evaluate(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Batched evaluation; p, v of shape (n, d) -> (n,)."""
        return (self.a * np.sum(p * p, axis=1)
                + 2.0 * np.sum(p * v, axis=1)
                + self.b * np.sum(v * v, axis=1))


@dataclass(frozen=True)
class KineticConstants:
    """Feasibility record for the kinetic contraction constants."""

    eta: float
    eta0: float
    b: float
    epsilon: float
    rate_C: float
    feasible: bool
    a: float = float("nan")
    b_window: tuple[float, float] = (float("nan"), float("nan"))
    slack_p: float = float("nan")
    slack_v: float = float("nan")
    q_eig_min: float = float("nan")
    q_eig_max: float = float("nan")
    violated: Optional[str] = None

    @property
    def q_form(self) -> QuadraticForm:
        return QuadraticForm(self.a, self.b)

    def as_dict(self) -> dict:
        return {
            "eta": self.eta,
            "eta0": self.eta0,
            "b": self.b,
            "a": self.a,
            "epsilon": self.epsilon,
            "rate_C": self.rate_C,
            "feasible": self.feasible,
            "b_window": list(self.b_window),
            "slack_p": self.slack_p,
            "slack_v": self.slack_v,
            "q_eig_min": self.q_eig_min,
            "q_eig_max": self.q_eig_max,
            "violated": self.violated,
        }


def eta_threshold(lip_A: float, mono_A: float, lambda_B: float) -> float:
    """Smaller root of the feasibility quadratic, capped as printed."""
    s = 2.0 + lip_A**2 / lambda_B + lambda_B + 4.0 * mono_A
    disc = s * s - 16.0 * mono_A * lambda_B
    root = (s - math.sqrt(disc)) / 4.0 if disc >= 0.0 else float("inf")
    cap = min(2.0 * mono_A, lambda_B * math.sqrt(lambda_B) / (1.0 + 2.0 * math.sqrt(lambda_B)))
    return min(root, cap)


def select_kinetic_constants(
    fields: KineticFields, gamma: float, epsilon: Optional[float] = None
) -> KineticConstants:
    """Select (eta0, b, Q, C) for the given fields and interaction size gamma.

    gamma is the energy contribution ([D_mH]_1 + ||D^2_mH||); infeasible inputs
    return feasible=False with the violated inequality named, never an error.
    """
    if fields.lip_A <= 0 or fields.mono_A <= 0 or fields.lambda_B <= 0:
        raise ValueError("constant selection needs lip_A, mono_A, lambda_B > 0")
    if gamma < 0 or fields.lip_D < 0:
        raise ValueError("gamma and lip_D must be nonnegative")

    eta = gamma + fields.lip_D
    eps = fields.lambda_B if epsilon is None else float(epsilon)
    eta0 = eta_threshold(fields.lip_A, fields.mono_A, fields.lambda_B)

    def infeasible(reason: str) -> KineticConstants:
        return KineticConstants(eta=eta, eta0=eta0, b=float("nan"), epsilon=eps,
                                rate_C=float("nan"), feasible=False, violated=reason)

    if eta >= eta0:
        return infeasible(f"eta >= eta0 ({eta:.6g} >= {eta0:.6g})")
    if eta >= 2.0 * fields.mono_A:
        return infeasible(f"eta >= 2*lambda_A ({eta:.6g} >= {2*fields.mono_A:.6g})")

    b_lo = (2.0 + fields.lip_A**2 / eps) / (2.0 * fields.mono_A - eta)
    if eta > 0.0:
        b_hi = (2.0 * fields.lambda_B - 2.0 * eta - eps) / eta
    else:
        b_hi = float("inf")
    if not b_lo < b_hi:
        return infeasible(f"empty b-window ({b_lo:.6g}, {b_hi:.6g})")

    pd_floor = 1.0 / math.sqrt(fields.lambda_B)
    lo_eff = max(b_lo, pd_floor)
    if not lo_eff < b_hi:
        return infeasible(f"no positive-definite b in window ({b_lo:.6g}, {b_hi:.6g})")
    b = (lo_eff + b_hi) / 2.0 if math.isfinite(b_hi) else lo_eff + 1.0
    a = fields.lambda_B * b

    q = QuadraticForm(a, b)
    if not q.positive_definite:
        return infeasible(f"Q_{{{a:.6g},{b:.6g}}} not positive-definite")

    slack_p = 2.0 * fields.lambda_B - 2.0 * eta - eps - eta * b
    slack_v = (2.0 * fields.mono_A - eta) * b - 2.0 - fields.lip_A**2 / eps
    eig_min, eig_max = q.eigenvalues()
    rate_c = min(slack_p, slack_v) / (2.0 * eig_max)

    return KineticConstants(
        eta=eta, eta0=eta0, b=b, epsilon=eps, rate_C=rate_c, feasible=True,
        a=a, b_window=(b_lo, b_hi), slack_p=slack_p, slack_v=slack_v,
        q_eig_min=eig_min, q_eig_max=eig_max,
    )
