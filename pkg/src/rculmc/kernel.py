"""Exact conditional Gaussian moments of one frozen-gradient underdamped step.

The dynamics are

    dX = V dt
    dV = -2 V dt - gamma * grad f(X) dt + sqrt(4 gamma) dB

and a step of length ``h`` with the gradient frozen at the starting point
gives a Gaussian ``(x', v')`` per coordinate with

    E x' = x + a v - b g          a = (1 - e^{-2h}) / 2
    E v' = c v - e g              b = gamma/2 * (h - a),  c = e^{-2h},  e = gamma * a
    Var x' = gamma * (h - 3/4 - e^{-4h}/4 + e^{-2h})
    Var v' = gamma * (1 - e^{-4h})
    Cov    = gamma/2 * (1 - e^{-2h})**2

The position variance and ``b`` cancel catastrophically for small ``h``;
both are evaluated through exponential remainders ``e^z - sum_{n<k} z^n/n!``
which switch to a power series for ``|z| < SERIES_RADIUS``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SERIES_RADIUS",
    "StepMoments",
    "CholeskyPair",
    "exp_remainder",
    "step_moments",
    "cholesky2x2",
    "step_mean",
    "moment_arrays",
]

# |z| below which exp_remainder sums its Taylor series.  At |z| = 1/2 the
# direct form loses at most ~4 bits for order 3; the series needs <= 25 terms.
SERIES_RADIUS = 0.5
_SERIES_MAX_TERMS = 60
# relative size of a negative determinant treated as roundoff
_PSD_CLAMP = 1e-18
_VAR_TOL = 1e-300


def exp_remainder(z: float, order: int) -> float:
    """Return ``e**z - sum_{n < order} z**n / n!`` without cancellation."""
    if order < 0:
        raise ValueError("order must be nonnegative")
    if abs(z) >= SERIES_RADIUS:
        return math.exp(z) - math.fsum(z**n / math.factorial(n) for n in range(order))
    term = z**order / math.factorial(order)
    total = term
    n = order
    while n < order + _SERIES_MAX_TERMS:
        n += 1
        term *= z / n
        total += term
        if abs(term) <= 1e-17 * abs(total):
            break
    return total


@dataclass(frozen=True)
class StepMoments:
    """Mean coefficients and 2x2 covariance of one step of length ``h``."""

    h: float
    gamma: float
    coef_x_on_v: float
    coef_x_on_grad: float
    coef_v_decay: float
    coef_v_on_grad: float
    var_x: float
    var_v: float
    cov_xv: float

    @property
    def covariance(self) -> np.ndarray:
        return np.array([[self.var_x, self.cov_xv], [self.cov_xv, self.var_v]])

    @property
    def determinant(self) -> float:
        return self.var_x * self.var_v - self.cov_xv**2


@dataclass(frozen=True)
class CholeskyPair:
    """Lower factor ``[[l11, 0], [l21, l22]]`` of a step covariance."""

    l11: float
    l21: float
    l22: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.l11, 0.0], [self.l21, self.l22]])


def step_moments(h: float, gamma: float) -> StepMoments:
    """Moments of one frozen-gradient step of length ``h`` with parameter ``gamma``.

    Parameters
    ----------
    h : float
        Step length, ``h >= 0``.  ``h = 0`` is the identity step.
    gamma : float
        Positive parameter scaling the force and the noise.

    Returns
    -------
    StepMoments
    """
    h = float(h)
    gamma = float(gamma)
    if not math.isfinite(h) or h < 0:
        raise ValueError(f"step length must be finite and >= 0, got {h!r}")
    if not math.isfinite(gamma) or gamma <= 0:
        raise ValueError(f"gamma must be finite and > 0, got {gamma!r}")

    # u = 1 - e^{-2h}
    u = -math.expm1(-2.0 * h)
    a = 0.5 * u
    # h - a = (e^{-2h} - 1 + 2h) / 2
    h_minus_a = 0.5 * exp_remainder(-2.0 * h, 2)
    # h - 3/4 - e^{-4h}/4 + e^{-2h} = R3(-2h) - R3(-4h)/4
    var_x_unit = exp_remainder(-2.0 * h, 3) - 0.25 * exp_remainder(-4.0 * h, 3)
    var_x_unit = max(var_x_unit, 0.0)
    return StepMoments(
        h=h,
        gamma=gamma,
        coef_x_on_v=a,
        coef_x_on_grad=0.5 * gamma * h_minus_a,
        coef_v_decay=math.exp(-2.0 * h),
        coef_v_on_grad=gamma * a,
        var_x=gamma * var_x_unit,
        var_v=gamma * u * (2.0 - u),
        cov_xv=0.5 * gamma * u * u,
    )


def cholesky2x2(m: StepMoments) -> CholeskyPair:
    """Cholesky factor of the step covariance, clamping roundoff-negative determinants."""
    var_x, var_v, cov = m.var_x, m.var_v, m.cov_xv
    scale = max(abs(var_x), abs(var_v), _VAR_TOL)
    if var_x < -1e-15 * scale or var_v < -1e-15 * scale:
        raise ValueError(
            f"step covariance has a negative variance (var_x={var_x!r}, var_v={var_v!r})"
        )
    if var_x <= _VAR_TOL:
        # position variance vanishes only with the whole step (h = 0)
        return CholeskyPair(0.0, 0.0, math.sqrt(max(var_v, 0.0)))
    l11 = math.sqrt(var_x)
    l21 = cov / l11
    # Schur complement det/var_x, formed without the product var_x*var_v
    # which underflows for tiny steps
    schur = var_v - l21 * l21
    if schur < 0:
        if schur < -_PSD_CLAMP * var_v:
            raise ValueError(f"step covariance is not positive semidefinite (det={schur * var_x!r})")
        schur = 0.0
    return CholeskyPair(l11, l21, math.sqrt(schur))


def step_mean(m: StepMoments, x, v, g):
    """Conditional mean of ``(x', v')`` given ``(x, v)`` and the frozen derivative ``g``.

    Works elementwise on scalars or arrays.
    """
    mean_x = x + m.coef_x_on_v * v - m.coef_x_on_grad * g
    mean_v = m.coef_v_decay * v - m.coef_v_on_grad * g
    return mean_x, mean_v


def moment_arrays(hs, gamma: float) -> np.ndarray:
    """Stack moments and Cholesky factors for several step lengths.

    Returns an array of shape ``(len(hs), 7)`` with columns
    ``coef_x_on_v, coef_x_on_grad, coef_v_decay, coef_v_on_grad, l11, l21, l22``,
    the layout consumed by the compiled chain kernels.
    """
    rows = []
    for h in np.atleast_1d(np.asarray(hs, dtype=float)):
        m = step_moments(h, gamma)
        c = cholesky2x2(m)
        rows.append(
            (m.coef_x_on_v, m.coef_x_on_grad, m.coef_v_decay, m.coef_v_on_grad, c.l11, c.l21, c.l22)
        )
    return np.array(rows, dtype=float).reshape(-1, 7)
