"""Exact reference computations for validating the samplers.

* ULMC on a quadratic target is an affine map plus Gaussian noise, so the
  law of ``(x, v)`` stays Gaussian and can be propagated exactly.
* RC-ULMC on a quadratic target mixes ``d`` such maps; its mean and second
  moment still follow a closed linear recursion.  On the standard Gaussian
  with a uniform schedule this collapses to three scalars
  ``(E|x|^2, E<x,w>, E|w|^2)`` with ``w = x + v``.
* Closed-form W2 between Gaussians, the lower bound for the shifted
  standard-Gaussian example, and the right-hand sides of the two
  convergence bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import linalg

from .kernel import StepMoments, step_moments
from .samplers import CoordinateSchedule

__all__ = [
    "GaussianLaw",
    "MomentTriple",
    "gaussian_w2",
    "prop5_initial_law",
    "prop5_initial_triple",
    "prop5_lower_bound",
    "prop5_moment_lower_bound",
    "propagate_ulmc_gaussian",
    "rc_mean_map",
    "rc_mean_pair_step",
    "rc_moment_step",
    "rc_second_moment_step",
    "rc_triple_fixed_point",
    "rc_triple_trajectory",
    "second_moment_w2_lower_bound",
    "stationary_law",
    "theorem1_rhs",
    "theorem3_rhs",
    "ulmc_laws",
    "ulmc_transition",
]

_SYM_TOL = 1e-12
_EIG_CLAMP = 1e-12


def _psd_sqrt(c: np.ndarray, name: str = "covariance") -> np.ndarray:
    c = 0.5 * (c + c.T)
    w, q = np.linalg.eigh(c)
    scale = max(float(np.trace(c)), 0.0) or 1.0
    if w.size and w.min() < -_EIG_CLAMP * scale:
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (q * np.sqrt(w)) @ q.T


def _as_matrix(a) -> np.ndarray:
    if hasattr(a, "toarray"):
        a = a.toarray()
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    return a


# ---------------------------------------------------------------------------
# Gaussian laws and ULMC


@dataclass(frozen=True)
class GaussianLaw:
    """Gaussian law of the stacked phase vector ``(x, v)`` in ``R^{2d}``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        n = mean.size
        if n % 2 or cov.shape != (n, n):
            raise ValueError("mean must have even length 2d and cov shape (2d, 2d)")
        scale = max(abs(float(np.trace(cov))), 1.0)
        if np.max(np.abs(cov - cov.T), initial=0.0) > _SYM_TOL * scale:
            raise ValueError("covariance is not symmetric")
        if n and np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-10 * scale:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size // 2

    @classmethod
    def product(cls, x_mean, x_cov, v_var: float) -> "GaussianLaw":
        """Independent ``x ~ N(x_mean, x_cov)`` and ``v ~ N(0, v_var I)``."""
        x_mean = np.asarray(x_mean, dtype=float).reshape(-1)
        d = x_mean.size
        cov = np.zeros((2 * d, 2 * d))
        x_cov = np.asarray(x_cov, dtype=float)
        cov[:d, :d] = x_cov * np.eye(d) if x_cov.ndim == 0 else x_cov
        cov[d:, d:] = float(v_var) * np.eye(d)
        return cls(np.concatenate([x_mean, np.zeros(d)]), cov)

    def second_moment(self) -> np.ndarray:
        return self.cov + np.outer(self.mean, self.mean)

    def w2_to(self, other: "GaussianLaw") -> float:
        return gaussian_w2(self.mean, self.cov, other.mean, other.cov)


def stationary_law(A, gamma: float) -> GaussianLaw:
    """Target law ``N(0, A^{-1}) x N(0, gamma I)`` of ``(x, v)``."""
    A = _as_matrix(A)
    d = A.shape[0]
    cov = np.zeros((2 * d, 2 * d))
    cov[:d, :d] = linalg.solve(A, np.eye(d), assume_a="pos")
    cov[:d, :d] = 0.5 * (cov[:d, :d] + cov[:d, :d].T)
    cov[d:, d:] = gamma * np.eye(d)
    return GaussianLaw(np.zeros(2 * d), cov)


def ulmc_transition(A, h: float, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``z -> M z + N(0, Q)`` of one ULMC step on ``f = x^T A x / 2``."""
    A = _as_matrix(A)
    d = A.shape[0]
    m = step_moments(h, gamma)
    eye = np.eye(d)
    M = np.block(
        [
            [eye - m.coef_x_on_grad * A, m.coef_x_on_v * eye],
            [-m.coef_v_on_grad * A, m.coef_v_decay * eye],
        ]
    )
    Q = np.block([[m.var_x * eye, m.cov_xv * eye], [m.cov_xv * eye, m.var_v * eye]])
    return M, Q


def propagate_ulmc_gaussian(law: GaussianLaw, A, h: float, gamma: float, steps: int = 1) -> GaussianLaw:
    """Exact law after ``steps`` ULMC iterations."""
    A = _as_matrix(A)
    if A.shape[0] != law.dim:
        raise ValueError(f"law has dimension {law.dim}, matrix has {A.shape[0]}")
    M, Q = ulmc_transition(A, h, gamma)
    mean, cov = law.mean, law.cov
    for _ in range(int(steps)):
        mean = M @ mean
        cov = M @ cov @ M.T + Q
        cov = 0.5 * (cov + cov.T)
    return GaussianLaw(mean, cov)


def ulmc_laws(law: GaussianLaw, A, h: float, gamma: float, steps: int) -> Iterator[GaussianLaw]:
    """Yield the exact laws after 0, 1, ..., ``steps`` iterations."""
    M, Q = ulmc_transition(A, h, gamma)
    mean, cov = law.mean, law.cov
    yield law
    for _ in range(int(steps)):
        mean = M @ mean
        cov = M @ cov @ M.T + Q
        cov = 0.5 * (cov + cov.T)
        yield GaussianLaw(mean, cov)


# ---------------------------------------------------------------------------
# RC-ULMC, general quadratic


def rc_moment_step(mean, second, A, schedule: CoordinateSchedule, gamma: float):
    """Exact mean and second moment of ``(x, v)`` after one RC-ULMC step.

    The law after a random-coordinate step is a mixture, so only the first
    two moments are tracked.  Cost is ``O(d^2)`` per coordinate.
    """
    A = _as_matrix(A)
    d = A.shape[0]
    mean = np.asarray(mean, dtype=float)
    second = np.asarray(second, dtype=float)
    if mean.shape != (2 * d,) or second.shape != (2 * d, 2 * d) or schedule.dim != d:
        raise ValueError("dimension mismatch")
    new_mean = np.zeros(2 * d)
    new_second = np.zeros((2 * d, 2 * d))
    for i in range(d):
        m = step_moments(schedule.h_coord[i], gamma)
        # rows i (x_i) and d+i (v_i) of the step matrix
        R = np.zeros((2, 2 * d))
        R[0, :d] = -m.coef_x_on_grad * A[i]
        R[0, i] += 1.0
        R[0, d + i] = m.coef_x_on_v
        R[1, :d] = -m.coef_v_on_grad * A[i]
        R[1, d + i] = m.coef_v_decay
        idx = [i, d + i]
        mu_i = mean.copy()
        mu_i[idx] = R @ mean
        S = second.copy()
        RS = R @ second
        S[idx, :] = RS
        S[:, idx] = RS.T
        S[np.ix_(idx, idx)] = RS @ R.T + np.array([[m.var_x, m.cov_xv], [m.cov_xv, m.var_v]])
        new_mean += schedule.phi[i] * mu_i
        new_second += schedule.phi[i] * S
    return new_mean, 0.5 * (new_second + new_second.T)


# ---------------------------------------------------------------------------
# RC-ULMC, standard Gaussian, uniform schedule


@dataclass(frozen=True)
class MomentTriple:
    """Aggregated ``(E|x|^2, E<x,w>, E|w|^2)`` with ``w = x + v``."""

    ex2: float
    exw: float
    ew2: float

    def __post_init__(self):
        if self.ex2 < 0 or self.ew2 < 0:
            raise ValueError("second moments must be nonnegative")
        if abs(self.exw) > math.sqrt(self.ex2 * self.ew2) * (1 + 1e-12) + 1e-300:
            raise ValueError("cross moment violates Cauchy-Schwarz")

    def as_array(self) -> np.ndarray:
        return np.array([self.ex2, self.exw, self.ew2])

    @property
    def ev2(self) -> float:
        return self.ew2 - 2.0 * self.exw + self.ex2


def _xw_maps(m: StepMoments) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate map on ``(E x^2, E xw, E w^2)`` and its additive noise (gradient = x)."""
    a, b, c, e = m.coef_x_on_v, m.coef_x_on_grad, m.coef_v_decay, m.coef_v_on_grad
    p11, p12 = 1.0 - a - b, a
    p21, p22 = 1.0 - a - b - c - e, a + c
    K = np.array(
        [
            [p11 * p11, 2.0 * p11 * p12, p12 * p12],
            [p11 * p21, p11 * p22 + p12 * p21, p12 * p22],
            [p21 * p21, 2.0 * p21 * p22, p22 * p22],
        ]
    )
    noise = np.array([m.var_x, m.var_x + m.cov_xv, m.var_x + m.var_v + 2.0 * m.cov_xv])
    return K, noise


def _triple_maps(d: int, h: float, gamma: float):
    K, noise = _xw_maps(step_moments(d * h, gamma))
    T = (1.0 - 1.0 / d) * np.eye(3) + K / d
    return T, noise


def _check_uniform(d: int, phi) -> None:
    if phi is None:
        return
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.size != d or not np.allclose(phi, 1.0 / d, rtol=1e-12, atol=0.0):
        raise ValueError("the aggregated recursion holds only for the uniform schedule")


def rc_second_moment_step(m: MomentTriple, d: int, h: float, gamma: float = 1.0, phi=None) -> MomentTriple:
    """One exact RC-ULMC step of the aggregated moments on the standard Gaussian.

    Each iteration picks a coordinate uniformly and moves it with step ``d*h``.
    """
    _check_uniform(d, phi)
    T, noise = _triple_maps(d, h, gamma)
    s = T @ m.as_array() + noise
    return MomentTriple(*s)


def rc_triple_fixed_point(d: int, h: float, gamma: float = 1.0) -> np.ndarray:
    T, noise = _triple_maps(d, h, gamma)
    return np.linalg.solve(np.eye(3) - T, noise)


def rc_triple_trajectory(m0: MomentTriple, d: int, h: float, steps: int, gamma: float = 1.0, phi=None) -> np.ndarray:
    """Array of shape ``(steps + 1, 3)`` holding the aggregated moments at every iteration.

    The deviation from the fixed point is iterated rather than the moments
    themselves, which keeps the small O(h) per-step changes accurate over
    long horizons.
    """
    _check_uniform(d, phi)
    T, _ = _triple_maps(d, h, gamma)
    star = rc_triple_fixed_point(d, h, gamma)
    out = np.empty((int(steps) + 1, 3))
    dev = m0.as_array() - star
    t = T.tolist()
    d0, d1, d2 = dev
    out[0] = dev
    for k in range(1, int(steps) + 1):
        d0, d1, d2 = (
            t[0][0] * d0 + t[0][1] * d1 + t[0][2] * d2,
            t[1][0] * d0 + t[1][1] * d1 + t[1][2] * d2,
            t[2][0] * d0 + t[2][1] * d1 + t[2][2] * d2,
        )
        out[k] = (d0, d1, d2)
    return out + star


def rc_mean_map(d: int, h: float, gamma: float = 1.0) -> np.ndarray:
    """2x2 matrix advancing the per-coordinate means ``(E x_i, E w_i)`` by one uniform RC-ULMC step.

    Valid when all coordinates share the same mean, as in the shifted
    initialisation.
    """
    m = step_moments(d * h, gamma)
    a, b, c, e = m.coef_x_on_v, m.coef_x_on_grad, m.coef_v_decay, m.coef_v_on_grad
    P = np.array([[1.0 - a - b, a], [1.0 - a - b - c - e, a + c]])
    return (1.0 - 1.0 / d) * np.eye(2) + P / d


def rc_mean_pair_step(mx: float, mw: float, d: int, h: float, gamma: float = 1.0) -> tuple[float, float]:
    """One step of :func:`rc_mean_map` applied to ``(mx, mw)``."""
    nx, nw = rc_mean_map(d, h, gamma) @ np.array([mx, mw])
    return float(nx), float(nw)


# ---------------------------------------------------------------------------
# shifted standard-Gaussian example

PROP5_SHIFT = 1.0 / 400.0


def prop5_initial_law(d: int) -> GaussianLaw:
    """``x ~ N(u, I)``, ``u_i = 1/400``, ``v ~ N(0, I)``."""
    return GaussianLaw.product(np.full(d, PROP5_SHIFT), 1.0, 1.0)


def prop5_initial_triple(d: int) -> MomentTriple:
    ex2 = d * (1.0 + PROP5_SHIFT**2)
    return MomentTriple(ex2=ex2, exw=ex2, ew2=ex2 + d)


def _check_prop5_regime(d: int, h: float) -> None:
    # the boundary h = 1e-8/d is accepted; every estimate behind the bound has slack there
    if not (d >= 1 and h > 0 and h <= 1e-8 / d * (1 + 1e-12)):
        raise ValueError(f"the lower bound requires 0 < h <= 1e-8/d (got h={h!r}, d={d})")


def prop5_lower_bound(d: int, h: float, m: int) -> float:
    """``exp(-4hm) d / (8 * 800^2) + d^{3/2} h / (320 - 464 d h)``."""
    _check_prop5_regime(d, h)
    return math.exp(-4.0 * h * m) / 800.0**2 * d / 8.0 + d**1.5 * h / (320.0 - 464.0 * d * h)


def prop5_moment_lower_bound(d: int, h: float, m: int) -> float:
    """Lower envelope ``(1-2h)^m d/320000 + (4d - 5.7 d^2 h)/(2 - 2.9 d h)`` for ``E|w^m|^2``."""
    _check_prop5_regime(d, h)
    return math.exp(m * math.log1p(-2.0 * h)) * d / 320000.0 + (4.0 * d - 5.7 * d * d * h) / (2.0 - 2.9 * d * h)


def second_moment_w2_lower_bound(ew2: float, d: int) -> float:
    """``max(0, sqrt(E|w|^2) - sqrt(2d))``: W2 lower bound for the ``(x, w)`` law."""
    if ew2 < 0:
        raise ValueError("ew2 must be nonnegative")
    return max(0.0, math.sqrt(ew2) - math.sqrt(2.0 * d))


# ---------------------------------------------------------------------------
# W2 and bound right-hand sides


def gaussian_w2(mean1, cov1, mean2, cov2) -> float:
    """W2 distance between two Gaussians (Bures formula)."""
    m1 = np.asarray(mean1, dtype=float).reshape(-1)
    m2 = np.asarray(mean2, dtype=float).reshape(-1)
    c1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    c2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    n = m1.size
    if m2.size != n or c1.shape != (n, n) or c2.shape != (n, n):
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(c1)) and np.all(np.isfinite(c2))):
        raise ValueError("non-finite covariance")
    r2 = _psd_sqrt(c2, "cov2")
    _psd_sqrt(c1, "cov1")
    cross = _psd_sqrt(r2 @ (0.5 * (c1 + c1.T)) @ r2, "cross term")
    w2sq = float(np.sum((m1 - m2) ** 2) + np.trace(c1) + np.trace(c2) - 2.0 * np.trace(cross))
    return math.sqrt(max(w2sq, 0.0))


def theorem1_rhs(W0: float, m: int, h: float, gamma: float, mu: float, kappa: float, d: int) -> float:
    """ULMC bound ``sqrt(2) exp(-0.375 mu h sqrt(gamma) m) W0 + sqrt(2d) kappa h``."""
    return math.sqrt(2.0) * math.exp(-0.375 * mu * h * math.sqrt(gamma) * m) * W0 + math.sqrt(2.0 * d) * kappa * h


def theorem3_rhs(W0: float, m: int, h: float, gamma: float, mu: float, kappa_vec, phi) -> float:
    """RC-ULMC bound ``4 exp(-mu gamma m h / 8) W0 + 40 sqrt(gamma) h sqrt(sum kappa_i^2 / phi_i^2)``."""
    kappa_vec = np.asarray(kappa_vec, dtype=float)
    phi = np.asarray(phi, dtype=float)
    spread = math.sqrt(float(np.sum((kappa_vec / phi) ** 2)))
    return 4.0 * math.exp(-mu * gamma * m * h / 8.0) * W0 + 40.0 * math.sqrt(gamma) * h * spread
