"""Diagnostics computed from chain output."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

__all__ = [
    "MomentErrorReport",
    "RunningMean",
    "lyapunov",
    "mean_shift_lower_bound",
    "moment_error",
    "reference_second_moment",
    "second_moment_gap",
    "spectral_norm",
    "time_averaged_moment_error",
]

POWER_TOL = 1e-10
POWER_MAX_ITER = 100_000


def spectral_norm(m, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """Largest absolute eigenvalue of a symmetric matrix by power iteration.

    Iterates on ``M^2`` from a fixed start vector and stops once the
    eigen-residual ``|M^2 x - lam x|`` falls below ``tol * lam``.  The input
    is symmetrised first.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    m = 0.5 * (m + m.T)
    k = m.shape[0]
    if k == 0 or not np.any(m):
        return 0.0
    sq = m @ m
    # fixed, generic start; falls back to basis vectors if it lies in the kernel
    starts = [1.0 + np.arange(k) / (2.0 * k)] + [np.eye(k)[i] for i in range(k)]
    for x in starts:
        x = x / np.linalg.norm(x)
        y = sq @ x
        if np.linalg.norm(y) > 0:
            break
    lam = 0.0
    for _ in range(max_iter):
        y = sq @ x
        lam = float(x @ y)
        if np.linalg.norm(y - lam * x) <= tol * abs(lam):
            break
        x = y / np.linalg.norm(y)
    return math.sqrt(max(lam, 0.0))


@dataclass
class MomentErrorReport:
    """Spectral-norm distance between empirical and reference ``E[x x^T]`` blocks."""

    empirical_psi: np.ndarray
    reference_psi: np.ndarray
    error: float
    n_samples: int
    cost_units: int = 0
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    extras: dict = field(default_factory=dict)

    @property
    def frobenius(self) -> float:
        return float(np.linalg.norm(self.empirical_psi - self.reference_psi))

    def to_dict(self) -> dict:
        out = {
            "error": self.error,
            "n_samples": self.n_samples,
            "cost_units": self.cost_units,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }
        out.update(self.extras)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _psi_mean(samples: np.ndarray, k: int) -> np.ndarray:
    xs = samples[:, :k]
    # sequential reduction over samples in index order
    return np.add.reduce(xs[:, :, None] * xs[:, None, :], axis=0) / xs.shape[0]


def moment_error(
    samples,
    reference,
    k: Optional[int] = None,
    cost_units: int = 0,
    seed: Optional[int] = None,
    config_hash: Optional[str] = None,
) -> MomentErrorReport:
    """Error ``|| mean_n x_n x_n^T - reference ||_2`` on the first ``k`` coordinates.

    Parameters
    ----------
    samples : array (N, d)
        Final states of ``N`` independent chains.
    reference : array (k, k)
        Exact ``E[x x^T]`` of the target on those coordinates.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    n, d = samples.shape
    k = reference.shape[0] if k is None else int(k)
    if n < 1:
        raise ValueError("need at least one sample")
    if k > d:
        raise ValueError(f"k={k} exceeds the sample dimension {d}")
    if reference.shape != (k, k):
        raise ValueError(f"reference must be {k}x{k}")
    psi = _psi_mean(samples, k)
    err = spectral_norm(psi - reference)
    return MomentErrorReport(psi, reference, err, n, int(cost_units), seed, config_hash)


def time_averaged_moment_error(snapshots, reference, k: Optional[int] = None) -> MomentErrorReport:
    """Variant of :func:`moment_error` pooling several snapshots of each chain.

    ``snapshots`` has shape ``(S, N, d)``.  Pooling trades the single-time
    error for lower variance; it is an extension, not the reproduction metric.
    """
    snaps = np.asarray(snapshots, dtype=float)
    if snaps.ndim != 3:
        raise ValueError("snapshots must have shape (S, N, d)")
    report = moment_error(snaps.reshape(-1, snaps.shape[2]), reference, k)
    report.extras["time_averaged"] = True
    report.extras["n_snapshots"] = snaps.shape[0]
    return report


def reference_second_moment(target=None, gamma_matrix=None) -> np.ndarray:
    """Exact ``E[x x^T] = (G^T G)^{-1}`` on the coupled block of the product target."""
    if gamma_matrix is None:
        if target is None or not hasattr(target, "gamma_matrix"):
            raise ValueError("need a product target or an explicit block matrix")
        gamma_matrix = target.gamma_matrix
    G = np.asarray(gamma_matrix, dtype=float)
    gram = G.T @ G
    try:
        inv = linalg.solve(gram, np.eye(gram.shape[0]), assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise ValueError("block matrix G^T G is singular") from exc
    return 0.5 * (inv + inv.T)


def lyapunov(state, x_star=None) -> float:
    """``|x - x*|^2 + |x - x* + v|^2 + 1``.

    ``state`` is a :class:`~rculmc.samplers.PhaseState` or an ``(x, v)`` pair.
    """
    if x_star is None:
        raise ValueError("the Lyapunov function needs the target minimiser")
    x, v = (state.x, state.v) if hasattr(state, "x") else state
    dx = np.asarray(x, dtype=float) - np.asarray(x_star, dtype=float)
    w = dx + np.asarray(v, dtype=float)
    return float(dx @ dx + w @ w + 1.0)


def mean_shift_lower_bound(sample_mean, target_mean) -> float:
    """W2 is at least the distance between means."""
    return float(np.linalg.norm(np.asarray(sample_mean) - np.asarray(target_mean)))


def second_moment_gap(ex2: float, target_ex2: float) -> float:
    """W2 lower bound ``|sqrt(E|x|^2) - sqrt(E_p|x|^2)|`` from second moments about the origin."""
    return abs(math.sqrt(ex2) - math.sqrt(target_ex2))


class RunningMean:
    """Streaming mean of scalars or equally-shaped arrays."""

    def __init__(self):
        self.count = 0
        self._total = None

    def update(self, value) -> None:
        value = np.asarray(value, dtype=float)
        self._total = value.copy() if self._total is None else self._total + value
        self.count += 1

    @property
    def mean(self):
        if self.count == 0:
            raise ValueError("no values accumulated")
        out = self._total / self.count
        return float(out) if out.ndim == 0 else out
