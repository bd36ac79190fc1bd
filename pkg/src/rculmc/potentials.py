"""Strongly log-concave target potentials ``f`` with partial-derivative access.

Every target exposes its value, full gradient, single partial derivative and
the smoothness constants ``mu`` (strong convexity), ``big_L`` (gradient
Lipschitz constant) and ``coord_L`` (directional Lipschitz constants).
Derivative calls optionally charge a :class:`CostLedger`: one unit per
partial derivative, ``d`` units per full gradient.

The concrete targets are all quadratic, ``f(x) = x^T A x / 2`` with a sparse
symmetric positive definite ``A``; the compiled chain kernels consume the CSR
arrays returned by :meth:`QuadraticPotential.hessian_csr`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

__all__ = [
    "CostLedger",
    "TargetPotential",
    "QuadraticPotential",
    "QuadraticTarget",
    "ProductExperimentTarget",
    "GraphTarget",
    "CallableTarget",
    "ConditionNumbers",
    "condition_numbers",
    "read_edge_list",
    "finite_difference_mismatch",
]

_CONST_RTOL = 1e-9


@dataclass
class CostLedger:
    """Counter of partial-derivative evaluations owned by a single chain."""

    units: int = 0

    def charge(self, n: int = 1) -> None:
        self.units += int(n)


@dataclass(frozen=True)
class ConditionNumbers:
    kappa: float
    kappa_vec: np.ndarray
    kappa_max: float

    def __iter__(self):
        return iter((self.kappa, self.kappa_vec, self.kappa_max))


def _as_vector(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise ValueError(f"expected a vector of length {d}, got shape {x.shape}")
    return x


class TargetPotential:
    """Base class for ``f`` with constants ``mu``, ``big_L``, ``coord_L``.

    Subclasses implement ``_value``, ``_grad`` and ``_partial``; the public
    methods validate shapes and charge the ledger.
    """

    dim: int
    mu: float
    big_L: float
    coord_L: np.ndarray
    x_star: Optional[np.ndarray]

    def _init_constants(self, dim, mu, big_L, coord_L, x_star=None) -> None:
        dim = int(dim)
        if dim < 1:
            raise ValueError("dimension must be a positive integer")
        coord_L = np.array(coord_L, dtype=float).reshape(-1)
        if coord_L.shape != (dim,):
            raise ValueError(f"coord_L must have length {dim}")
        mu, big_L = float(mu), float(big_L)
        if not mu > 0:
            raise ValueError(f"mu must be positive, got {mu}")
        if not np.all(coord_L > 0):
            raise ValueError("directional Lipschitz constants must be positive")
        tol = _CONST_RTOL * big_L
        if mu > big_L + tol:
            raise ValueError(f"mu={mu} exceeds L={big_L}")
        if np.any(coord_L > big_L + tol):
            raise ValueError("a directional constant L_i exceeds L")
        if big_L > dim * coord_L.max() + tol:
            raise ValueError("L exceeds d * max_i L_i")
        coord_L.setflags(write=False)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "big_L", big_L)
        object.__setattr__(self, "coord_L", coord_L)
        if x_star is not None:
            x_star = np.array(x_star, dtype=float)
            if x_star.shape != (dim,):
                raise ValueError("x_star has the wrong length")
            x_star.setflags(write=False)
        object.__setattr__(self, "x_star", x_star)

    # public surface -------------------------------------------------------

    def eval(self, x) -> float:
        return float(self._value(_as_vector(x, self.dim)))

    def partial_grad(self, i: int, x, ledger: Optional[CostLedger] = None) -> float:
        i = int(i)
        if not 0 <= i < self.dim:
            raise IndexError(f"coordinate {i} out of range for dimension {self.dim}")
        x = _as_vector(x, self.dim)
        if ledger is not None:
            ledger.charge(1)
        return float(self._partial(i, x))

    def full_grad(self, x, ledger: Optional[CostLedger] = None) -> np.ndarray:
        x = _as_vector(x, self.dim)
        if ledger is not None:
            ledger.charge(self.dim)
        return np.asarray(self._grad(x), dtype=float)

    def condition_numbers(self) -> ConditionNumbers:
        return condition_numbers(self)

    # subclass hooks -------------------------------------------------------

    def _value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _partial(self, i: int, x: np.ndarray) -> float:
        return self._grad(x)[i]


def condition_numbers(target: TargetPotential) -> ConditionNumbers:
    """``kappa = L/mu``, ``kappa_i = L_i/mu`` and ``kappa_max``.

    Raises if the chain ``kappa_i <= kappa_max <= kappa <= d * kappa_max``
    is violated beyond roundoff.
    """
    if not target.mu > 0:
        raise ValueError("mu must be positive")
    kappa = target.big_L / target.mu
    kappa_vec = np.asarray(target.coord_L, dtype=float) / target.mu
    kappa_max = float(kappa_vec.max())
    tol = _CONST_RTOL * kappa
    if not (kappa_max <= kappa + tol and kappa <= target.dim * kappa_max + tol):
        raise ValueError(
            f"condition numbers violate kappa_max <= kappa <= d*kappa_max "
            f"(kappa={kappa}, kappa_max={kappa_max}, d={target.dim})"
        )
    return ConditionNumbers(kappa, kappa_vec, kappa_max)


class QuadraticPotential(TargetPotential):
    """``f(x) = x^T A x / 2`` for a sparse SPD matrix ``A``.

    ``mu`` and ``big_L`` are the extreme eigenvalues of ``A`` and
    ``coord_L[i] = A[i, i]``; the minimizer is the origin.
    """

    def __init__(self, A, *, eigenvalues: Optional[tuple[float, float]] = None):
        A = sparse.csr_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        d = A.shape[0]
        asym = abs(A - A.T)
        if asym.nnz and asym.max() > 1e-12 * max(abs(A).max(), 1.0):
            raise ValueError("A must be symmetric")
        A = (A + A.T) * 0.5
        A.sort_indices()
        A.eliminate_zeros()
        if eigenvalues is None:
            ev = np.linalg.eigvalsh(A.toarray())
            lo, hi = float(ev[0]), float(ev[-1])
        else:
            lo, hi = map(float, eigenvalues)
        if not lo > 0:
            raise ValueError(f"A is not positive definite (smallest eigenvalue {lo:.3e})")
        self._A = A
        self._dense = A.toarray() if d <= 512 else None
        self._init_constants(d, lo, hi, A.diagonal(), np.zeros(d))

    @property
    def hessian(self) -> sparse.csr_matrix:
        return self._A

    def hessian_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        A = self._A
        return (
            A.indptr.astype(np.int64),
            A.indices.astype(np.int64),
            A.data.astype(np.float64),
        )

    def dense_hessian(self) -> np.ndarray:
        return self._dense.copy() if self._dense is not None else self._A.toarray()

    def covariance(self) -> np.ndarray:
        """Covariance ``A^{-1}`` of the target density."""
        from scipy import linalg

        return linalg.solve(self.dense_hessian(), np.eye(self.dim), assume_a="pos")

    def coupled_closure(self, coords) -> np.ndarray:
        """Coordinates whose dynamics can influence any of ``coords``.

        These are the connected components of the Hessian sparsity graph that
        contain an element of ``coords``, returned sorted.
        """
        coords = np.unique(np.asarray(coords, dtype=np.int64))
        if coords.size and (coords[0] < 0 or coords[-1] >= self.dim):
            raise IndexError("coordinate out of range")
        _, labels = csgraph.connected_components(self._A, directed=False)
        keep = np.isin(labels, labels[coords])
        return np.flatnonzero(keep).astype(np.int64)

    def _value(self, x):
        return 0.5 * float(x @ (self._A @ x))

    def _grad(self, x):
        # CSR row sums run in stored order, matching the compiled kernels
        return self._A @ x

    def _partial(self, i, x):
        A = self._A
        lo, hi = A.indptr[i], A.indptr[i + 1]
        # left-to-right sum in stored order, as in the compiled kernels
        g = 0.0
        for a, xj in zip(A.data[lo:hi].tolist(), x[A.indices[lo:hi]].tolist()):
            g += a * xj
        return g


class QuadraticTarget(QuadraticPotential):
    """Dense quadratic target ``f(x) = x^T A x / 2``."""

    def __init__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        super().__init__(A)
        self.A = A.copy()
        self.A.setflags(write=False)

    @classmethod
    def standard_gaussian(cls, d: int) -> "QuadraticTarget":
        return cls(np.eye(d))

    @classmethod
    def diagonal(cls, diag) -> "QuadraticTarget":
        return cls(np.diag(np.asarray(diag, dtype=float)))

    def __repr__(self) -> str:
        return f"QuadraticTarget(d={self.dim}, mu={self.mu:.4g}, L={self.big_L:.4g})"


class ProductExperimentTarget(QuadraticPotential):
    """Block target ``x_b^T G^T G x_b / 2 + |x_tail|^2 / 2``.

    ``x_b`` holds the first ``block`` coordinates and ``G = T + (d/10) I`` with
    ``T`` a standard normal matrix drawn from ``numpy.random.default_rng(seed)``.
    The draw is repeated while ``G^T G`` has condition number above
    ``max_condition``.

    Parameters
    ----------
    d : int
        Total dimension, at least ``block``.
    seed : int
        Seed for ``T``.
    block : int
        Size of the coupled block (10 in the reference experiment).
    gamma_matrix : array, optional
        Use this ``G`` instead of drawing one.
    """

    def __init__(
        self,
        d: int = 100,
        seed: int = 0,
        block: int = 10,
        gamma_matrix=None,
        max_condition: float = 1e12,
    ):
        d, block = int(d), int(block)
        if block < 1 or d < block:
            raise ValueError("need 1 <= block <= d")
        if gamma_matrix is None:
            rng = np.random.default_rng(seed)
            for _ in range(100):
                G = rng.standard_normal((block, block)) + (d / 10.0) * np.eye(block)
                if np.linalg.cond(G.T @ G) < max_condition:
                    break
            else:  # pragma: no cover - needs a pathological seed
                raise RuntimeError("could not draw a well-conditioned block matrix")
        else:
            G = np.array(gamma_matrix, dtype=float)
            if G.shape != (block, block):
                raise ValueError(f"gamma_matrix must be {block}x{block}")
        B = G.T @ G
        B = 0.5 * (B + B.T)
        ev = np.linalg.eigvalsh(B)
        lo, hi = float(ev[0]), float(ev[-1])
        if d > block:
            lo, hi = min(lo, 1.0), max(hi, 1.0)
        A = sparse.block_diag([sparse.csr_matrix(B), sparse.identity(d - block)], format="csr")
        super().__init__(A, eigenvalues=(lo, hi))
        self.seed = seed
        self.block = block
        self.gamma_matrix = G
        self.gamma_matrix.setflags(write=False)

    @property
    def block_hessian(self) -> np.ndarray:
        return self.gamma_matrix.T @ self.gamma_matrix

    def __repr__(self) -> str:
        return f"ProductExperimentTarget(d={self.dim}, block={self.block}, seed={self.seed})"


def read_edge_list(path) -> np.ndarray:
    """Read ``i j`` pairs (0-indexed, one per line, ``#`` comments allowed)."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'i j', got {line!r}")
        i, j = int(parts[0]), int(parts[1])
        if i < 0 or j < 0:
            raise ValueError(f"{path}:{lineno}: negative node index")
        edges.append((i, j))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


class GraphTarget(QuadraticPotential):
    """``f(x) = sum_e beta_e (x_i - x_j)^2 / 2 + alpha |x|^2 / 2`` over directed edges.

    The partial derivative with respect to ``x_i`` only visits the edges
    incident to node ``i``.
    """

    def __init__(self, d: int, edges, beta=1.0, alpha: float = 1.0):
        d = int(d)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= d):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        alpha = float(alpha)
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        beta = np.broadcast_to(np.asarray(beta, dtype=float), (len(edges),)).copy()
        if np.any(beta < 0):
            raise ValueError("coupling weights must be nonnegative")
        i, j = edges[:, 0], edges[:, 1]
        W = sparse.coo_matrix((beta, (i, j)), shape=(d, d))
        W = (W + W.T).tocsr()
        deg = np.asarray(W.sum(axis=1)).ravel()
        A = sparse.diags(alpha + deg) - W
        super().__init__(A)
        self.alpha = alpha
        self.edges = edges
        self.beta = beta
        order = np.argsort(np.concatenate([i, j]), kind="stable")
        ends = np.concatenate([i, j])[order]
        self._inc_edge = np.concatenate([np.arange(len(edges))] * 2)[order]
        self._inc_other = np.concatenate([j, i])[order]
        self._inc_ptr = np.searchsorted(ends, np.arange(d + 1))

    @classmethod
    def from_edge_file(cls, path, d: Optional[int] = None, beta=1.0, alpha: float = 1.0):
        edges = read_edge_list(path)
        if d is None:
            d = int(edges.max()) + 1 if edges.size else 1
        return cls(d, edges, beta=beta, alpha=alpha)

    def incident_edges(self, i: int) -> np.ndarray:
        return self._inc_edge[self._inc_ptr[i] : self._inc_ptr[i + 1]]

    def _value(self, x):
        i, j = self.edges[:, 0], self.edges[:, 1]
        return 0.5 * float(self.beta @ (x[i] - x[j]) ** 2) + 0.5 * self.alpha * float(x @ x)

    def _grad(self, x):
        i, j = self.edges[:, 0], self.edges[:, 1]
        diff = self.beta * (x[i] - x[j])
        g = self.alpha * x
        np.add.at(g, i, diff)
        np.add.at(g, j, -diff)
        return g

    def _partial(self, i, x):
        lo, hi = self._inc_ptr[i], self._inc_ptr[i + 1]
        e = self._inc_edge[lo:hi]
        other = self._inc_other[lo:hi]
        return self.alpha * x[i] + float(self.beta[e] @ (x[i] - x[other]))

    def __repr__(self) -> str:
        return f"GraphTarget(d={self.dim}, edges={len(self.edges)}, alpha={self.alpha})"


@dataclass(frozen=True, eq=False)
class CallableTarget(TargetPotential):
    """Target given by user functions and user-declared constants.

    The constants cannot be verified globally; :meth:`spot_check` compares the
    derivatives against central finite differences at random points.
    """

    value_fn: Callable[[np.ndarray], float]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    dim: int
    mu: float
    big_L: float
    coord_L: np.ndarray
    x_star: Optional[np.ndarray] = None
    partial_fn: Optional[Callable[[int, np.ndarray], float]] = field(default=None)

    def __post_init__(self):
        self._init_constants(self.dim, self.mu, self.big_L, self.coord_L, self.x_star)

    def _value(self, x):
        return self.value_fn(x)

    def _grad(self, x):
        return self.grad_fn(x)

    def _partial(self, i, x):
        if self.partial_fn is not None:
            return self.partial_fn(i, x)
        return self.grad_fn(x)[i]

    def spot_check(self, rng=None, n_points: int = 10) -> float:
        """Largest relative mismatch between ``partial_grad`` and finite differences."""
        return finite_difference_mismatch(self, rng, n_points)


def finite_difference_mismatch(target: TargetPotential, rng=None, n_points: int = 10, scale=1.0):
    """Max relative gap between partial derivatives and central differences of ``eval``."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(n_points):
        x = scale * rng.standard_normal(target.dim)
        for i in range(target.dim):
            step = 1e-5 * max(1.0, abs(x[i]))
            e = np.zeros(target.dim)
            e[i] = step
            fd = (target.eval(x + e) - target.eval(x - e)) / (2 * step)
            exact = target.partial_grad(i, x)
            denom = max(abs(exact), math.sqrt(target.big_L) * 1e-3, 1e-8)
            worst = max(worst, abs(fd - exact) / denom)
    return worst
