"""ULMC and random-coordinate ULMC chains.

One ULMC iteration moves every coordinate with the exact frozen-gradient
step of length ``h`` and costs ``d`` partial derivatives.  One RC-ULMC
iteration draws a coordinate ``r`` from ``phi``, moves only ``(x_r, v_r)``
with step ``h / phi_r`` and costs one partial derivative.

Random-stream layout (shared with :mod:`rculmc.engine`): the initial state
uses ``d`` normals for ``x`` then ``d`` normals for ``v``; a ULMC iteration
uses two normals per coordinate in coordinate order; an RC-ULMC iteration
uses one uniform for the coordinate draw followed by two normals.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Optional, Union

import numpy as np
from scipy import linalg

from .kernel import StepMoments, cholesky2x2, moment_arrays, step_moments
from .potentials import CostLedger, QuadraticPotential, TargetPotential, condition_numbers

__all__ = [
    "Algorithm",
    "AdmissibilityError",
    "AdmissibilityReport",
    "BoundCheck",
    "ChainResult",
    "CoordinateSchedule",
    "InitialDistribution",
    "PhaseState",
    "SamplerConfig",
    "alias_table",
    "optimal_phi",
    "rc_ulmc_step",
    "run_chain",
    "ulmc_step",
    "validate_stepsize",
]

PHI_FLOOR = 1e-12


class Algorithm(str, enum.Enum):
    ULMC = "ulmc"
    RC_ULMC = "rc-ulmc"

    @classmethod
    def parse(cls, value: Union[str, "Algorithm"]) -> "Algorithm":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown algorithm {value!r} (expected 'ulmc' or 'rc-ulmc')")


class AdmissibilityError(ValueError):
    """Stepsize or gamma outside the bounds required by the convergence theorems."""


# ---------------------------------------------------------------------------
# coordinate schedule


def alias_table(p) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table for the probability vector ``p``.

    Returns ``(prob, alias)``: draw ``j`` uniformly, keep it with probability
    ``prob[j]``, otherwise take ``alias[j]``.
    """
    p = np.asarray(p, dtype=float)
    n = p.size
    scaled = p * n
    prob = np.ones(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    # leftovers are 1 up to roundoff
    for i in small + large:
        prob[i] = 1.0
        alias[i] = i
    return prob, alias


def draw_coordinate(prob: np.ndarray, alias: np.ndarray, u: float) -> int:
    """Alias draw from a single uniform ``u`` in ``[0, 1)``."""
    n = prob.size
    t = u * n
    j = min(int(t), n - 1)
    return j if t - j < prob[j] else int(alias[j])


def optimal_phi(coord_L) -> np.ndarray:
    """Coordinate probabilities ``L_i^{2/3} / sum_j L_j^{2/3}``.

    This minimises ``sum_i kappa_i^2 / phi_i^2`` over the simplex.
    """
    L = np.asarray(coord_L, dtype=float).reshape(-1)
    if L.size == 0 or not np.all(np.isfinite(L)) or np.any(L <= 0):
        raise ValueError("directional Lipschitz constants must be finite and positive")
    w = np.cbrt(L) ** 2
    return w / w.sum()


@dataclass(frozen=True)
class CoordinateSchedule:
    """Probabilities ``phi``, base stepsize ``h`` and per-coordinate steps ``h / phi_i``."""

    phi: np.ndarray
    h_base: float
    h_coord: np.ndarray = field(init=False)
    alias_prob: np.ndarray = field(init=False, repr=False)
    alias_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float).reshape(-1)
        h = float(self.h_base)
        if phi.size == 0:
            raise ValueError("phi must be nonempty")
        if not np.all(np.isfinite(phi)) or np.any(phi < PHI_FLOOR):
            raise ValueError(f"every phi_i must be finite and >= {PHI_FLOOR}")
        if abs(phi.sum() - 1.0) > 1e-12:
            raise ValueError(f"phi must sum to 1 (sum = {phi.sum()!r})")
        if not (math.isfinite(h) and h >= 0):
            raise ValueError("h must be finite and nonnegative")
        prob, alias = alias_table(phi)
        for arr in (phi, prob, alias):
            arr.setflags(write=False)
        h_coord = h / phi
        h_coord.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "h_base", h)
        object.__setattr__(self, "h_coord", h_coord)
        object.__setattr__(self, "alias_prob", prob)
        object.__setattr__(self, "alias_index", alias)

    @classmethod
    def uniform(cls, d: int, h: float) -> "CoordinateSchedule":
        return cls(np.full(int(d), 1.0 / int(d)), h)

    @classmethod
    def optimal(cls, coord_L, h: float) -> "CoordinateSchedule":
        return cls(optimal_phi(coord_L), h)

    @property
    def dim(self) -> int:
        return self.phi.size

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.phi, 1.0 / self.dim, rtol=1e-12, atol=0.0))

    def draw(self, rng: np.random.Generator) -> int:
        return draw_coordinate(self.alias_prob, self.alias_index, rng.random())

    def expected_time_per_step(self) -> float:
        return float(np.sum(self.phi * self.h_coord))

    def with_h(self, h: float) -> "CoordinateSchedule":
        return CoordinateSchedule(self.phi, h)


# ---------------------------------------------------------------------------
# configuration and state


@dataclass(frozen=True)
class InitialDistribution:
    """Gaussian initial law ``x ~ N(x_mean, C)``, ``v ~ N(0, v_var I)``.

    ``x_cov`` is ``"identity"`` or ``"target"`` (the inverse Hessian of a
    quadratic target).  ``v_var=None`` means ``gamma``, the stationary
    velocity variance.
    """

    x_mean: Any = 0.0
    x_cov: str = "identity"
    x_scale: float = 1.0
    v_var: Optional[float] = None

    def __post_init__(self):
        if self.x_cov not in ("identity", "target"):
            raise ValueError("x_cov must be 'identity' or 'target'")

    @classmethod
    def shifted(cls, shift, x_cov: str = "identity", v_var: Optional[float] = None):
        return cls(x_mean=shift, x_cov=x_cov, v_var=v_var)

    @classmethod
    def prop5(cls, d: int) -> "InitialDistribution":
        """``x ~ N(u, I)`` with ``u_i = 1/400``, ``v ~ N(0, I)``."""
        return cls(x_mean=np.full(int(d), 1.0 / 400.0), v_var=1.0)

    def mean_vector(self, d: int) -> np.ndarray:
        mean = np.asarray(self.x_mean, dtype=float)
        if mean.ndim == 0:
            return np.full(d, float(mean))
        if mean.size > d:
            raise ValueError("initial mean longer than the dimension")
        # a short mean vector shifts the leading coordinates
        out = np.zeros(d)
        out[: mean.size] = mean
        return out

    def factor(self, target: TargetPotential):
        """Return ``apply(z)`` mapping standard normals to the centred x-draw."""
        if self.x_cov == "identity":
            s = float(self.x_scale)
            return lambda z: s * z
        if not isinstance(target, QuadraticPotential):
            raise TypeError("x_cov='target' needs a quadratic target")
        chol = linalg.cholesky(target.dense_hessian(), lower=True)
        s = float(self.x_scale)
        return lambda z: s * linalg.solve_triangular(chol, z, lower=True, trans="T")

    def velocity_variance(self, gamma: float) -> float:
        return float(gamma if self.v_var is None else self.v_var)

    def sample(self, target: TargetPotential, gamma: float, rng: np.random.Generator):
        d = target.dim
        x = self.mean_vector(d) + self.factor(target)(rng.standard_normal(d))
        v = math.sqrt(self.velocity_variance(gamma)) * rng.standard_normal(d)
        return x, v


@dataclass(frozen=True)
class SamplerConfig:
    gamma: float
    h: float
    schedule: Optional[CoordinateSchedule] = None
    max_iters: Optional[int] = None
    rng_seed: int = 0
    strict_admissibility: bool = False
    init: InitialDistribution = field(default_factory=InitialDistribution)

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be positive")
        if not (math.isfinite(self.h) and self.h >= 0):
            raise ValueError("h must be nonnegative")
        if self.schedule is not None and abs(self.schedule.h_base - self.h) > 1e-15 * max(self.h, 1):
            raise ValueError("schedule.h_base must equal h")

    def schedule_for(self, d: int) -> CoordinateSchedule:
        if self.schedule is None:
            return CoordinateSchedule.uniform(d, self.h)
        if self.schedule.dim != d:
            raise ValueError(f"schedule has {self.schedule.dim} coordinates, target has {d}")
        return self.schedule


@dataclass
class PhaseState:
    x: np.ndarray
    v: np.ndarray
    elapsed_time: float = 0.0
    iter: int = 0
    cost_units: int = 0

    def copy(self) -> "PhaseState":
        return PhaseState(self.x.copy(), self.v.copy(), self.elapsed_time, self.iter, self.cost_units)

    @classmethod
    def initial(cls, target, config: SamplerConfig, rng: np.random.Generator) -> "PhaseState":
        x, v = config.init.sample(target, config.gamma, rng)
        return cls(x, v)


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class BoundCheck:
    name: str
    value: float
    bound: float
    passed: bool
    depends_on: str = ""

    @property
    def slack(self) -> float:
        return self.bound / self.value if self.value > 0 else math.inf


@dataclass(frozen=True)
class AdmissibilityReport:
    algorithm: Algorithm
    checks: tuple[BoundCheck, ...]
    gamma_max: float
    h_max: float
    binding: str
    iteration_estimate: Optional[int] = None
    cost_estimate: Optional[int] = None
    accuracy: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[BoundCheck]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm.value,
            "passed": self.passed,
            "gamma_max": self.gamma_max,
            "h_max": self.h_max,
            "binding": self.binding,
            "iteration_estimate": self.iteration_estimate,
            "cost_estimate": self.cost_estimate,
            "accuracy": self.accuracy,
            "checks": [
                {
                    "name": c.name,
                    "value": c.value,
                    "bound": c.bound,
                    "passed": c.passed,
                    "depends_on": c.depends_on,
                }
                for c in self.checks
            ],
        }


def validate_stepsize(
    target: TargetPotential,
    config: SamplerConfig,
    algorithm,
    accuracy: float = 0.1,
    w0: float = 1.0,
) -> AdmissibilityReport:
    """Check ``(gamma, h)`` against the hypotheses of the convergence bounds.

    ULMC needs ``gamma <= 4/(mu+L)`` and ``h <= sqrt(gamma) mu / (8 L)``;
    RC-ULMC needs ``gamma <= 1/L`` and ``h <= gamma mu min_i phi_i / 240``.

    The report also carries an iteration estimate for reaching W2 accuracy
    ``accuracy`` from an initial distance ``w0``, obtained by making both
    terms of the corresponding bound at most ``accuracy / 2``.
    """
    algorithm = Algorithm.parse(algorithm)
    mu, L, d = target.mu, target.big_L, target.dim
    gamma, h = float(config.gamma), float(config.h)
    kappa, kappa_vec, _ = condition_numbers(target)
    eps = float(accuracy)
    g_eff = gamma
    if algorithm is Algorithm.ULMC:
        gamma_max = 4.0 / (mu + L)
        h_max = math.sqrt(gamma) * mu / (8.0 * L)
        checks = (
            BoundCheck("gamma <= 4/(mu+L)", gamma, gamma_max, gamma <= gamma_max * (1 + 1e-12)),
            BoundCheck("h <= sqrt(gamma)*mu/(8L)", h, h_max, h <= h_max * (1 + 1e-12), "gamma"),
        )
        g_eff = min(gamma, gamma_max)
        h_eps = min(math.sqrt(g_eff) * mu / (8 * L), eps / (2 * math.sqrt(2 * d) * kappa))
        iters = math.log(max(2 * math.sqrt(2) * w0 / eps, 1.0)) / (0.375 * mu * h_eps * math.sqrt(g_eff))
        per_iter = d
    else:
        sched = config.schedule_for(d)
        gamma_max = 1.0 / L
        h_max = gamma * mu * float(sched.phi.min()) / 240.0
        depends = "schedule (min phi_i)" if sched.phi.min() < 1.0 / d * (1 - 1e-12) else "gamma, mu"
        checks = (
            BoundCheck("gamma <= 1/L", gamma, gamma_max, gamma <= gamma_max * (1 + 1e-12)),
            BoundCheck("h <= gamma*mu*min(phi)/240", h, h_max, h <= h_max * (1 + 1e-12), depends),
        )
        g_eff = min(gamma, gamma_max)
        spread = math.sqrt(float(np.sum(kappa_vec**2 / sched.phi**2)))
        h_eps = min(
            g_eff * mu * float(sched.phi.min()) / 240.0,
            eps / (80.0 * math.sqrt(g_eff) * spread),
        )
        iters = 8.0 / (mu * g_eff * h_eps) * math.log(max(8 * w0 / eps, 1.0))
        per_iter = 1
    binding = min(checks, key=lambda c: c.slack)
    if binding.depends_on.startswith("schedule"):
        name = f"{binding.name} [limited by {binding.depends_on}]"
    else:
        name = binding.name
    iters = int(math.ceil(iters))
    return AdmissibilityReport(
        algorithm=algorithm,
        checks=checks,
        gamma_max=gamma_max,
        h_max=h_max,
        binding=name,
        iteration_estimate=iters,
        cost_estimate=iters * per_iter,
        accuracy=eps,
    )


def _enforce(target, config, algorithm) -> None:
    if not config.strict_admissibility:
        return
    report = validate_stepsize(target, config, algorithm)
    if not report.passed:
        bad = "; ".join(f"{c.name} violated ({c.value:.6g} > {c.bound:.6g})" for c in report.failures())
        raise AdmissibilityError(f"{report.algorithm.value}: {bad}")


# ---------------------------------------------------------------------------
# single steps


def _check_finite(state: PhaseState) -> None:
    if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.v))):
        raise FloatingPointError(f"non-finite chain state at iteration {state.iter}")


def _ulmc_advance(state, target, m: StepMoments, chol, rng, ledger) -> None:
    d = target.dim
    g = target.full_grad(state.x, ledger)
    z = rng.standard_normal(2 * d).reshape(d, 2)
    mean_x = state.x + m.coef_x_on_v * state.v - m.coef_x_on_grad * g
    mean_v = m.coef_v_decay * state.v - m.coef_v_on_grad * g
    state.x = mean_x + chol.l11 * z[:, 0]
    state.v = mean_v + chol.l21 * z[:, 0] + chol.l22 * z[:, 1]
    state.elapsed_time += m.h
    state.iter += 1


def _rc_advance(state, target, sched: CoordinateSchedule, table: np.ndarray, rng, ledger) -> int:
    r = sched.draw(rng)
    g = target.partial_grad(r, state.x, ledger)
    a, b, c, e, l11, l21, l22 = table[r]
    z1 = rng.standard_normal()
    z2 = rng.standard_normal()
    xr, vr = state.x[r], state.v[r]
    state.x[r] = (xr + a * vr - b * g) + l11 * z1
    state.v[r] = (c * vr - e * g) + l21 * z1 + l22 * z2
    state.elapsed_time += sched.h_coord[r]
    state.iter += 1
    return r


def ulmc_step(state: PhaseState, target: TargetPotential, config: SamplerConfig, rng) -> PhaseState:
    """One ULMC iteration; returns a new state."""
    _enforce(target, config, Algorithm.ULMC)
    if state.x.shape != (target.dim,) or state.v.shape != (target.dim,):
        raise ValueError("state dimension does not match the target")
    m = step_moments(config.h, config.gamma)
    out = state.copy()
    ledger = CostLedger(out.cost_units)
    _ulmc_advance(out, target, m, cholesky2x2(m), rng, ledger)
    out.cost_units = ledger.units
    return out


def rc_ulmc_step(state: PhaseState, target: TargetPotential, config: SamplerConfig, rng) -> PhaseState:
    """One RC-ULMC iteration; only the drawn coordinate changes."""
    sched = config.schedule_for(target.dim)
    _enforce(target, config, Algorithm.RC_ULMC)
    if state.x.shape != (target.dim,) or state.v.shape != (target.dim,):
        raise ValueError("state dimension does not match the target")
    out = state.copy()
    ledger = CostLedger(out.cost_units)
    _rc_advance(out, target, sched, _rc_table(sched, config.gamma), rng, ledger)
    out.cost_units = ledger.units
    return out


def _rc_table(sched: CoordinateSchedule, gamma: float) -> np.ndarray:
    # step moments depend only on h_i, so distinct stepsizes are computed once
    uniq, inverse = np.unique(sched.h_coord, return_inverse=True)
    return moment_arrays(uniq, gamma)[inverse]


# ---------------------------------------------------------------------------
# chains


@dataclass
class ChainResult:
    state: PhaseState
    cost_units: int
    records: dict[str, list[tuple[int, int, Any]]]
    coordinates: Optional[np.ndarray] = None


Callback = Callable[[PhaseState], Any]


def run_chain(
    target: TargetPotential,
    config: SamplerConfig,
    algorithm,
    n_iters: Optional[int] = None,
    callbacks: Optional[Mapping[str, Callback]] = None,
    stride: int = 1,
    state: Optional[PhaseState] = None,
    rng: Optional[np.random.Generator] = None,
    record_coordinates: bool = False,
) -> ChainResult:
    """Run ``n_iters`` iterations of ULMC or RC-ULMC.

    Parameters
    ----------
    callbacks : mapping of name -> callable(state)
        Called on the initial state, after every ``stride`` iterations and on
        the final state; each return value is stored in ``records[name]`` as
        ``(iteration, cost_units, value)``.
    state : PhaseState, optional
        Starting state; drawn from ``config.init`` when omitted.
    rng : numpy Generator, optional
        Defaults to ``numpy.random.default_rng(config.rng_seed)``.  The same
        generator and config reproduce the trajectory bit for bit.
    record_coordinates : bool
        Keep the RC-ULMC coordinate sequence in ``ChainResult.coordinates``.
    """
    algorithm = Algorithm.parse(algorithm)
    if n_iters is None:
        n_iters = config.max_iters
    if n_iters is None or n_iters < 0:
        raise ValueError("n_iters must be a nonnegative integer")
    stride = max(int(stride), 1)
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    if algorithm is Algorithm.RC_ULMC:
        sched = config.schedule_for(target.dim)
    _enforce(target, config, algorithm)
    if not config.strict_admissibility:
        report = validate_stepsize(target, config, algorithm)
        if not report.passed:
            warnings.warn(
                f"{algorithm.value}: stepsize outside the theoretical bounds ({report.binding})",
                RuntimeWarning,
                stacklevel=2,
            )

    state = PhaseState.initial(target, config, rng) if state is None else state.copy()
    if state.x.shape != (target.dim,):
        raise ValueError("state dimension does not match the target")
    ledger = CostLedger(state.cost_units)
    callbacks = dict(callbacks or {})
    records: dict[str, list] = {name: [] for name in callbacks}

    def fire():
        state.cost_units = ledger.units
        for name, fn in callbacks.items():
            records[name].append((state.iter, state.cost_units, fn(state)))

    coords = np.empty(n_iters, dtype=np.int64) if record_coordinates else None
    fire()
    if algorithm is Algorithm.ULMC:
        m = step_moments(config.h, config.gamma)
        chol = cholesky2x2(m)
        for k in range(n_iters):
            _ulmc_advance(state, target, m, chol, rng, ledger)
            if (k + 1) % stride == 0 and k + 1 < n_iters:
                fire()
    else:
        table = _rc_table(sched, config.gamma)
        for k in range(n_iters):
            r = _rc_advance(state, target, sched, table, rng, ledger)
            if coords is not None:
                coords[k] = r
            if (k + 1) % stride == 0 and k + 1 < n_iters:
                fire()
    _check_finite(state)
    if n_iters > 0:
        fire()
    state.cost_units = ledger.units
    return ChainResult(state, ledger.units, records, coords)


def with_seed(config: SamplerConfig, seed: int) -> SamplerConfig:
    return replace(config, rng_seed=int(seed))
