"""Compiled many-chain driver for quadratic targets.

Each chain owns a ``numpy.random.Generator`` derived from
``SeedSequence(master_seed, spawn_key=(stream, trial))`` and is advanced by
a numba kernel that consumes the generator in the same order as
:func:`rculmc.samplers.run_chain`.  Chains are distributed over a thread
pool (the kernels release the GIL); because every chain's stream depends
only on its trial index, the output does not depend on the worker count.

Observed-coordinate closure
---------------------------
When only a few coordinates are observed, the kernels can restrict the
simulation to the connected components of the Hessian's sparsity graph that
contain them.  Coordinates outside those components never influence the
observed ones, so the observed marginals are unchanged:

* RC-ULMC still draws a coordinate and two normals every iteration and
  charges one cost unit; a draw outside the closure leaves the state alone.
  The observed trajectory is therefore bitwise identical to the full run.
* ULMC skips the noise of inactive coordinates, so the observed trajectory
  has the same law as the full run but a different realisation.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np

from .potentials import QuadraticPotential
from .samplers import (
    Algorithm,
    AdmissibilityError,
    PhaseState,
    SamplerConfig,
    _rc_table,
    validate_stepsize,
)
from .kernel import moment_arrays

__all__ = [
    "WORKERS_ENV",
    "SnapshotBatch",
    "chain_generator",
    "resolve_workers",
    "simulate_snapshots",
]

WORKERS_ENV = "RCULMC_WORKERS"


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        else:
            workers = os.cpu_count() or 1
    return max(int(workers), 1)


def chain_generator(master_seed: int, stream: int, trial: int) -> np.random.Generator:
    """Generator for chain ``trial`` of curve ``stream`` under ``master_seed``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(stream), int(trial)))
    return np.random.default_rng(seq)


# ---------------------------------------------------------------------------
# kernels


@numba.njit(nogil=True, cache=True)
def _rc_kernel(indptr, indices, data, active, prob, alias, table, x, v, snap_iters, observe, out, rng):
    d = x.shape[0]
    k = observe.shape[0]
    it = 0
    for s in range(snap_iters.shape[0]):
        stop = snap_iters[s]
        while it < stop:
            t = rng.random() * d
            j = int(t)
            if j > d - 1:
                j = d - 1
            r = j if t - j < prob[j] else alias[j]
            z1 = rng.standard_normal()
            z2 = rng.standard_normal()
            if active[r]:
                g = 0.0
                for p in range(indptr[r], indptr[r + 1]):
                    g += data[p] * x[indices[p]]
                xr = x[r]
                vr = v[r]
                x[r] = (xr + table[r, 0] * vr - table[r, 1] * g) + table[r, 4] * z1
                v[r] = (table[r, 2] * vr - table[r, 3] * g) + table[r, 5] * z1 + table[r, 6] * z2
            it += 1
        for q in range(k):
            out[s, q] = x[observe[q]]
        if out.shape[1] > k:
            for q in range(k):
                out[s, k + q] = v[observe[q]]
    ok = True
    for i in range(d):
        if active[i] and not (np.isfinite(x[i]) and np.isfinite(v[i])):
            ok = False
    return ok


@numba.njit(nogil=True, cache=True)
def _ulmc_kernel(indptr, indices, data, rows, coef, x, v, snap_iters, observe, out, rng):
    a = coef[0]
    b = coef[1]
    c = coef[2]
    e = coef[3]
    l11 = coef[4]
    l21 = coef[5]
    l22 = coef[6]
    n = rows.shape[0]
    k = observe.shape[0]
    g = np.empty(n)
    it = 0
    for s in range(snap_iters.shape[0]):
        stop = snap_iters[s]
        while it < stop:
            for q in range(n):
                r = rows[q]
                acc = 0.0
                for p in range(indptr[r], indptr[r + 1]):
                    acc += data[p] * x[indices[p]]
                g[q] = acc
            for q in range(n):
                r = rows[q]
                z1 = rng.standard_normal()
                z2 = rng.standard_normal()
                xr = x[r]
                vr = v[r]
                x[r] = (xr + a * vr - b * g[q]) + l11 * z1
                v[r] = (c * vr - e * g[q]) + l21 * z1 + l22 * z2
            it += 1
        for q in range(k):
            out[s, q] = x[observe[q]]
        if out.shape[1] > k:
            for q in range(k):
                out[s, k + q] = v[observe[q]]
    ok = True
    for q in range(n):
        r = rows[q]
        if not (np.isfinite(x[r]) and np.isfinite(v[r])):
            ok = False
    return ok


# ---------------------------------------------------------------------------
# driver


@dataclass
class SnapshotBatch:
    """Observed coordinates of many chains at several iteration counts.

    ``samples[s, n, :]`` is chain ``n`` at ``iterations[s]``; ``velocities`` has
    the same layout when requested.
    """

    algorithm: Algorithm
    iterations: np.ndarray
    cost_units: np.ndarray
    observe: np.ndarray
    samples: np.ndarray
    master_seed: int
    stream: int
    velocities: Optional[np.ndarray] = None

    @property
    def n_chains(self) -> int:
        return self.samples.shape[1]


def _as_iterations(snapshot_iters) -> np.ndarray:
    it = np.asarray(snapshot_iters, dtype=np.int64).reshape(-1)
    if it.size == 0:
        raise ValueError("at least one snapshot is required")
    if np.any(it < 0) or np.any(np.diff(it) <= 0):
        raise ValueError("snapshot iterations must be nonnegative and strictly increasing")
    return it


def simulate_snapshots(
    target: QuadraticPotential,
    config: SamplerConfig,
    algorithm,
    snapshot_iters: Sequence[int],
    n_chains: int,
    master_seed: int,
    stream: int = 0,
    observe: Optional[Sequence[int]] = None,
    closure: bool = True,
    workers: Optional[int] = None,
    chain_offset: int = 0,
    record_velocity: bool = False,
) -> SnapshotBatch:
    """Run ``n_chains`` independent chains and record observed coordinates.

    Parameters
    ----------
    snapshot_iters : increasing iteration counts at which to record.
    observe : coordinates to record (default: all).
    closure : simulate only the coupled components of ``observe``.
    workers : thread count; defaults to ``$RCULMC_WORKERS`` or the CPU count.
    chain_offset : index of the first chain, for splitting a run into parts.
    record_velocity : also record the velocities of the observed coordinates.
    """
    if not isinstance(target, QuadraticPotential):
        raise TypeError("the compiled engine needs a quadratic target")
    algorithm = Algorithm.parse(algorithm)
    if n_chains < 1:
        raise ValueError("n_chains must be at least 1")
    if config.strict_admissibility:
        report = validate_stepsize(target, config, algorithm)
        if not report.passed:
            bad = "; ".join(f"{c.name} violated" for c in report.failures())
            raise AdmissibilityError(f"{algorithm.value}: {bad}")
    d = target.dim
    iters = _as_iterations(snapshot_iters)
    obs = np.arange(d, dtype=np.int64) if observe is None else np.asarray(observe, dtype=np.int64)
    if obs.size == 0 or obs.min() < 0 or obs.max() >= d:
        raise ValueError("observed coordinates out of range")
    indptr, indices, data = target.hessian_csr()
    active = np.ones(d, dtype=bool)
    if closure:
        active[:] = False
        active[target.coupled_closure(obs)] = True
    rows = np.flatnonzero(active).astype(np.int64)

    if algorithm is Algorithm.RC_ULMC:
        sched = config.schedule_for(d)
        table = _rc_table(sched, config.gamma)
        prob = np.ascontiguousarray(sched.alias_prob)
        alias = np.ascontiguousarray(sched.alias_index)
        cost = iters.copy()
    else:
        coef = moment_arrays([config.h], config.gamma)[0]
        cost = iters * d

    width = 2 * obs.size if record_velocity else obs.size
    out = np.empty((iters.size, n_chains, width))

    def run_one(n: int) -> bool:
        rng = chain_generator(master_seed, stream, chain_offset + n)
        state = PhaseState.initial(target, config, rng)
        x, v = state.x, state.v
        if algorithm is Algorithm.RC_ULMC:
            return _rc_kernel(indptr, indices, data, active, prob, alias, table, x, v, iters, obs, out[:, n, :], rng)
        return _ulmc_kernel(indptr, indices, data, rows, coef, x, v, iters, obs, out[:, n, :], rng)

    n_workers = min(resolve_workers(workers), n_chains)
    if n_workers == 1:
        ok = [run_one(n) for n in range(n_chains)]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            ok = list(pool.map(run_one, range(n_chains)))
    if not all(ok) or not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{algorithm.value}: chain state became non-finite")
    k = obs.size
    velocities = out[:, :, k:] if record_velocity else None
    return SnapshotBatch(algorithm, iters, cost, obs, out[:, :, :k], int(master_seed), int(stream), velocities)
