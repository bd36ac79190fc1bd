"""Execute experiment configs and write CSV curves plus a JSON manifest."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numba
import numpy as np
import scipy

from ..engine import resolve_workers, simulate_snapshots
from ..metrics import moment_error, reference_second_moment
from ..oracles import (
    prop5_initial_triple,
    prop5_lower_bound,
    prop5_moment_lower_bound,
    rc_mean_map,
    rc_triple_trajectory,
    second_moment_w2_lower_bound,
)
from ..samplers import Algorithm, SamplerConfig, validate_stepsize
from .config import ExperimentConfig, build_target

__all__ = [
    "CSV_COLUMNS",
    "RunRecord",
    "compare_curves",
    "read_curve",
    "run_experiment",
    "run_moment_error",
    "run_prop5_oracle",
    "validation_reports",
]

CSV_COLUMNS = ("algorithm", "cost_units", "iterations", "error", "metric_name", "seed")
MOMENT_METRIC = "psi_spectral_error"


@dataclass(frozen=True)
class RunRecord:
    algorithm: str
    cost_units: int
    iterations: int
    error: float
    metric_name: str
    seed: int

    def row(self) -> list:
        return [self.algorithm, self.cost_units, self.iterations, repr(float(self.error)), self.metric_name, self.seed]


def _write_csv(path: Path, records: Sequence[RunRecord]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in sorted(records, key=lambda r: (r.cost_units, r.iterations)):
        writer.writerow(rec.row())
    path.write_text(buf.getvalue())


def read_curve(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [
            RunRecord(
                r["algorithm"], int(r["cost_units"]), int(r["iterations"]), float(r["error"]), r["metric_name"], int(r["seed"])
            )
            for r in reader
        ]


def _versions() -> dict:
    from importlib.metadata import PackageNotFoundError, version

    try:
        pkg = version("artifact")
    except PackageNotFoundError:  # pragma: no cover
        pkg = "unknown"
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "package": pkg,
    }


def validation_reports(cfg: ExperimentConfig, target=None) -> dict:
    """Admissibility reports for every curve's ``(gamma, h)`` under both algorithms."""
    target = build_target(cfg.target) if target is None else target
    init = cfg.initial_distribution()
    out = {}
    for curve in cfg.curves:
        per_alg = {}
        for alg in Algorithm:
            spec = replace(curve, algorithm=alg.value)
            sc = spec.sampler_config(target, init, strict=False)
            per_alg[alg.value] = validate_stepsize(target, sc, alg).to_dict()
        out[curve.label] = per_alg
    return out


def run_moment_error(cfg: ExperimentConfig, out_dir: Path, workers: Optional[int] = None, log=print) -> dict:
    target = build_target(cfg.target)
    init = cfg.initial_distribution()
    k = cfg.observe
    if k > target.dim:
        raise ValueError(f"observe={k} exceeds the target dimension {target.dim}")
    if cfg.target.get("kind") == "product":
        reference = reference_second_moment(target)[:k, :k]
    else:
        reference = target.covariance()[:k, :k]
    files = []
    timings = {}
    for seed in cfg.master_seeds:
        for stream, curve in enumerate(cfg.curves):
            sc: SamplerConfig = curve.sampler_config(target, init, strict=cfg.strict)
            iters = cfg.snapshot_iterations(curve.algorithm, target.dim)
            uniq, pos = np.unique(iters, return_inverse=True)
            t0 = time.perf_counter()
            batch = simulate_snapshots(
                target, sc, curve.algorithm, uniq, cfg.trials, master_seed=seed, stream=stream,
                observe=range(k), closure=cfg.closure, workers=workers,
            )
            timings[f"{curve.label}/seed{seed}"] = round(time.perf_counter() - t0, 3)
            records = []
            for s in pos:
                rep = moment_error(batch.samples[s], reference, k)
                records.append(
                    RunRecord(curve.label, int(batch.cost_units[s]), int(batch.iterations[s]), rep.error, MOMENT_METRIC, seed)
                )
            path = out_dir / f"{curve.label}_seed{seed}.csv"
            _write_csv(path, records)
            files.append(path.name)
            log(f"{curve.label} seed={seed}: final error {records[-1].error:.4e} at cost {records[-1].cost_units}")
    return {"files": files, "curve_seconds": timings, "reference_dim": k}


def prop5_rows(d: int, h: float, steps: int, stride: int) -> list[dict]:
    """Recursion iterates and bounds every ``stride`` steps (and at the last step)."""
    traj = rc_triple_trajectory(prop5_initial_triple(d), d, h, steps)
    rows = []
    mean_map = rc_mean_map(d, h).tolist()
    mx = mw = 1.0 / 400.0
    for m in range(steps + 1):
        if m % stride == 0 or m == steps:
            ex2, exw, ew2 = traj[m]
            raw_gap = math.sqrt(ew2) - math.sqrt(2.0 * d)
            rows.append(
                {
                    "m": m,
                    "ex2": ex2,
                    "exw": exw,
                    "ew2": ew2,
                    "ew2_lower_envelope": prop5_moment_lower_bound(d, h, m),
                    "w2_second_moment_bound": second_moment_w2_lower_bound(ew2, d),
                    "w2_second_moment_gap": raw_gap,
                    "w2_mean_bound": math.sqrt(d * (mx * mx + mw * mw)),
                    "stated_lower_bound": prop5_lower_bound(d, h, m),
                }
            )
        mx, mw = mean_map[0][0] * mx + mean_map[0][1] * mw, mean_map[1][0] * mx + mean_map[1][1] * mw
    return rows


PROP5_COLUMNS = (
    "m",
    "ex2",
    "exw",
    "ew2",
    "ew2_lower_envelope",
    "w2_second_moment_bound",
    "w2_second_moment_gap",
    "w2_mean_bound",
    "stated_lower_bound",
    "recursion_above_envelope",
    "mean_bound_above_stated",
)


def run_prop5_oracle(cfg: ExperimentConfig, out_dir: Path, log=print) -> dict:
    o = cfg.oracle
    rows = prop5_rows(o.d, o.h, o.steps, o.stride)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PROP5_COLUMNS)
    ok_env = ok_mean = True
    for r in rows:
        above = bool(r["ew2"] >= r["ew2_lower_envelope"])
        mean_ok = bool(r["w2_mean_bound"] >= r["stated_lower_bound"])
        ok_env &= above
        ok_mean &= mean_ok
        writer.writerow([r["m"]] + [repr(float(r[c])) for c in PROP5_COLUMNS[1:9]] + [int(above), int(mean_ok)])
    path = out_dir / "prop5-oracle.csv"
    path.write_text(buf.getvalue())
    log(f"prop5-oracle: {len(rows)} rows; recursion above envelope: {ok_env}; mean bound above stated bound: {ok_mean}")
    return {"files": [path.name], "recursion_above_envelope": ok_env, "mean_bound_above_stated": ok_mean}


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: Optional[int] = None, log=print) -> dict:
    """Run ``cfg`` and write its artifacts; returns the manifest."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    manifest = {
        "name": cfg.name,
        "kind": cfg.kind,
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash,
        "source": cfg.source,
        "seeds": {
            "master_seeds": list(cfg.master_seeds),
            "derivation": "SeedSequence(master_seed, spawn_key=(curve_index, trial_index))",
        },
        "versions": _versions(),
    }
    if cfg.kind == "prop5-oracle":
        manifest["results"] = run_prop5_oracle(cfg, out, log=log)
    else:
        manifest["workers"] = resolve_workers(workers)
        manifest["admissibility"] = validation_reports(cfg)
        manifest["results"] = run_moment_error(cfg, out, workers=workers, log=log)
    manifest["wall_time_seconds"] = round(time.perf_counter() - t0, 3)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return manifest


def _jsonable(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def compare_curves(paths: Sequence) -> dict:
    """Error ratios of every curve against the first, per cost level.

    Returns the per-cost ratios ``reference / other`` and the crossover cost:
    the first grid cost at which the reference error is below the other's.
    """
    if len(paths) < 2:
        raise ValueError("compare needs at least two CSV files")
    curves = [read_curve(p) for p in paths]
    ref = curves[0]
    ref_costs = [r.cost_units for r in ref]
    out = {"reference": str(paths[0]), "reference_label": ref[0].algorithm if ref else "", "comparisons": []}
    for path, other in zip(paths[1:], curves[1:]):
        costs = [r.cost_units for r in other]
        if costs != ref_costs:
            raise ValueError(f"{path}: cost grid differs from {paths[0]}")
        ratios = [a.error / b.error if b.error > 0 else math.inf for a, b in zip(ref, other)]
        crossover = next((a.cost_units for a, b in zip(ref, other) if a.error < b.error), None)
        out["comparisons"].append(
            {
                "file": str(path),
                "label": other[0].algorithm if other else "",
                "costs": ref_costs,
                "ratios": ratios,
                "final_ratio": ratios[-1] if ratios else math.nan,
                "crossover_cost": crossover,
            }
        )
    return out
