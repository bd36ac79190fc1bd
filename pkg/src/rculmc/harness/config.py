"""Experiment configuration files.

Configs are TOML.  Two experiment kinds exist:

``moment-error``
    Cost-matched comparison of several sampler curves on one target.  Each
    curve runs ``trials`` independent chains per master seed; at every cost in
    the grid the spectral-norm error of ``E[x x^T]`` on the first ``observe``
    coordinates is recorded.

``prop5-oracle``
    The exact three-moment recursion of RC-ULMC on the shifted standard
    Gaussian, with the analytic lower bounds alongside.

See ``presets/*.toml`` for complete examples.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from ..potentials import GraphTarget, ProductExperimentTarget, QuadraticTarget, TargetPotential
from ..samplers import Algorithm, CoordinateSchedule, InitialDistribution, SamplerConfig

__all__ = [
    "ConfigError",
    "CurveSpec",
    "ExperimentConfig",
    "OracleSpec",
    "available_presets",
    "build_target",
    "load_config",
    "load_preset",
]

KINDS = ("moment-error", "prop5-oracle")
TARGET_KINDS = ("product", "gaussian", "diagonal", "graph")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class CurveSpec:
    label: str
    algorithm: str
    h: float
    gamma: float
    phi: str = "uniform"

    def sampler_config(self, target: TargetPotential, init: InitialDistribution, strict: bool) -> SamplerConfig:
        schedule = None
        if Algorithm.parse(self.algorithm) is Algorithm.RC_ULMC:
            if self.phi == "optimal":
                schedule = CoordinateSchedule.optimal(target.coord_L, self.h)
            else:
                schedule = CoordinateSchedule.uniform(target.dim, self.h)
        return SamplerConfig(
            gamma=self.gamma, h=self.h, schedule=schedule, strict_admissibility=strict, init=init
        )


@dataclass(frozen=True)
class OracleSpec:
    d: int
    h: float
    steps: int
    stride: int


@dataclass
class ExperimentConfig:
    name: str
    kind: str
    master_seeds: tuple[int, ...] = (0,)
    trials: int = 0
    observe: int = 0
    target: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)
    costs: tuple[int, ...] = ()
    curves: tuple[CurveSpec, ...] = ()
    oracle: Optional[OracleSpec] = None
    closure: bool = True
    strict: bool = False
    output_dir: str = "runs"
    source: Optional[str] = None

    # -- serialisation -----------------------------------------------------

    def canonical(self) -> dict:
        """Normalised content that determines every output (excludes ``source``)."""
        data = asdict(self)
        data.pop("source")
        data["curves"] = [asdict(c) for c in self.curves]
        data["oracle"] = asdict(self.oracle) if self.oracle else None
        data["master_seeds"] = list(self.master_seeds)
        data["costs"] = list(self.costs)
        return data

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- construction ------------------------------------------------------

    def initial_distribution(self) -> InitialDistribution:
        spec = dict(self.init)
        shift = spec.get("x_mean", 0.0)
        coords = spec.get("x_mean_coords")
        if coords is not None:
            shift = np.full(int(coords), float(shift))
        return InitialDistribution(
            x_mean=shift,
            x_cov=spec.get("x_cov", "identity"),
            v_var=spec.get("v_var"),
        )

    def snapshot_iterations(self, algorithm, d: int) -> np.ndarray:
        """Iteration count at each grid cost: ``c`` for RC-ULMC, ``floor(c/d)`` for ULMC."""
        costs = np.asarray(self.costs, dtype=np.int64)
        if Algorithm.parse(algorithm) is Algorithm.ULMC:
            return costs // d
        return costs


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _cost_grid(grid: dict) -> tuple[int, ...]:
    if "costs" in grid:
        costs = [int(c) for c in grid["costs"]]
    else:
        try:
            start, stop = float(grid["start"]), float(grid["stop"])
        except KeyError as exc:
            raise ConfigError("grid needs 'costs' or 'start' and 'stop'") from exc
        per_decade = int(grid.get("per_decade", 4))
        multiple = int(grid.get("round_to", 1))
        _require(0 < start <= stop and per_decade > 0 and multiple > 0, "invalid log grid")
        n = int(round(math.log10(stop / start) * per_decade)) + 1
        raw = np.logspace(math.log10(start), math.log10(stop), n)
        costs = sorted({int(round(c / multiple)) * multiple for c in raw})
    _require(len(costs) > 0, "cost grid is empty")
    _require(all(c >= 0 for c in costs), "costs must be nonnegative")
    _require(all(b > a for a, b in zip(costs, costs[1:])), "cost grid must be strictly increasing")
    return tuple(costs)


def _curves(raw) -> tuple[CurveSpec, ...]:
    curves = []
    for i, c in enumerate(raw or ()):
        try:
            algorithm = Algorithm.parse(c["algorithm"]).value
            h, gamma = float(c["h"]), float(c["gamma"])
        except KeyError as exc:
            raise ConfigError(f"curve {i} is missing {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(f"curve {i}: {exc}") from None
        _require(h > 0 and gamma > 0, f"curve {i}: h and gamma must be positive")
        phi = str(c.get("phi", "uniform"))
        _require(phi in ("uniform", "optimal"), f"curve {i}: phi must be 'uniform' or 'optimal'")
        label = str(c.get("label", f"{algorithm}-h{h:g}"))
        curves.append(CurveSpec(label, algorithm, h, gamma, phi))
    labels = [c.label for c in curves]
    _require(len(set(labels)) == len(labels), "curve labels must be unique")
    return tuple(curves)


def parse_config(data: dict, source: Optional[str] = None) -> ExperimentConfig:
    """Validate a parsed TOML document."""
    kind = data.get("kind", "moment-error")
    _require(kind in KINDS, f"unknown experiment kind {kind!r}")
    name = str(data.get("name", Path(source).stem if source else "experiment"))
    seeds = data.get("master_seeds", [data.get("master_seed", 0)])
    _require(isinstance(seeds, list) and len(seeds) > 0, "master_seeds must be a nonempty list")
    seeds = tuple(int(s) for s in seeds)
    _require(len(set(seeds)) == len(seeds), "master seeds must be distinct")
    output = data.get("output", {})
    cfg = ExperimentConfig(
        name=name,
        kind=kind,
        master_seeds=seeds,
        output_dir=str(output.get("dir", f"runs/{name}")),
        closure=bool(output.get("closure", True)),
        strict=bool(data.get("strict", False)),
        source=source,
    )
    if kind == "prop5-oracle":
        o = data.get("oracle", {})
        try:
            spec = OracleSpec(int(o["d"]), float(o["h"]), int(o["steps"]), int(o.get("stride", 1)))
        except KeyError as exc:
            raise ConfigError(f"oracle section is missing {exc.args[0]!r}") from None
        _require(spec.d >= 1 and spec.steps >= 0 and spec.stride >= 1, "invalid oracle section")
        _require(0 < spec.h <= 1e-8 / spec.d * (1 + 1e-12), "oracle h must satisfy 0 < h <= 1e-8/d")
        cfg.oracle = spec
        return cfg

    trials = data.get("trials")
    _require(isinstance(trials, int) and trials >= 1, "trials must be a positive integer")
    cfg.trials = trials
    target = dict(data.get("target", {}))
    _require(target.get("kind") in TARGET_KINDS, f"target.kind must be one of {TARGET_KINDS}")
    cfg.target = target
    cfg.init = dict(data.get("init", {}))
    _require(cfg.init.get("x_cov", "identity") in ("identity", "target"), "init.x_cov must be identity or target")
    cfg.costs = _cost_grid(data.get("grid", {}))
    cfg.curves = _curves(data.get("curves"))
    _require(len(cfg.curves) > 0, "at least one curve is required")
    cfg.observe = int(data.get("observe", target.get("block", 0) or 0))
    _require(cfg.observe >= 1, "observe must be a positive number of coordinates")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, source=str(path))


def available_presets() -> list[str]:
    root = resources.files(__package__).joinpath("presets")
    return sorted(p.name[: -len(".toml")] for p in root.iterdir() if p.name.endswith(".toml"))


def load_preset(name: str) -> ExperimentConfig:
    if name not in available_presets():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(available_presets())}")
    ref = resources.files(__package__).joinpath("presets").joinpath(f"{name}.toml")
    return parse_config(tomllib.loads(ref.read_text()), source=f"preset:{name}")


def resolve(spec: str) -> ExperimentConfig:
    """Load ``spec`` as a file path if it exists, otherwise as a preset name."""
    if Path(spec).is_file():
        return load_config(spec)
    if spec.endswith(".toml"):
        raise ConfigError(f"config file not found: {spec}")
    return load_preset(spec)


def build_target(spec: dict) -> TargetPotential:
    kind = spec.get("kind")
    d = int(spec.get("d", 0))
    _require(d >= 1, "target.d must be positive")
    if kind == "product":
        block = int(spec.get("block", 10))
        _require(1 <= block <= d, "target.block must lie in [1, d]")
        return ProductExperimentTarget(d=d, seed=int(spec.get("seed", 0)), block=block)
    if kind == "gaussian":
        return QuadraticTarget.standard_gaussian(d)
    if kind == "diagonal":
        diag = spec.get("diag")
        _require(diag is not None and len(diag) == d, "diagonal target needs d entries in target.diag")
        return QuadraticTarget.diagonal(diag)
    if kind == "graph":
        edges = spec.get("edges")
        if "edge_file" in spec:
            return GraphTarget.from_edge_file(spec["edge_file"], d, float(spec.get("beta", 1.0)), float(spec.get("alpha", 1.0)))
        _require(edges is not None, "graph target needs target.edges or target.edge_file")
        return GraphTarget(d, np.asarray(edges, dtype=np.int64).reshape(-1, 2), float(spec.get("beta", 1.0)), float(spec.get("alpha", 1.0)))
    raise ConfigError(f"unknown target kind {kind!r}")
