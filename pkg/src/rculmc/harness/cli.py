"""Command-line interface: ``rculmc {run,compare,validate,oracle}``.

Exit status is 0 on success, 1 for usage or configuration errors (including
a strict-mode admissibility refusal) and 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Optional, Sequence

import numpy as np

from ..engine import WORKERS_ENV
from ..kernel import cholesky2x2, step_moments
from ..oracles import (
    GaussianLaw,
    gaussian_w2,
    stationary_law,
    theorem1_rhs,
    ulmc_laws,
)
from ..samplers import AdmissibilityError
from .config import ConfigError, available_presets, build_target, resolve
from .runner import compare_curves, prop5_rows, run_experiment, validation_reports

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


def _cmd_run(args) -> int:
    cfg = resolve(args.config)
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be positive")
        cfg.trials = args.trials
    if args.seeds:
        cfg.master_seeds = tuple(args.seeds)
    if args.strict:
        cfg.strict = True
    log = (lambda *a, **k: None) if args.quiet else print
    manifest = run_experiment(cfg, out_dir=args.out, workers=args.workers, log=log)
    log(f"wrote {len(manifest['results']['files'])} file(s) and manifest.json to {args.out or cfg.output_dir}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    summary = compare_curves(args.csv)
    if args.json:
        print(json.dumps(summary, indent=2))
        return EXIT_OK
    print(f"reference: {summary['reference_label']} ({summary['reference']})")
    for comp in summary["comparisons"]:
        cross = comp["crossover_cost"]
        print(f"\nvs {comp['label']}: final ratio {comp['final_ratio']:.4g}, crossover cost {cross if cross is not None else 'none'}")
        print(f"  {'cost':>10}  {'ratio':>10}")
        for c, r in zip(comp["costs"], comp["ratios"]):
            print(f"  {c:>10d}  {r:>10.4g}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = resolve(args.config)
    if cfg.kind != "moment-error":
        print(f"{cfg.name}: nothing to validate for kind {cfg.kind!r}")
        return EXIT_OK
    target = build_target(cfg.target)
    reports = validation_reports(cfg, target)
    if args.json:
        print(json.dumps(reports, indent=2))
        return EXIT_OK
    print(f"target: d={target.dim} mu={target.mu:.6g} L={target.big_L:.6g} max L_i={target.coord_L.max():.6g}")
    for label, per_alg in reports.items():
        curve = next(c for c in cfg.curves if c.label == label)
        print(f"\n{label}: gamma={curve.gamma:g} h={curve.h:g}")
        for alg, rep in per_alg.items():
            status = "PASS" if rep["passed"] else ("FAIL (strict refuses)" if cfg.strict else "FAIL (permissive: warning only)")
            own = " <- configured" if alg == curve.algorithm else ""
            print(f"  {alg:8s} {status}{own}")
            for c in rep["checks"]:
                mark = "ok " if c["passed"] else "BAD"
                print(f"    [{mark}] {c['name']}: value {c['value']:.6g}, bound {c['bound']:.6g}")
            print(f"    binding: {rep['binding']}; iterations for W2 <= {rep['accuracy']:g}: ~{rep['iteration_estimate']:.3g} (cost ~{rep['cost_estimate']:.3g})")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    if args.which == "step-moments":
        m = step_moments(args.h, args.gamma)
        c = cholesky2x2(m)
        out = {k: getattr(m, k) for k in m.__dataclass_fields__}
        out.update(l11=c.l11, l21=c.l21, l22=c.l22)
        print(json.dumps(out, indent=2))
    elif args.which == "prop5":
        rows = prop5_rows(args.d, args.h, args.steps, args.stride)
        cols = list(rows[0])
        print(",".join(cols))
        for r in rows:
            print(",".join(str(r[c]) if c == "m" else repr(float(r[c])) for c in cols))
    elif args.which == "ulmc-w2":
        # exact W2 of ULMC on the standard Gaussian against its bound
        d, gamma = args.d, args.gamma
        A = np.eye(d)
        h = args.h if args.h is not None else math.sqrt(gamma) / 8.0
        target = stationary_law(A, gamma)
        law0 = GaussianLaw.product(np.full(d, args.shift), 1.0, gamma)
        w0 = law0.w2_to(target)
        print("m,w2,bound")
        for m, law in enumerate(ulmc_laws(law0, A, h, gamma, args.steps)):
            if m % args.stride == 0 or m == args.steps:
                w = gaussian_w2(law.mean, law.cov, target.mean, target.cov)
                print(f"{m},{w!r},{theorem1_rhs(w0, m, h, gamma, 1.0, 1.0, d)!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rculmc",
        description="Underdamped Langevin samplers: cost-matched experiments and exact oracles.",
        epilog=f"Worker threads default to ${WORKERS_ENV} or the CPU count. Presets: {', '.join(available_presets())}.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config or preset")
    r.add_argument("config", help="path to a TOML config, or a preset name")
    r.add_argument("--out", help="output directory (default: from the config)")
    r.add_argument("--workers", type=int, help="worker threads")
    r.add_argument("--trials", type=int, help="override the number of chains per curve")
    r.add_argument("--seeds", type=int, nargs="+", help="override the master seeds")
    r.add_argument("--strict", action="store_true", help="refuse stepsizes outside the theoretical bounds")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="compare curve CSVs against the first one")
    c.add_argument("csv", nargs="+", help="two or more curve CSV files; the first is the reference")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=_cmd_compare)

    v = sub.add_parser("validate", help="report stepsize admissibility for a config")
    v.add_argument("config")
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=_cmd_validate)

    o = sub.add_parser("oracle", help="print exact reference computations")
    osub = o.add_subparsers(dest="which", required=True)
    sm = osub.add_parser("step-moments", help="moments of one frozen-gradient step")
    sm.add_argument("--h", type=float, required=True)
    sm.add_argument("--gamma", type=float, default=1.0)
    p5 = osub.add_parser("prop5", help="RC-ULMC moment recursion on the shifted standard Gaussian")
    p5.add_argument("--d", type=int, default=10)
    p5.add_argument("--h", type=float, default=1e-9)
    p5.add_argument("--steps", type=int, default=1000)
    p5.add_argument("--stride", type=int, default=100)
    uw = osub.add_parser("ulmc-w2", help="exact ULMC W2 on the standard Gaussian against its bound")
    uw.add_argument("--d", type=int, default=4)
    uw.add_argument("--gamma", type=float, default=2.0)
    uw.add_argument("--h", type=float, default=None, help="default: the largest admissible h")
    uw.add_argument("--shift", type=float, default=1.0)
    uw.add_argument("--steps", type=int, default=1000)
    uw.add_argument("--stride", type=int, default=100)
    o.set_defaults(func=_cmd_oracle)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, AdmissibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
