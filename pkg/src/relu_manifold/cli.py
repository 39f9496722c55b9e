"""Command line entry point.

Exit codes: 0 success, 1 runtime error, 2 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config, validate
from .curves import CurveError, embedded_circle, read_polyline
from .geometry import monotonicity_violations
from .network import ModelFormatError, load_model
from .regions import boundary_distance_ambient, count_regions, default_grid_n, distance_statistics

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2

COMMAND_EXPERIMENT = {
    "train": "toy_regression",
    "dim-sweep": "dim_sweep",
    "arch-sweep": "arch_sweep",
    "theory-sweep": "theory_sweep",
    "manifold-compare": "manifold_compare",
}


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="INI experiment configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--force", action="store_true", help="rerun seeds that already finished")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; may be repeated")
    return p


def _curve_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", type=Path, required=True, help="serialized network")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--manifold", choices=["circle", "tractrix", "embedded_circle"], default="circle")
    g.add_argument("--polyline", type=Path, help="polyline curve file")
    p.add_argument("--curve-seed", type=int, default=0, help="basis seed for embedded_circle")
    p.add_argument("--grid-n", type=int, help="grid points (default: 4096 per unit parameter length)")


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="relu-manifold", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="toy regression on the circle / tractrix with region tracking")
    sub.add_parser("dim-sweep", parents=[common], help="embedded circles of increasing ambient dimension")
    sub.add_parser("arch-sweep", parents=[common], help="region count per neuron across architectures")
    sub.add_parser("theory-sweep", parents=[common], help="suprema of the simplified polynomial")
    sub.add_parser("manifold-compare", parents=[common], help="on- vs off-manifold region density")
    p = sub.add_parser("count", parents=[common], help="count linear regions of a saved model along a curve")
    _curve_flags(p)
    p = sub.add_parser("distance", parents=[common], help="distances to region boundaries")
    _curve_flags(p)
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--point", help="comma-separated ambient point for the ambient distance")
    p = sub.add_parser("validate", parents=[common], help="validate a config and/or a theory sweep CSV")
    p.add_argument("--sweep-csv", type=Path, help="theory sweep CSV to check for monotonicity")
    return parser


def resolve_config(args, experiment: str | None) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig(experiment=experiment or "toy_regression")
    if experiment and cfg.experiment != experiment:
        if args.config:
            raise ConfigError(f"config describes {cfg.experiment!r} but the command runs {experiment!r}")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"experiment.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"experiment.output_dir={args.out}")
    cfg = apply_overrides(cfg, overrides)
    validate(cfg)
    return cfg


def _model_and_curve(args):
    net = load_model(args.model)
    if args.polyline:
        curve = read_polyline(args.polyline)
    elif args.manifold == "embedded_circle":
        curve = embedded_circle(net.n_in, args.curve_seed)
    else:
        curve = harness.build_curve(args.manifold, 0)
    if curve.ambient_dim != net.n_in:
        raise ConfigError(f"curve lives in R^{curve.ambient_dim} but the model expects R^{net.n_in}")
    return net, curve


def cmd_count(args) -> int:
    net, curve = _model_and_curve(args)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    rep = count_regions(net, curve, args.grid_n or default_grid_n(curve))
    (out / "regions.json").write_text(rep.to_json(), encoding="utf-8")
    (out / "regions.csv").write_text(rep.to_csv(), encoding="utf-8")
    print(json.dumps(rep.summary(), indent=1))
    return EXIT_OK


def cmd_distance(args) -> int:
    net, curve = _model_and_curve(args)
    rep = count_regions(net, curve, args.grid_n or default_grid_n(curve))
    st = distance_statistics(net, curve, rep, args.samples, args.seed or 0)
    doc = {"mean": st.mean, "std": st.std, "normalized_mean": st.normalized_mean, "max": st.max,
           "no_boundaries": st.no_boundaries, "region_count": rep.region_count}
    if args.point:
        x = np.array([float(v) for v in args.point.split(",")])
        doc["ambient_distance"] = boundary_distance_ambient(net, x)
    print(json.dumps(doc, indent=1))
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        print(f"config ok: {cfg.experiment} (hash {cfg.config_hash()})")
    if args.sweep_csv:
        with open(args.sweep_csv, newline="", encoding="utf-8") as fh:
            rows = [(int(r["n_in"]), int(r["m"]), float(r["zeta_star"]), float(r["p_star"]))
                    for r in csv.DictReader(fh)]
        bad = monotonicity_violations(rows)
        if bad:
            for b in bad:
                print(f"monotonicity violation: {b}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"sweep ok: {len(rows)} rows, monotone in both axes")
    if not args.config and not args.sweep_csv:
        raise ConfigError("validate needs --config and/or --sweep-csv")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = resolve_config(args, COMMAND_EXPERIMENT[args.command])
    result = harness.run_experiment(cfg, force=args.force, n_jobs=args.jobs)
    if isinstance(result, harness.TheoryResult):
        print(f"wrote {len(result.rows)} rows to {result.path}")
        for v in result.violations:
            print(f"monotonicity violation: {v}", file=sys.stderr)
        return EXIT_VALIDATION if result.violations else EXIT_OK
    for f in result.failures:
        print(f"seed {f['seed']} ({f['variant']}) failed: {f['error']}", file=sys.stderr)
    print(f"{len(result.records) - len(result.failures)} runs ok, {len(result.failures)} failed; "
          f"results in {result.out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "count":
            return cmd_count(args)
        if args.command == "distance":
            return cmd_distance(args)
        if args.command == "validate":
            return cmd_validate(args)
        return cmd_experiment(args)
    except (ConfigError, ModelFormatError, CurveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
