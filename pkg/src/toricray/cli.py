"""Command-line interface for toricray experiments."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from toricray.config import ExperimentConfig
from toricray.errors import ToricRayError
from toricray.io import RunManifest, dumps
from toricray.presets import list_presets
from toricray.runner import run

# CSV columns written by each command, shown in its --help epilog.
COLUMNS = {
    "lifespan": "lifespan.json: T_cvx, argmin_node, argmin_location, smooth_for_all_time",
    "ray": (
        "ray.csv: s, x_1[, x_2], psi, phi\n"
        "admissibility.csv: s, admissible, strictly_convex, covers_polytope, uncovered_radius,"
        " largest_flat, min_second_difference\n"
        "slice_initial.csv: x_1[, x_2], value"
    ),
    "flow": (
        "leaves.csv: seed_id, s, x_1[, x_2]\n"
        "characteristics.csv: seed_id, s, x_1[, x_2], z, p_sigma, p_xi_1[, p_xi_2]\n"
        "flow_map.csv: s, x_1_in[, x_2_in], x_1_out[, x_2_out], jac_det"
    ),
    "verify": "masses.csv: level, h, total_mass, max_cell",
    "obstruction": (
        "leaves.csv: leaf_id, z_1[, z_2], gap, gap_variation, trivial, identity_defect,"
        " obstruction_vanishes\n"
        "pw_sweep.csv: T, kernel_pass, kernel_rate, gaussian_pass, gaussian_rate\n"
        "spectra/*.csv: xi, re, im, log_abs"
    ),
}

HELP = {
    "lifespan": "Convex lifespan of the Cauchy data",
    "ray": "Legendre-transform ray with per-slice admissibility",
    "flow": "Leaves, characteristics, caustics and the conservation law",
    "verify": "Weak-solution, gradient-graph and Hamilton-Jacobi checks of the ray",
    "obstruction": "Leafwise strip solutions and Paley-Wiener tests",
}


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _print_summary(manifest: RunManifest, out_dir: Path) -> None:
    status = "passed" if manifest.passed else "FAILED"
    print(f"{manifest.command}: {status} ({manifest.wall_clock:.2f}s)")
    for name, ok in manifest.checks.items():
        print(f"  [{'ok' if ok else 'FAIL'}] {name}")
    print(f"  {len(manifest.artifacts)} artifact(s) in {out_dir}")


def cmd_run(args: argparse.Namespace) -> int:
    """Run one experiment command from a config file."""
    config = ExperimentConfig.from_file(args.config)
    config = config.with_overrides(
        command=args.command, seed_count=args.seed_count, tol_scale=args.tol_scale
    )
    manifest = run(config, out=args.out)
    if args.json:
        print(dumps(manifest.to_dict()), end="")
    else:
        _print_summary(manifest, config.output_path(args.out) / manifest.command)
    return manifest.exit_code


def cmd_presets(args: argparse.Namespace) -> int:
    """List the preset registry."""
    presets = list_presets()
    if args.json:
        print(json.dumps([p.to_dict() for p in presets], indent=2))
        return 0
    print(f"{len(presets)} preset(s):\n")
    for p in presets:
        T = "infinite" if math.isinf(p.lifespan) else f"{p.lifespan:g}"
        print(f"  {p.name} ({p.dim}-D, T = {T})")
        print(f"    {p.description}")
    return 0


def _add_run_parser(subparsers, name: str) -> None:
    sub = subparsers.add_parser(
        name,
        help=HELP[name],
        description=HELP[name] + ".",
        epilog="outputs:\n" + COLUMNS[name],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub.add_argument(
        "-c",
        "--config",
        required=True,
        metavar="PATH",
        help="Experiment config (JSON)",
    )
    sub.add_argument(
        "-o",
        "--out",
        metavar="DIR",
        help="Output directory (overrides output_dir and $TORICRAY_OUT_DIR)",
    )
    sub.add_argument(
        "--seed-count",
        type=int,
        metavar="N",
        help="Number of seeds per axis for flow",
    )
    sub.add_argument(
        "--tol-scale",
        type=float,
        metavar="F",
        help="Multiply the acceptance tolerances by F",
    )
    sub.add_argument(
        "--json",
        action="store_true",
        help="Print the manifest as JSON",
    )
    sub.set_defaults(func=cmd_run)


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the toricray CLI."""
    parser = argparse.ArgumentParser(
        prog="toricray",
        description="Numerical lab for the toric Cauchy problem of the Monge-Ampere equation.",
    )
    from toricray import __version__

    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Log progress (-v) or iteration detail (-vv) to stderr",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    for name in HELP:
        _add_run_parser(subparsers, name)

    presets_parser = subparsers.add_parser(
        "presets",
        help="List built-in Cauchy data",
        description="List the preset registry with closed-form lifespans.",
    )
    presets_parser.add_argument(
        "--json",
        action="store_true",
        help="Output as JSON",
    )
    presets_parser.set_defaults(func=cmd_presets)

    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    if args.command is None:
        parser.print_help()
        return 2

    try:
        return args.func(args)
    except ToricRayError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
