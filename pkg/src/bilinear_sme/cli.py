"""Command-line entry point: ``bilinear-sme <subcommand> [options]``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .complexity import ComplexityInputs, ConvergenceError, bound_report
from .experiment import (ConfigError, ExperimentConfig, build_system, constants_report, diam_report,
                         metadata, run_sweep, simulate_outputs, write_json, write_sidecar,
                         write_sweep_outputs)
from .lp import LPError
from .model import BilinearSystem
from .sme import InfeasibleSetError, write_diameter_csv
from .stochastic import read_trajectory_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("bilinear_sme")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.replications is not None:
        changes["replications"] = args.replications
    if args.out is not None:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg.out)
    written = simulate_outputs(cfg, out, T=args.T)
    log.info("wrote %d files to %s", len(written), out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg.out)
    sys_ = build_system(cfg)
    rows = run_sweep(cfg, sys_, jobs=args.jobs)
    write_sweep_outputs(cfg, rows, out, sys_, with_timing=args.timing, plot=args.plot)
    failed = sorted({r.replication for r in rows if r.status != "ok"})
    if failed:
        log.warning("replications with failed rows: %s", failed)
    log.info("wrote sweep results to %s", out)
    return EXIT_OK


def cmd_bound(args) -> int:
    try:
        data = json.loads(Path(args.inputs).read_text())
        inputs = ComplexityInputs.from_dict(data)
    except OSError as exc:
        raise ConfigError(f"cannot read inputs {args.inputs}: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid bound inputs: {exc}") from exc
    report = bound_report(inputs)
    out = _out_dir(args.out or ".")
    path = out / "bound.json"
    write_json(path, report)
    write_sidecar(path, metadata(None, None))
    print(json.dumps({"T_min": report["T_min"]}))
    return EXIT_OK


def cmd_constants(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg.out)
    report = constants_report(cfg)
    path = out / "constants.json"
    write_json(path, report)
    write_sidecar(path, metadata(cfg, cfg.master_seed))
    return EXIT_OK if report["growth_valid"] else EXIT_NUMERIC


def cmd_diam(args) -> int:
    try:
        traj = read_trajectory_csv(args.trajectory)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read trajectory {args.trajectory}: {exc}") from exc
    theta = None
    w_max = args.w_max
    if args.system:
        try:
            sys_ = BilinearSystem.load(args.system)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read system {args.system}: {exc}") from exc
        theta = sys_.theta_star()
        w_max = sys_.w_max if w_max is None else w_max
    if w_max is None:
        raise ConfigError("diam needs --w-max or --system")
    T_values = [int(t) for t in args.T.split(",")] if args.T else [traj.T]
    try:
        entries = diam_report(traj, w_max, T_values, args.prior_R0, args.n_directions,
                              args.seed or 0, theta=theta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args.out or ".")
    path = out / "diam.csv"
    write_diameter_csv([(e["T"], i, lo, up) for e in entries for i, (lo, up) in
                        enumerate(e["per_row"])], path)
    write_sidecar(path, metadata(None, args.seed or 0, trajectory=str(args.trajectory)))
    for e in entries:
        print(json.dumps({k: e[k] for k in ("T", "lower", "upper", "prior_active", "contains_theta")
                          if k in e}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilinear-sme", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--replications", type=int, help="override the replication count")

    p = sub.add_parser("simulate", help="write the system and one trajectory per replication")
    common(p)
    p.add_argument("--T", type=int, help="trajectory length (default: largest T in the grid)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="diameter sweep over the T grid")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel replication workers")
    p.add_argument("--timing", action="store_true",
                   help="fill the wall_ms column of sweep.csv (not byte-reproducible)")
    p.add_argument("--plot", action="store_true", help="also write a gnuplot script")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bound", help="evaluate the sample-complexity bound")
    p.add_argument("--inputs", required=True, help="JSON file of bound inputs")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("constants", help="estimate small-ball, boundary-mass and growth constants")
    common(p)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("diam", help="diameter bounds for a stored trajectory")
    p.add_argument("--trajectory", required=True, help="trajectory CSV")
    p.add_argument("--system", help="system JSON (supplies w_max and the membership check)")
    p.add_argument("--w-max", type=float, dest="w_max")
    p.add_argument("--prior-R0", type=float, dest="prior_R0", default=10.0)
    p.add_argument("--T", help="comma-separated sample counts (default: all samples)")
    p.add_argument("--n-directions", type=int, dest="n_directions")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_diam)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LPError, InfeasibleSetError, ConvergenceError, FloatingPointError,
            ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
