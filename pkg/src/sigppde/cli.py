"""Command-line interface.

Subcommands: kernel-eval (two path CSVs -> kernel and derivatives), solve-fbm,
solve-bergomi, cross-validate, oracle-check. Exit codes: 0 success, 2 invalid
config, 3 numerical failure. SIGPPDE_THREADS is the fallback for --threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path as FsPath

import numpy as np

from . import goursat, sig_oracle
from .experiments import ExperimentConfig, MetricsReport, cross_validate, run_bergomi, run_fbm
from .numerics import NumericalError
from .paths import Path, one_variation
from .static_kernels import RbfLift, a_fields


def _add_common(parser):
    parser.add_argument("--config", required=True, help="JSON file, schema = ExperimentConfig")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--emit-plot-data", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="sigppde")
    sub = parser.add_subparsers(dest="command", required=True)

    ke = sub.add_parser("kernel-eval", help="kernel and derivatives for two path CSVs")
    ke.add_argument("--gamma", required=True)
    ke.add_argument("--tau", required=True)
    ke.add_argument("--eta", default=None)
    ke.add_argument("--etabar", default=None)
    ke.add_argument("--lift", choices=["identity", "rbf"], default="identity")
    ke.add_argument("--sigma-g", type=float, default=1.0)
    ke.add_argument("--dyadic-order", type=int, default=2)

    for name in ("solve-fbm", "solve-bergomi"):
        _add_common(sub.add_parser(name, help=f"run the {name.split('-')[1]} experiment"))

    cv = sub.add_parser("cross-validate", help="pick bandwidths on the config's cv_grid")
    _add_common(cv)

    oc = sub.add_parser("oracle-check", help="validate the PDE kernel against brute force")
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--pairs", type=int, default=10)
    return parser


def _load_config(args) -> ExperimentConfig:
    with open(args.config) as fh:
        obj = json.load(fh)
    if args.seed is not None:
        obj["seed"] = args.seed
    threads = args.threads
    if threads is None and os.environ.get("SIGPPDE_THREADS"):
        threads = int(os.environ["SIGPPDE_THREADS"])
    if threads is not None:
        obj["threads"] = threads
    return ExperimentConfig.from_dict(obj)


def _write_report(report: MetricsReport, out_dir: str | None, emit_plot_data: bool):
    payload = {
        "mse": report.mse,
        "mae": report.mae,
        "n_points": len(report.table),
        "config": report.config,
        "runtime_ms": report.runtime_ms,
    }
    # keep stdout deterministic under a fixed seed; timing goes to stderr
    print(json.dumps({"mse": report.mse, "mae": report.mae}))
    print(f"runtime_ms: {report.runtime_ms:.1f}", file=sys.stderr)
    if out_dir is None:
        return
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if report.table:
        cols = list(report.table[0].keys())
        with open(out / "points.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            writer.writeheader()
            for row in report.table:
                writer.writerow({k: f"{v:.17g}" if isinstance(v, float) else v for k, v in row.items()})
    if emit_plot_data and report.table:
        with open(out / "plot_data.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["oracle", "predicted"])
            for row in report.table:
                writer.writerow([f"{row['oracle']:.17g}", f"{row['predicted']:.17g}"])


def _cmd_kernel_eval(args) -> int:
    with open(args.gamma) as fh:
        gamma = Path.from_csv(fh.read())
    with open(args.tau) as fh:
        tau = Path.from_csv(fh.read())

    def load_or_zero(name):
        if name is None:
            return Path(grid=gamma.grid, values=np.zeros_like(gamma.values))
        with open(name) as fh:
            return Path.from_csv(fh.read())

    eta = load_or_zero(args.eta)
    etabar = load_or_zero(args.etabar)
    lift = RbfLift(args.sigma_g) if args.lift == "rbf" else None
    fields = a_fields(gamma, tau, eta, etabar, lift)
    sol = goursat.solve(gamma, tau, eta, etabar, fields, dyadic_order=args.dyadic_order)
    k1, k2, k3, k4 = sol.corners()
    print(json.dumps({"kernel": k1, "d_eta": k2, "d_etabar": k3, "d_eta_etabar": k4}))
    return 0


def _cmd_oracle_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    from .paths import TimeGrid

    grid = TimeGrid(0.0, 1.0, 8)
    failures = 0
    for i in range(args.pairs):
        vals = rng.normal(0.0, 0.25, (2, grid.n_steps + 1, 2)).cumsum(axis=1)
        gamma, tau = Path(grid=grid, values=vals[0]), Path(grid=grid, values=vals[1])
        brute = sig_oracle.truncated_kernel(gamma, tau, level=12)
        fields = a_fields(gamma, tau, gamma, gamma, None)
        pde = goursat.kernel_only(gamma, tau, fields, dyadic_order=4)
        err = abs(pde - brute)
        tol = 1e-3 * (1.0 + abs(brute))
        bound = np.exp(one_variation(gamma) * one_variation(tau))
        ok = err <= tol and abs(pde) <= bound
        failures += 0 if ok else 1
        print(f"pair {i}: pde={pde:.8f} brute={brute:.8f} err={err:.2e} {'ok' if ok else 'FAIL'}")
    print(f"{args.pairs - failures}/{args.pairs} pairs within tolerance")
    return 0 if failures == 0 else 3


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "kernel-eval":
            return _cmd_kernel_eval(args)
        if args.command == "oracle-check":
            return _cmd_oracle_check(args)
        cfg = _load_config(args)
        if args.command == "solve-fbm":
            report = run_fbm(cfg)
        elif args.command == "solve-bergomi":
            report = run_bergomi(cfg)
        else:  # cross-validate
            params = cross_validate(cfg, cfg.cv_grid or [{}])
            print(
                json.dumps(
                    {
                        "sigma_t": params.sigma_t,
                        "sigma_x": params.sigma_x,
                        "sigma_g": params.sigma_g,
                        "sigma_l": params.sigma_l,
                    }
                )
            )
            return 0
        _write_report(report, args.out_dir, args.emit_plot_data)
        return 0
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
