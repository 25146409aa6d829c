"""Command-line interface.

Subcommands: generate-truth, run {dsi,mcmc,map}, sweep-ell, compare,
export-plots. Exit codes: 0 success, 1 configuration error,
2 simulation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness
from .config import ExperimentConfig
from .errors import ConfigurationError, NumericalError, SimulationFailed


def _add_common(parser):
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file (defaults reproduce the benchmark)")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--workers", type=int, default=os.cpu_count(),
                        help="worker pool size (default: available parallelism)")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--allow-inverse-crime", action="store_true",
                        help="permit identical truth and inversion grids")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsinv",
        description="Direct forecasting of well pressures by data space inversion, "
                    "with MCMC and MAP-linearisation baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-truth", help="draw the true system and synthesise data")
    _add_common(p)
    p.add_argument("--no-history", action="store_true",
                   help="skip exporting the per-slice truth pressure fields")

    p = sub.add_parser("run", help="run one inference method")
    p.add_argument("method", choices=["dsi", "mcmc", "map"])
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="observations.json from generate-truth")

    p = sub.add_parser("sweep-ell", help="DSI across the configured ensemble sizes")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("compare", help="compare method outputs against the truth")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--samples", nargs="+", required=True, metavar="NAME=FILE",
                   help="method sample matrices, e.g. dsi=out/dsi_samples.dse")
    p.add_argument("--allow-mixed-hash", action="store_true")

    p = sub.add_parser("export-plots", help="render the comparison CSVs (needs matplotlib)")
    _add_common(p)

    return parser


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
    if args.seed is not None:
        overrides["seed"] = args.seed
    return ExperimentConfig(overrides, allow_inverse_crime=args.allow_inverse_crime)


def _cmd_generate_truth(args) -> int:
    config = _load_config(args)
    result = harness.generate_truth(config, args.out, export_history=not args.no_history)
    print(f"truth field: {result['field']}")
    print(f"data file:   {result['data']} ({result['n_observations']} observations)")
    if result["redraws"]:
        print(f"redraws after simulation failure: {result['redraws']}")
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args)
    data = harness.load_observations(args.data)
    runner = {"dsi": harness.run_dsi, "mcmc": harness.run_mcmc, "map": harness.run_map}
    report = runner[args.method](config, data, args.out, workers=args.workers)
    shown = {k: v for k, v in report.items() if not k.startswith("_")}
    print(json.dumps(shown, indent=1, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    data = harness.load_observations(args.data)
    reports = harness.sweep_ell(config, data, args.out, workers=args.workers)
    harness.write_sweep_csv(Path(args.out) / "plot_sample_size_sweep.csv", reports, data)
    for ell in sorted(reports):
        print(f"ell={ell}: samples -> {reports[ell]['samples_file']}")
    return 0


def _cmd_compare(args) -> int:
    data = harness.load_observations(args.data)
    sample_files = {}
    method_reports = {}
    for item in args.samples:
        if "=" not in item:
            raise ConfigurationError(f"--samples items must be NAME=FILE, got {item!r}")
        name, path = item.split("=", 1)
        sample_files[name] = Path(path)
        report_path = Path(path).parent / f"{name}_report.json"
        if report_path.exists():
            with open(report_path) as fh:
                method_reports[name] = json.load(fh)
    report = harness.compare(
        sample_files, data, args.out,
        allow_mixed_hash=args.allow_mixed_hash,
        method_reports=method_reports,
    )
    print(json.dumps(report["distances"], indent=1, sort_keys=True))
    print(f"comparison written to {Path(args.out) / 'comparison.json'}")
    return 0


def _cmd_export_plots(args) -> int:
    try:
        import matplotlib
    except ImportError as exc:
        raise ConfigurationError(
            "matplotlib is required for export-plots (pip install dsinv[plots])"
        ) from exc
    matplotlib.use("Agg")
    import csv

    import matplotlib.pyplot as plt

    traj_path = Path(args.out) / "plot_well_trajectories.csv"
    if not traj_path.exists():
        raise ConfigurationError(f"{traj_path} not found; run compare first")
    rows = list(csv.DictReader(open(traj_path)))
    methods = sorted({r["method"] for r in rows})
    wells = sorted({int(r["well"]) for r in rows})

    fig, axes = plt.subplots(len(wells), len(methods),
                             figsize=(3.2 * len(methods), 2.2 * len(wells)),
                             sharex=True, sharey="row", squeeze=False)
    for i, well in enumerate(wells):
        for j, method in enumerate(methods):
            sel = [r for r in rows if r["method"] == method and int(r["well"]) == well]
            t = [float(r["time_days"]) for r in sel]
            ax = axes[i][j]
            ax.fill_between(t, [float(r["lo95_mpa"]) for r in sel],
                            [float(r["hi95_mpa"]) for r in sel], alpha=0.3)
            ax.plot(t, [float(r["mean_mpa"]) for r in sel], lw=1)
            ax.plot(t, [float(r["truth_mpa"]) for r in sel], "k-", lw=1)
            if i == 0:
                ax.set_title(method)
            if j == 0:
                ax.set_ylabel(f"well {well} [MPa]")
    axes[-1][0].set_xlabel("time [days]")
    fig.tight_layout()
    out_path = Path(args.out) / "well_trajectories.svg"
    fig.savefig(out_path)
    print(f"wrote {out_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate-truth": _cmd_generate_truth,
        "run": _cmd_run,
        "sweep-ell": _cmd_sweep,
        "compare": _cmd_compare,
        "export-plots": _cmd_export_plots,
    }
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except SimulationFailed as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
