"""Command line interface.

Three subcommands:

``fedsurv generate --config cfg.json``
    Write one CSV per zone from the config's scenario section.
``fedsurv run --config cfg.json [--out DIR]``
    Execute the local/federated grid and write results.csv, report.md,
    report.json and the federated model snapshots.
``fedsurv report --in DIR --format markdown|csv``
    Re-render a stored report.json to stdout without recomputation.

Exit codes: 0 on success, 1 when any experiment cell failed, 2 on
configuration errors. FEDSURV_THREADS controls cell parallelism.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import generate_scenario, write_csv
from .experiment import (
    ConfigError,
    emit_report,
    load_config,
    render_csv,
    render_markdown,
    report_from_json,
    run_experiment,
    save_global_models,
)

EXIT_OK = 0
EXIT_CELL_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsurv",
        description="federated survival model training on simulated clients",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write zone CSVs from a scenario config")
    gen.add_argument("--config", required=True, help="experiment config (JSON)")
    gen.add_argument("--out", default=None, help="output directory (default: config output_dir/data)")

    run = sub.add_parser("run", help="run the local/federated experiment grid")
    run.add_argument("--config", required=True, help="experiment config (JSON)")
    run.add_argument("--out", default=None, help="output directory (default: config output_dir)")

    rep = sub.add_parser("report", help="re-render a stored run")
    rep.add_argument("--in", dest="in_dir", required=True, help="directory holding report.json")
    rep.add_argument(
        "--format", required=True, choices=("markdown", "csv"), help="output format"
    )
    return parser


def _cmd_generate(args) -> int:
    config = load_config(args.config)
    if config.scenario is None:
        raise ConfigError("generate needs a config with a scenario section")
    out = Path(args.out) if args.out else Path(config.output_dir) / "data"
    out.mkdir(parents=True, exist_ok=True)
    zones = generate_scenario(config.scenario)
    for name, dataset in zones.items():
        path = out / f"{name}.csv"
        write_csv(dataset, config.schema, path)
        print(f"wrote {path} ({len(dataset)} rows, {dataset.n_events} events)")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out) if args.out else Path(config.output_dir)
    report, global_models = run_experiment(config)
    written = emit_report(report, out_dir)
    written += save_global_models(global_models, out_dir)
    for path in written:
        print(f"wrote {path}")
    if report.n_failed:
        print(f"{report.n_failed} of {len(report.cells)} cells failed", file=sys.stderr)
        return EXIT_CELL_FAILURE
    print(f"all {len(report.cells)} cells succeeded")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = Path(args.in_dir) / "report.json"
    if not path.exists():
        raise ConfigError(f"no report.json under {args.in_dir}")
    report = report_from_json(path.read_text())
    if args.format == "csv":
        sys.stdout.write(render_csv(report))
    else:
        sys.stdout.write(render_markdown(report))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_report(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


def console_entry() -> None:
    raise SystemExit(main())
