"""Command-line front end: ``femtosim {run,sweep,outage,trace}``."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ScenarioConfig, load_scenario, validate
from .engine import (format_trace, merge_reports, replicate_config, run_outage_sweep,
                     run_replicates, trace_handover)
from .errors import FemtosimError, ScenarioError
from .radio import STRATEGIES
from .report import MetricsReport, OUTAGE_COLUMNS, _fmt, write_outage_csv, write_outputs
from .rng import derive_seed

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario INI file")
    common.add_argument("--out", help="output directory (default: $FEMTOSIM_OUT or ./out)")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--replicates", type=int, default=1, help="independent replicate runs")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--quiet", action="store_true", help="suppress the summary table")
    p = argparse.ArgumentParser(prog="femtosim", description="Two-tier femtocell simulator.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run a scenario and write the four CSVs")
    sub.add_parser("sweep", parents=[common], help="run the scenario once per spectrum strategy")
    o = sub.add_parser("outage", parents=[common], help="Monte Carlo outage sweep only")
    o.add_argument("--drops", type=int, help="override outage_drops")
    sub.add_parser("trace", parents=[common], help="print the call flow of one handover")
    return p


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get("FEMTOSIM_OUT") or "out")


def _load(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.replicates < 1:
        raise ScenarioError({"--replicates": "must be >= 1"})
    if args.workers < 1:
        raise ScenarioError({"--workers": "must be >= 1"})
    validate(cfg)
    return cfg


def _summary(report: MetricsReport) -> str:
    rows = [(k, v) for k, v in report.metrics()
            if k.startswith(("handovers.", "rejected.", "scans.mean", "voice.p", "broker.granted"))
            or (k.startswith("outage.") and k.endswith("aggregate.p_out"))]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _run_and_write(cfg: ScenarioConfig, out: Path, replicates: int, workers: int) -> MetricsReport:
    reports = run_replicates(cfg, replicates, workers)
    if replicates > 1:
        for i, r in enumerate(reports):
            write_outputs(r, out / f"rep_{i:03d}")
    merged = merge_reports(reports)
    write_outputs(merged, out)
    return merged


def cmd_run(args) -> int:
    cfg = _load(args)
    report = _run_and_write(cfg, _out_dir(args), args.replicates, args.workers)
    if not args.quiet:
        print(_summary(report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    rows = []
    for strategy in cfg.outage_strategies:
        rep = _run_and_write(replace(cfg, strategy=strategy), out / strategy, args.replicates,
                             args.workers)
        rows += [(strategy, k, v) for k, v in rep.metrics()]
        if not args.quiet:
            print(f"== {strategy}")
            print(_summary(rep))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("strategy", "metric", "value"))
        w.writerows(rows)
    return EXIT_OK


def cmd_outage(args) -> int:
    cfg = _load(args)
    if args.drops is not None:
        if args.drops < 1:
            raise ScenarioError({"--drops": "must be >= 1"})
        cfg = replace(cfg, outage_drops=args.drops)
    if cfg.outage_drops < 1:
        raise ScenarioError({"outage_drops": "must be >= 1 for the outage command"})
    merged = None
    for i in range(args.replicates):
        seed = derive_seed(replicate_config(cfg, i).seed, "outage")
        part = MetricsReport(outage=run_outage_sweep(cfg, seed, args.workers), outage_seed=seed)
        merged = part if merged is None else merged.merge(part)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    rows = merged.outage_rows()
    write_outage_csv(rows, out / "outage.csv")
    if not args.quiet:
        print("  ".join(OUTAGE_COLUMNS))
        for r in rows:
            print("  ".join(str(x) for x in r))
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg = _load(args)
    if cfg.ue_count < 1 or cfg.fap_count < 1:
        raise ScenarioError({"ue_count/fap_count": "trace needs at least one UE and one FAP"})
    attempt = trace_handover(cfg)
    if attempt is None:
        print(f"no handover reached CAC within sim_duration_s={_fmt(cfg.sim_duration_s)}",
              file=sys.stderr)
        return EXIT_RUNTIME
    text = format_trace(attempt)
    if args.out or os.environ.get("FEMTOSIM_OUT"):
        out = _out_dir(args)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "outage": cmd_outage, "trace": cmd_trace}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"femtosim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FemtosimError, OSError) as exc:
        print(f"femtosim: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
