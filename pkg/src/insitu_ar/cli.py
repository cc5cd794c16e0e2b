"""Command-line experiment runner; every subcommand writes CSV.

    insitu-ar [--config FILE] [--seed N] [--out PATH] [--reps N] [--ranks N] <command>

Commands:

``fit-sweep``    holdout error per group and training fraction
``roi-table``    break-point radius per threshold vs the exhaustive scan
``delay-table``  inflection delay time per merger channel vs its knee
``bench``        overhead / acceleration wall-time medians
``simulate``     dump a surrogate field as long-format CSV
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

from . import scenarios
from .errors import InsituError
from .scenarios import ExperimentConfig
from .sims import dump_field_csv

ROW_ERROR = "error"


def _format(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    if value is None:
        return ""
    return value


def write_csv(rows: list[dict], out) -> None:
    if not rows:
        return
    columns = list(rows[0])
    for row in rows[1:]:
        columns += [k for k in row if k not in columns]
    writer = csv.DictWriter(out, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _format(v) for k, v in row.items()})


def read_csv(text: str) -> list[dict]:
    """Parse CSV written by :func:`write_csv` back into typed rows."""
    def parse(v):
        if v == "":
            return None
        if v in ("True", "False"):
            return v == "True"
        for kind in (int, float):
            try:
                return kind(v)
            except ValueError:
                pass
        return v

    return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(io.StringIO(text))]


# commands


def cmd_fit_sweep(cfg: ExperimentConfig) -> list[dict]:
    return scenarios.fit_sweep_rows(cfg)


def cmd_roi_table(cfg: ExperimentConfig, oracle: bool = False) -> list[dict]:
    return scenarios.roi_rows(cfg, oracle=oracle)


def cmd_delay_table(cfg: ExperimentConfig) -> list[dict]:
    return scenarios.delay_rows(cfg)


def cmd_bench(cfg: ExperimentConfig) -> list[dict]:
    return scenarios.bench_rows(cfg)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="insitu-ar", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="seed for surrogate noise")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--reps", type=int, help="timing repetitions")
    p.add_argument("--ranks", type=int, help="rank threads for harness mode")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-sweep", help="holdout error vs training fraction")
    s.add_argument("--scenario", choices=scenarios.SCENARIOS)
    s.add_argument("--fractions", type=float, nargs="*")

    s = sub.add_parser("roi-table", help="break-point radius vs ground truth")
    s.add_argument("--thresholds", type=float, nargs="*")
    s.add_argument("--oracle", action="store_true",
                   help="replace model predictions with the stored field")

    sub.add_parser("delay-table", help="inflection delay times vs channel knees")

    s = sub.add_parser("bench", help="overhead and early-termination timings")
    s.add_argument("--scenario", choices=scenarios.SCENARIOS)
    s.add_argument("--repeats", type=int, help="synthetic work rounds per iteration")

    s = sub.add_parser("simulate", help="dump a surrogate field")
    s.add_argument("--scenario", choices=scenarios.SCENARIOS)
    return p


def load_config(args) -> ExperimentConfig:
    record = {}
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise InsituError(f"cannot read config {args.config}: {exc}") from exc
        cfg = ExperimentConfig.loads(text)
        record = cfg.to_dict()
        record.pop("schema")
    overrides = {
        "seed": args.seed,
        "repetitions": args.reps,
        "ranks": args.ranks,
        "output": args.out,
        "scenario": getattr(args, "scenario", None),
        "fractions": getattr(args, "fractions", None),
        "thresholds": getattr(args, "thresholds", None),
    }
    record.update({k: v for k, v in overrides.items() if v is not None})
    if args.command == "delay-table":
        record["scenario"] = "merger"
    elif args.command == "roi-table":
        record["scenario"] = "blast"
    repeats = getattr(args, "repeats", None)
    if repeats is not None:
        record["work"] = {**record.get("work", {}), "repeats": repeats}
    return ExperimentConfig(**record)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "fit-sweep":
            rows = cmd_fit_sweep(cfg)
        elif args.command == "roi-table":
            rows = cmd_roi_table(cfg, oracle=args.oracle)
        elif args.command == "delay-table":
            rows = cmd_delay_table(cfg)
        elif args.command == "bench":
            rows = cmd_bench(cfg)
        else:
            rows = None
    except InsituError as exc:
        print(f"insitu-ar: error: {exc}", file=sys.stderr)
        return 2

    out = open(cfg.output, "w", newline="") if cfg.output else sys.stdout
    try:
        if rows is None:
            if cfg.scenario == "blast":
                dump_field_csv(cfg.blast_field().full_field(), out, "location")
            else:
                dump_field_csv(cfg.merger_curves().full_field(), out, "channel")
            return 0
        write_csv(rows, out)
    finally:
        if out is not sys.stdout:
            out.close()
    failed = [r for r in rows if r.get("status") == ROW_ERROR]
    return 1 if failed else 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
