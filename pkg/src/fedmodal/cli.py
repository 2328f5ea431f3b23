"""Experiment runner CLI.

``fedmodal run <config> [--out DIR] [--seed N] [-v]`` executes one regime
end-to-end and writes report.json, curves.csv and per-modality confusion
CSVs. ``fedmodal compare <a.json> <b.json>`` tabulates two reports.

Exit codes: 0 success, 2 invalid configuration, 3 data loading failure,
4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import federation
from .config import ExperimentConfig, load_config
from .errors import ConfigurationError, DataFormatError, IncompatibleMapsError, TapeMismatchError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

OUTPUT_DIR_ENV = "FEDMODAL_OUTDIR"


def _mean_confusions(report: dict) -> dict:
    """Elementwise mean of the per-seed confusion matrices, per modality."""
    out = {}
    for group in report["runs"][0]["final"]:
        if "confusion" not in report["runs"][0]["final"][group]:
            continue
        stacked = np.array([run["final"][group]["confusion"] for run in report["runs"]])
        out[group] = stacked.mean(axis=0)
    return out


def _delta_gaps(report: dict, reference_path: str) -> dict:
    with open(reference_path, encoding="utf-8") as handle:
        reference = json.load(handle)
    gaps = {}
    for group, final in report["mean"]["final"].items():
        ref_final = reference.get("mean", {}).get("final", {}).get(group, {})
        if "test_accuracy" in final and "test_accuracy" in ref_final:
            gaps[group] = abs(final["test_accuracy"] - ref_final["test_accuracy"])
    return gaps


def _write_outputs(report: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    with open(out_dir / "curves.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["seed", "epoch", "series", "value"])
        for run in report["runs"]:
            for group, series in run["curves"].items():
                for name, values in series.items():
                    for epoch, value in enumerate(values):
                        writer.writerow([run["seed"], epoch, f"{group}/{name}", repr(value)])

    for group, matrix in _mean_confusions(report).items():
        with open(out_dir / f"confusion_{group}.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            size = matrix.shape[0]
            writer.writerow(["actual\\predicted"] + list(range(size)))
            for actual, row in enumerate(matrix):
                writer.writerow([actual] + [repr(float(v)) for v in row])


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seeds=(args.seed,)).validate()
    except ConfigurationError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(
        args.out
        or cfg.output_dir
        or os.environ.get(OUTPUT_DIR_ENV)
        or "out"
    )

    started = time.perf_counter()
    try:
        regime = federation.ExperimentRegime(cfg.regime, cfg.global_epochs)
        report = federation.run_experiment(regime, cfg)
    except ConfigurationError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"error: data loading failed: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (IncompatibleMapsError, TapeMismatchError) as exc:
        print(f"error: internal invariant breached: {exc}", file=sys.stderr)
        return EXIT_INTERNAL

    report["config"] = cfg.to_dict()
    if cfg.reference_report:
        try:
            report["delta_gap_vs_reference"] = _delta_gaps(report, cfg.reference_report)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: data loading failed: {exc}", file=sys.stderr)
            return EXIT_DATA
    report["wall_clock_seconds"] = time.perf_counter() - started

    _write_outputs(report, out_dir)
    for group, final in sorted(report["mean"]["final"].items()):
        if "test_accuracy" in final:
            print(f"{group}: mean test accuracy {final['test_accuracy']:.4f}")
        else:
            print(f"{group}: mean test loss {final['test_loss']:.4f}")
    print(f"report written to {out_dir / 'report.json'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    reports = []
    for path in (args.report_a, args.report_b):
        try:
            with open(path, encoding="utf-8") as handle:
                reports.append(json.load(handle))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: data loading failed: {exc}", file=sys.stderr)
            return EXIT_DATA

    a_final = reports[0].get("mean", {}).get("final", {})
    b_final = reports[1].get("mean", {}).get("final", {})
    groups = sorted(
        g
        for g in set(a_final) & set(b_final)
        if "test_accuracy" in a_final[g] and "test_accuracy" in b_final[g]
    )
    header = f"{'modality':<12} {'acc_a':>8} {'acc_b':>8} {'diff':>9} {'delta_gap':>9}"
    print(header)
    print("-" * len(header))
    for group in groups:
        acc_a = a_final[group]["test_accuracy"]
        acc_b = b_final[group]["test_accuracy"]
        print(
            f"{group:<12} {acc_a:>8.4f} {acc_b:>8.4f} {acc_a - acc_b:>+9.4f} "
            f"{abs(acc_a - acc_b):>9.4f}"
        )
    if not groups:
        print("(no comparable modalities)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmodal",
        description="Desk-scale federated transfer learning experiments",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="run an experiment from a config file")
    run_cmd.add_argument("config", help="path to the experiment config file")
    run_cmd.add_argument("--out", help="output directory (default: config, then $FEDMODAL_OUTDIR)")
    run_cmd.add_argument("--seed", type=int, help="override the seed list with a single seed")
    run_cmd.set_defaults(handler=cmd_run)

    compare_cmd = commands.add_parser("compare", help="tabulate two report.json files")
    compare_cmd.add_argument("report_a")
    compare_cmd.add_argument("report_b")
    compare_cmd.set_defaults(handler=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
