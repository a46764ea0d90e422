"""Batch runner: ``ensemble-memory --config run.cfg --mode both --out results``.

Precedence: command-line flags > config file > built-in defaults.

Outputs in ``--out``:

* ``summary.json`` - config echo, tool version, seed, and the ``exact`` and/or
  ``montecarlo`` sections (plus ``difference`` per class in ``both`` mode).
* ``trials.jsonl`` - one trial record per line (Monte Carlo modes).
* ``summary.csv`` - header plus one row; columns are ``mode``, the
  :data:`~ensemble_memory.analysis.CSV_COLUMNS`, then ``exact_SuccessIdentity``,
  ``exact_SuccessPhaseFlip``, ``exact_Reject``.

Exit codes: 0 ok, 1 config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import CSV_COLUMNS, INTERVAL_METHOD, aggregate, exact_report
from .config import (
    ExperimentSpec,
    _formats,
    build_spec,
    config_echo,
    diagnose,
    parse_values,
    read_lines,
    validate_config,
)
from .errors import ConfigError, SimulationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
SEEDING = "numpy SeedSequence(seed, spawn_key=(trial,)) -> default_rng"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ensemble-memory", description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, help="flat key = value config file")
    ap.add_argument("--mode", choices=("exact", "montecarlo", "both"))
    ap.add_argument("--trials", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path)
    ap.add_argument("--format", type=_formats, help="comma list: json,csv")
    ap.add_argument("--workers", type=int, default=1, help="processes for Monte Carlo trials")
    ap.add_argument("--no-trial-log", action="store_true", help="skip trials.jsonl")
    ap.add_argument("--validate", action="store_true", help="only check the config and exit")
    return ap


def resolve_spec(args: argparse.Namespace) -> ExperimentSpec:
    """Config file values, then flag overrides; raises ConfigError."""
    values, lines = {}, {}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        raw = read_lines(text)
        values = parse_values(raw)
        lines = {k: line for k, (_, line) in raw.items()}
    for key in ("mode", "trials", "seed", "out", "format"):
        flag = getattr(args, key)
        if flag is not None:
            values[key] = flag
            lines[key] = None
    spec = build_spec(values, lines)
    problems = diagnose(spec, lines)
    if problems:
        raise ConfigError("; ".join(str(d) for d in problems), key=problems[0].key, line=problems[0].line)
    return spec


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def run_experiment(spec: ExperimentSpec, workers: int = 1, trial_log: bool = True) -> dict:
    """Execute ``spec`` and write its report files; returns the summary dict."""
    from .protocol import run_trials

    cfg = spec.config
    summary = {
        "tool": "ensemble-memory",
        "version": __version__,
        "mode": spec.mode,
        "seed": cfg.seed,
        "trial_seeding": SEEDING,
        "config": config_echo(cfg),
    }
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    exact = stats = None
    if spec.mode in ("exact", "both"):
        try:
            exact = exact_report(cfg)
        except SimulationError as exc:
            exc.stage = exc.stage or "exact enumeration"
            raise
        summary["exact"] = exact
    if spec.mode in ("montecarlo", "both"):
        records = run_trials(cfg, workers=workers)
        stats = aggregate(records)
        summary["montecarlo"] = stats.to_json()
        summary["montecarlo"]["interval_method"] = INTERVAL_METHOD
        if trial_log:
            with open(out_dir / "trials.jsonl", "w", encoding="utf-8", newline="\n") as fh:
                for r in records:
                    fh.write(json.dumps(r.to_json(), allow_nan=False) + "\n")
    if exact is not None and stats is not None:
        freq = stats.class_frequencies()
        summary["difference"] = {
            k: abs(exact["class_probabilities"][k] - freq.get(k, 0.0)) for k in exact["class_probabilities"]
        }
    if "json" in spec.report_formats:
        (out_dir / "summary.json").write_text(_dump(summary), encoding="utf-8")
    if "csv" in spec.report_formats:
        classes = ("SuccessIdentity", "SuccessPhaseFlip", "Reject")
        header = ["mode", *CSV_COLUMNS, *(f"exact_{c}" for c in classes)]
        row = [spec.mode]
        row += stats.csv_row() if stats is not None else [""] * len(CSV_COLUMNS)
        row += [exact["class_probabilities"][c] for c in classes] if exact is not None else [""] * 3
        with open(out_dir / "summary.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerow(row)
    return summary


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.validate:
        if args.config is None:
            print("error: --validate needs --config", file=sys.stderr)
            return EXIT_CONFIG
        diags = validate_config(args.config)
        for d in diags:
            print(d, file=sys.stderr)
        return EXIT_CONFIG if diags else EXIT_OK
    try:
        spec = resolve_spec(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_experiment(spec, workers=args.workers, trial_log=not args.no_trial_log)
    except SimulationError as exc:
        stage = f" in stage '{exc.stage}'" if exc.stage else ""
        print(f"runtime error{stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
