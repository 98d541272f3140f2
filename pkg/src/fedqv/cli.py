"""Command line entry point: ``fedqv run`` and ``fedqv sweep``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .config import ConfigError, config_to_dict, parse_config
from .simulator import ExperimentConfig, MetricsRecord, derive_seed, resolve_workers, run_experiment

log = logging.getLogger("fedqv")

METRICS_HEADER = ("round", "acc", "asr", "train_loss")
VOTES_HEADER = ("round", "party", "vote", "credit", "normalized_score", "budget_after")
AXES = {
    "budget": ("voting", "initial_budget"),
    "theta": ("voting", "theta"),
    "iota": (None, "dirichlet_iota"),
    "attacker_fraction": ("attack", "fraction"),
}


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    repeats: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; expected one of {tuple(AXES)}")
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def fmt(x) -> str:
    """Shortest round-trip text for floats, plain text otherwise."""
    return repr(float(x)) if isinstance(x, float) else str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_metrics(path: Path, records: list[MetricsRecord]) -> None:
    _write_csv(path, METRICS_HEADER,
               ((r.round, r.acc, r.asr, r.train_loss) for r in records))


def write_votes(path: Path, records: list[MetricsRecord]) -> None:
    rows = [(r.round, *row) for r in records for row in (r.votes or ())]
    _write_csv(path, VOTES_HEADER, rows)


def summarize(cfg: ExperimentConfig, records: list[MetricsRecord]) -> dict:
    last = records[-1] if records else None
    return {
        "final_acc": last.acc if last else None,
        "final_asr": last.asr if last else None,
        "rounds": len(records),
        "seed": cfg.seed,
        "version": f"fedqv {__version__}",
        "config": config_to_dict(cfg),
    }


def run(config_path, out_dir, seed: int | None = None, workers: int | None = None) -> dict:
    """Run one experiment and write metrics.csv, summary.json (and votes.csv)."""
    cfg = parse_config(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return run_config(cfg, out_dir, workers)


def run_config(cfg: ExperimentConfig, out_dir, workers: int | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = run_experiment(cfg, workers)
    write_metrics(out / "metrics.csv", records)
    if cfg.trace_votes:
        write_votes(out / "votes.csv", records)
    summary = summarize(cfg, records)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _set_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    section, field = AXES[axis]
    if section is None:
        return dataclasses.replace(cfg, **{field: value})
    sub = dataclasses.replace(getattr(cfg, section), **{field: value})
    return dataclasses.replace(cfg, **{section: sub})


def _run_cell(args):
    cfg, path = args
    records = run_experiment(cfg, workers=1)
    write_metrics(path, records)
    last = records[-1] if records else None
    return (last.acc, last.asr) if last else (float("nan"), float("nan"))


def sweep(config_path, sweeps: list[SweepSpec] | SweepSpec, out_dir,
          workers: int | None = None) -> Path:
    """Grid over one or more axes; writes grid.csv with one row per (cell, repeat).

    Repeats come from the first spec. Each cell's seed is derived from the base
    seed, the axis names, the cell values and the repeat index.
    """
    if isinstance(sweeps, SweepSpec):
        sweeps = [sweeps]
    base = parse_config(config_path)
    repeats = sweeps[0].repeats
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    jobs, keys = [], []
    for combo in itertools.product(*(s.values for s in sweeps)):
        for rep in range(repeats):
            cfg = base
            for s, v in zip(sweeps, combo):
                cfg = _set_axis(cfg, s.axis, v)
            parts = [base.seed]
            for s, v in zip(sweeps, combo):
                parts += [s.axis, repr(float(v))]
            seed = derive_seed(*parts, rep)
            cfg = dataclasses.replace(cfg, seed=seed)
            name = "_".join(f"{s.axis}={v!r}" for s, v in zip(sweeps, combo)) + f"_rep={rep}"
            jobs.append((cfg, out / "cells" / f"{name}.csv"))
            keys.append((*combo, rep, seed))
    n = resolve_workers(workers)
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(n, len(jobs))) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    grid = out / "grid.csv"
    header = (*(s.axis for s in sweeps), "repeat", "seed", "final_acc", "final_asr")
    _write_csv(grid, header, ((*k, *r) for k, r in zip(keys, results)))
    return grid


def _values(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedqv", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a single experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=None)
    s = sub.add_parser("sweep", help="grid over budget/theta/iota/attacker_fraction")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", action="append", required=True, choices=sorted(AXES))
    s.add_argument("--values", action="append", required=True, type=_values)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            summary = run(args.config, args.out, args.seed)
            log.info("final acc %s  asr %s", summary["final_acc"], summary["final_asr"])
        else:
            if len(args.axis) != len(args.values):
                raise ValueError("give one --values list per --axis")
            specs = [SweepSpec(a, v, args.repeats) for a, v in zip(args.axis, args.values)]
            log.info("wrote %s", sweep(args.config, specs, args.out))
    except (ConfigError, ValueError, OSError, ArithmeticError) as exc:
        print(f"fedqv: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
