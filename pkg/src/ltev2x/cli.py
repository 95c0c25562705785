"""Command line entry point: single runs and parameter sweeps."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .config import ConfigError, RunConfig, default_config_toml, parse_config
from .kpi import cdf_points, summarize, write_cdf_csv, write_records_csv, write_summary_json
from .pipelines import Simulation
from .scenario import dump_scenario_csv

log = logging.getLogger("ltev2x")

OUTPUT_ROOT_ENV = "LTEV2X_OUTPUT_ROOT"
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

AXES = ("bandwidth", "mcs", "mode")
MODES = ("unicast", "multicast")


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "out"))


def parse_seeds(text: str) -> list[int]:
    """``"1..5"``, ``"1,3,7"`` or a mix such as ``"1..3,9"``."""
    seeds: list[int] = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = part.split("..", 1)
                a, b = int(lo), int(hi)
                if b < a:
                    raise ValueError
                seeds.extend(range(a, b + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(ConfigError.TYPE, f"bad seed spec {part!r}") from None
    if not seeds:
        raise ConfigError(ConfigError.RANGE, "seed list is empty")
    return list(dict.fromkeys(seeds))


def write_run_outputs(sim: Simulation, records, out_dir: Path, dump_scenario: bool = False) -> dict[str, Any]:
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize(records)
    write_records_csv(records, out_dir / "records.csv")
    write_summary_json(summary, out_dir / "summary.json", sim.cfg.to_dict(), sim.seed)
    write_cdf_csv(cdf_points(records), out_dir / "cdf.csv")
    if dump_scenario:
        dump_scenario_csv(sim.scenario, out_dir / "scenario.csv")
    return {"success_rate": summary.success_rate, "mean_latency_ms": summary.mean_latency_ms}


def execute(cfg: RunConfig, seed: int, out_dir: Path, dump_scenario: bool = False) -> dict[str, Any]:
    sim = Simulation(cfg, seed)
    records = sim.run()
    return write_run_outputs(sim, records, Path(out_dir), dump_scenario)


@dataclass(frozen=True)
class SweepPoint:
    key: str
    overrides: dict[str, Any]


def sweep_points(axis: str, values: Sequence[str], modes: Sequence[str]) -> list[SweepPoint]:
    """Points of ``axis`` crossed with ``modes``, in the order given."""
    if axis not in AXES:
        raise ConfigError(ConfigError.RANGE, f"unknown sweep axis {axis!r}; expected one of {AXES}")
    if not values:
        raise ConfigError(ConfigError.RANGE, f"sweep axis {axis!r} has no values")
    for m in modes:
        if m not in MODES:
            raise ConfigError(ConfigError.RANGE, f"unknown downlink mode {m!r}")
    points = []
    if axis == "mode":
        for v in values:
            if v not in MODES:
                raise ConfigError(ConfigError.RANGE, f"unknown downlink mode {v!r}")
            points.append(SweepPoint(f"mode={v}", {"downlink_mode": v}))
        return points
    for v in values:
        try:
            x = float(v)
        except ValueError:
            raise ConfigError(ConfigError.TYPE, f"{axis} value {v!r} is not a number") from None
        for m in modes:
            if axis == "bandwidth":
                ov = {"bandwidth_ul_mhz": x, "bandwidth_dl_mhz": x, "downlink_mode": m}
            else:
                if m != "multicast":
                    raise ConfigError(ConfigError.RANGE, "the mcs axis only applies to multicast")
                ov = {"multicast_mcs_efficiency": x, "downlink_mode": m}
            points.append(SweepPoint(f"{axis}={v}/{m}", ov))
    return points


def _point_dir(root: Path, key: str, seed: int) -> Path:
    return root / key.replace("/", "_").replace("=", "-") / f"seed_{seed}"


def _sweep_task(args) -> dict[str, Any]:
    cfg, seed, out = args
    return execute(cfg, seed, out)


def run_sweep(cfg: RunConfig, points: Sequence[SweepPoint], seeds: Sequence[int], out_root: Path,
              jobs: int = 1) -> tuple[list[Path], int]:
    """Run every point for every seed; returns output dirs and the failure count.

    ``sweep_summary.csv`` rows follow point order then seed order.  A failed
    run keeps its row with empty KPI fields.
    """
    if not seeds:
        raise ConfigError(ConfigError.RANGE, "seed list is empty")
    tasks, dirs = [], []
    for p in points:
        pcfg = cfg.replace(run=p.overrides)
        for s in seeds:
            d = _point_dir(out_root, p.key, s)
            tasks.append((pcfg, s, d))
            dirs.append(d)
    results: list[dict[str, Any] | None] = [None] * len(tasks)
    failures = 0
    if jobs <= 1:
        futures = None
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        futures = [pool.submit(_sweep_task, t) for t in tasks]
    for i, t in enumerate(tasks):
        try:
            results[i] = futures[i].result() if futures else _sweep_task(t)
        except Exception as exc:  # a failing point is reported, the rest continue
            failures += 1
            log.error("sweep point %s seed %d failed: %s", t[2].parent.name, t[1], exc)
    if futures:
        pool.shutdown()
    out_root.mkdir(parents=True, exist_ok=True)
    with open(out_root / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "seed", "success_rate", "mean_latency_ms"])
        i = 0
        for p in points:
            for s in seeds:
                r = results[i]
                i += 1
                if r is None:
                    w.writerow([p.key, s, "", ""])
                else:
                    w.writerow([p.key, s, _num(r["success_rate"]), _num(r["mean_latency_ms"])])
    return dirs, failures


def _num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def _load(path: str | None) -> RunConfig:
    return parse_config(path) if path else RunConfig()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltev2x", description="LTE-Uu V2X system-level simulator")
    ap.add_argument("--print-default-config", action="store_true", help="print the default config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command")

    r = sub.add_parser("run", help="one run for a (config, seed) pair")
    r.add_argument("--config", help="TOML config file (defaults if omitted)")
    r.add_argument("--seed", type=int, default=None, help="seed (default: first of run.seeds)")
    r.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUTPUT_ROOT_ENV} or ./out)")
    r.add_argument("--dump-scenario", action="store_true", help="also write scenario.csv")

    s = sub.add_parser("sweep", help="Cartesian sweep over one axis, modes and seeds")
    s.add_argument("--config")
    s.add_argument("--axis", required=True, help="bandwidth=10,20,40,100 | mcs=0.1523,0.877 | mode=unicast,multicast")
    s.add_argument("--modes", default=None, help="comma list of downlink modes (default: config mode)")
    s.add_argument("--seeds", default=None, help="e.g. 1..5 (default: run.seeds)")
    s.add_argument("--out", type=Path, default=None)
    s.add_argument("--jobs", type=int, default=1)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.print_default_config:
        sys.stdout.write(default_config_toml())
        return EXIT_OK
    if args.command is None:
        ap.print_help()
        return EXIT_CONFIG
    try:
        cfg = _load(args.config)
        if args.command == "run":
            seed = args.seed if args.seed is not None else cfg.run.seeds[0]
            out = args.out or default_output_root()
            kpi = execute(cfg, seed, out, args.dump_scenario)
            print(f"seed {seed}: success_rate={kpi['success_rate']} mean_latency_ms={kpi['mean_latency_ms']}")
            return EXIT_OK
        axis, _, values = args.axis.partition("=")
        modes = [m for m in args.modes.split(",") if m] if args.modes else [cfg.run.downlink_mode]
        points = sweep_points(axis.strip(), [v.strip() for v in values.split(",") if v.strip()], modes)
        seeds = parse_seeds(args.seeds) if args.seeds is not None else list(cfg.run.seeds)
        if args.jobs < 1:
            raise ConfigError(ConfigError.RANGE, "--jobs must be >= 1")
        out = args.out or default_output_root()
        # validate every point before running anything
        for p in points:
            cfg.replace(run=p.overrides)
        _, failures = run_sweep(cfg, points, seeds, out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if failures:
        print(f"{failures} sweep run(s) failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
