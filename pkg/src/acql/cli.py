"""Command line entry point: ``acql run | sweep | report``."""
from __future__ import annotations

import argparse
import copy
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from acql import harness
from acql.errors import AcqlError

log = logging.getLogger("acql")

LOG_ENV = "ACQL_LOG_LEVEL"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def parse_range(text: str) -> list[float]:
    """``start:stop:step`` inclusive of both ends; a bare number is a single value."""
    parts = [float(p) for p in text.split(":")]
    if len(parts) == 1:
        return parts
    if len(parts) != 3 or parts[2] <= 0.0 or parts[1] < parts[0]:
        raise ValueError(f"bad range {text!r}; expected start:stop:step with step > 0")
    start, stop, step = parts
    n = int(math.floor((stop - start) / step + 1e-9))
    values = [round(start + i * step, 10) for i in range(n + 1)]
    if stop - values[-1] > 1e-9:
        values.append(stop)
    return values


def _sweep_one(job):
    base, plc, out_dir, seed = job
    scenario = copy.deepcopy(base)
    robot_mass = harness.rm.load_robot(scenario.robot_file).total_mass
    scenario.payload = replace(scenario.payload, m_p=plc * robot_mass)
    scenario.name = f"{base.name}_{plc:.2f}"
    try:
        _, summary = harness.run_and_write(scenario, out_dir, seed=seed)
        return plc, summary, None
    except AcqlError as exc:
        return plc, None, str(exc)


def cmd_run(args) -> int:
    scenario = harness.load_scenario(args.scenario)
    out = Path(args.out) if args.out else (scenario.output_dir or Path("runs") / scenario.name)
    _, summary = harness.run_and_write(scenario, out, seed=args.seed, dump_qp=args.dump_qp)
    sys.stdout.write(summary.table())
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = harness.load_scenario(args.scenario)
    values = parse_range(args.plc)
    out = Path(args.out)
    jobs = [(base, plc, out / f"plc_{plc:.2f}", args.seed) for plc in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(job) for job in jobs]
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    with open(out / "sweep.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plc", "convergence_time", "rmse_position", "rmse_orientation", "mass_error_final", "error"])
        for plc, summary, err in results:
            if summary is None:
                failed += 1
                w.writerow([f"{plc:.2f}", "nan", "nan", "nan", "nan", err])
                continue
            w.writerow([
                f"{plc:.2f}", harness._fmt(summary.convergence_time), harness._fmt(summary.rmse_position),
                harness._fmt(summary.rmse_orientation), harness._fmt(summary.mass_error_final), "",
            ])
    sys.stdout.write((out / "sweep.csv").read_text(encoding="ascii"))
    return EXIT_FAIL if failed else EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.input)
    logs = sorted(root.rglob("log.csv"))
    if not logs:
        sys.stderr.write(f"acql: no log.csv found under {root}\n")
        return EXIT_USAGE
    rows = []
    for path in logs:
        run = harness.read_csv(path)
        run.meta["name"] = path.parent.name
        rows.append(harness.summarize_run(run))
    keys = ["name", "convergence_time", "rmse_position", "rmse_orientation", "max_orientation_dev",
            "qp_optimal", "qp_max_kkt"]
    with open(root / "report.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for summary in rows:
            w.writerow([summary.name] + [harness._fmt(getattr(summary, k)) if isinstance(getattr(summary, k), float)
                                         else getattr(summary, k) for k in keys[1:]])
    width = max(len(s.name) for s in rows)
    lines = [f"{'run'.ljust(width)}  conv_time  rmse_pos   rmse_ori"]
    for s in rows:
        lines.append(f"{s.name.ljust(width)}  {s.convergence_time:9.3f}  {s.rmse_position:.3e}  {s.rmse_orientation:.3e}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acql", description="Payload identification and quadruped control runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--scenario", required=True, help="scenario YAML file or bundled scenario name")
    run.add_argument("--out", help="output directory (default: the scenario's output entry)")
    run.add_argument("--seed", type=int, default=None, help="noise seed, overrides the scenario")
    run.add_argument("--dump-qp", action="store_true", help="write every distribution QP to qp_dump.txt")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="payload capacity sweep")
    sweep.add_argument("--plc", default="0.4:1.5:0.1", help="start:stop:step payload-to-robot mass ratios")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--scenario", default="plc_base", help="base scenario (default: bundled plc_base)")
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="summarise every run found under a directory")
    report.add_argument("--in", dest="input", required=True)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"acql: {exc}\n")
        return EXIT_USAGE
    except (ValueError, TypeError) as exc:
        sys.stderr.write(f"acql: bad configuration: {exc}\n")
        return EXIT_USAGE
    except AcqlError as exc:
        sys.stderr.write(f"acql: run failed: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
