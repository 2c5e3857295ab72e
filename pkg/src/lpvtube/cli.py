"""Command-line entry point.

    lpvtube simulate --config cfg.json --out runs/x [--steps K] [--no-tubes]
    lpvtube tube --trace runs/x --k 1
    lpvtube check --trace runs/x

Exit codes: 0 success, 1 configuration/solver/file error, 2 containment
violation.  Set ``LPVTUBE_LOG`` (e.g. ``DEBUG``) for log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import tube as tb
from .bench import read_prediction_csv, read_trace_csv, run_benchmark
from .config import ConfigError, load_config, parse_config
from .lpv import ClosedLoopModel, disk_model, simulate_true

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def cmd_simulate(config_path=None, out_dir=None, steps=None, with_tubes=True):
    try:
        if config_path is None:
            scenario, cfg_out = parse_config({})
        else:
            scenario, cfg_out = load_config(config_path)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_ERROR
    out_dir = out_dir or cfg_out
    if out_dir is None:
        _err("no output directory: pass --out or set output_dir in the config")
        return EXIT_ERROR
    if steps is not None:
        if steps < 1:
            _err("--steps must be at least 1")
            return EXIT_ERROR
        scenario = dataclasses.replace(scenario, steps=steps)
    scenario = dataclasses.replace(scenario, with_tubes=with_tubes and scenario.with_tubes)

    summary = run_benchmark(scenario, out_dir=out_dir)
    if summary.status != "ok":
        _err(summary.error or "benchmark failed")
        return EXIT_ERROR
    x = summary.trace.final_state
    timing = summary.manifest["timing"]
    line = (f"final state theta={x[0]:.6g} omega={x[1]:.6g}; "
            f"mean QP time {timing['mean_qp_time'] * 1e3:.3f} ms")
    if summary.reports:
        line += (f"; containment {100 * summary.containment_rate:.2f}% "
                 f"({summary.containment_passed}/{summary.containment_pairs})")
    print(line)
    if summary.reports and not summary.all_contained:
        viol = summary.manifest["containment"]["violations"]
        _err(f"containment violated at (k, i) = {viol}")
        return EXIT_VIOLATION
    return EXIT_OK


def _load_run(trace_dir):
    d = Path(trace_dir)
    man_path = d / "manifest.json"
    if not man_path.is_file():
        raise FileNotFoundError(f"no manifest.json in {d}")
    manifest = json.loads(man_path.read_text())
    if "synthesis" not in manifest:
        raise ValueError("manifest has no synthesis record")
    scenario, _ = parse_config(manifest["parameters"])
    closed = ClosedLoopModel(disk_model(scenario.disk), np.array(manifest["synthesis"]["K"]))
    tcfg = tb.TubeConfig(delta1=manifest["delta1"], xi_interval=tuple(scenario.tube.xi_interval))
    return d, manifest, scenario, closed, tcfg


def cmd_tube(trace_dir, k):
    """Recompute the tube of step ``k`` from the recorded prediction."""
    try:
        d, _, _, closed, tcfg = _load_run(trace_dir)
        pred = d / f"pred_k{k}.csv"
        if not pred.is_file():
            raise FileNotFoundError(f"no prediction file for step {k}")
        xhat, _, p_hat = read_prediction_csv(pred)
        tube = tb.tube_recursion(tb.disk_error_operators(closed), tcfg, p_hat, xhat, k=k)
    except (OSError, ValueError, KeyError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    out = d / f"tube_k{k}_recomputed.csv"
    tb.write_tube_csv(out, tube)
    counts = " ".join(str(len(E)) for E in tube.polytopes)
    print(f"step {k}: {len(tube)} sets, vertex counts {counts}; written to {out}")
    return EXIT_OK


def cmd_check(trace_dir):
    """Re-certify containment for every recorded step.

    True responses are re-simulated from the recorded states and inputs with
    the recorded gain; tubes are read from the tube files (recomputed when a
    file is missing).
    """
    try:
        d, _, scenario, closed, tcfg = _load_run(trace_dir)
        rows = read_trace_csv(d / "trace.csv")
        ops = tb.disk_error_operators(closed)
        violations, checked, prev_true = [], 0, None
        for row in rows:
            k = row["k"]
            pred = d / f"pred_k{k}.csv"
            if not pred.is_file():
                raise FileNotFoundError(f"missing prediction file for step {k}")
            xhat, inputs, p_hat = read_prediction_csv(pred)
            x_k = np.array([row["theta"], row["omega"]])
            true_states = simulate_true(closed, x_k, inputs)
            tube_path = d / f"tube_k{k}.csv"
            tube = (tb.read_tube_csv(tube_path, k) if tube_path.is_file()
                    else tb.tube_recursion(ops, tcfg, p_hat, xhat, k=k))
            anchors = None if prev_true is None else prev_true[1:]
            rep = tb.certify_containment(tube, true_states, scenario.tube.containment_tol,
                                         anchors=anchors, delta1=tcfg.delta1)
            checked += len(rep.rows)
            violations += [(k, i) for i in rep.violations]
            prev_true = true_states
    except (OSError, ValueError, KeyError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    if not rows:
        _err("trace is empty")
        return EXIT_ERROR
    if violations:
        _err(f"containment violated at (k, i) = {violations}")
        return EXIT_VIOLATION
    print(f"containment verified for {checked} (k, i) pairs over {len(rows)} steps")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="lpvtube", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the disk benchmark")
    sim.add_argument("--config", type=Path, default=None)
    sim.add_argument("--out", type=Path, default=None)
    sim.add_argument("--steps", type=int, default=None)
    sim.add_argument("--no-tubes", action="store_true")

    tub = sub.add_parser("tube", help="recompute the error tube of one step")
    tub.add_argument("--trace", type=Path, required=True)
    tub.add_argument("--k", type=int, required=True)

    chk = sub.add_parser("check", help="re-certify containment for a finished run")
    chk.add_argument("--trace", type=Path, required=True)
    return parser


def main(argv=None):
    level = os.environ.get("LPVTUBE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.steps, not args.no_tubes)
    if args.command == "tube":
        return cmd_tube(args.trace, args.k)
    return cmd_check(args.trace)


if __name__ == "__main__":
    sys.exit(main())
