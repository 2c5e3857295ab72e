"""Unbalanced-disk regulator benchmark: scenario, full pipeline and run outputs."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tube as tb
from .lpv import ClosedLoopModel, DiskParams, disk_model, sinc, write_trajectory_csv
from .mpc import MpcConfig, MpcError, run_closed_loop
from .synthesis import robust_lpv_gain

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
TEN_PI = 10.0 * math.pi


@dataclass
class MpcSettings:
    N: int = 10
    Q: list = field(default_factory=lambda: [[8.0, 0.0], [0.0, 0.1]])
    R: list = field(default_factory=lambda: [[0.5]])
    state_lower: list = field(default_factory=lambda: [-TWO_PI, -TEN_PI])
    state_upper: list = field(default_factory=lambda: [TWO_PI, TEN_PI])
    input_lower: list = field(default_factory=lambda: [-10.0])
    input_upper: list = field(default_factory=lambda: [10.0])
    max_iter_inner: int = 1
    eps_inner: float = 1e-7
    max_iter_inner_first_step: int = 10
    warm_start_steps: int = 1
    constrain_total_input: bool = True
    qp_tol: float = 1e-8
    qp_max_iter: int = 200


@dataclass
class TubeSettings:
    delta1: float | None = None  # None: t_s times the speed bound
    xi_interval: list = field(default_factory=lambda: [math.pi, TWO_PI])
    containment_tol: float = 1e-8


@dataclass
class SynthesisSettings:
    p_nominal: float = 1.0
    grid_points: int = 41
    grid_theta_range: list = field(default_factory=lambda: [-TWO_PI, TWO_PI])


@dataclass
class RegulationSettings:
    theta_tol: float = 0.05
    omega_tol: float = 0.5


@dataclass
class BenchmarkScenario:
    disk: DiskParams = field(default_factory=DiskParams)
    x0: list = field(default_factory=lambda: [-6.0, 0.0])
    x_ref: list = field(default_factory=lambda: [0.0, 0.0])
    steps: int = 100
    mpc: MpcSettings = field(default_factory=MpcSettings)
    tube: TubeSettings = field(default_factory=TubeSettings)
    synthesis: SynthesisSettings = field(default_factory=SynthesisSettings)
    regulation: RegulationSettings = field(default_factory=RegulationSettings)
    with_tubes: bool = True
    enforce_delta1_in_qp: bool = False
    seed: int = 0

    @property
    def delta1(self):
        if self.tube.delta1 is not None:
            return float(self.tube.delta1)
        return self.disk.t_s * float(self.mpc.state_upper[1])

    def as_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def default_scenario():
    """Default disk parameters, bounds and weights, x0 = (-6, 0), origin reference."""
    return BenchmarkScenario()


@dataclass
class Pipeline:
    model: object
    synthesis: object
    closed_loop: ClosedLoopModel
    mpc: MpcConfig
    tube: tb.TubeConfig
    ops: tb.ErrorOperators


def scheduling_grid(scenario):
    lo, hi = scenario.synthesis.grid_theta_range
    return [np.array([sinc(t)]) for t in np.linspace(lo, hi, scenario.synthesis.grid_points)]


def build_pipeline(scenario):
    """Model, synthesized K and P, MPC and tube configurations."""
    model = disk_model(scenario.disk)
    s = scenario.mpc
    syn = robust_lpv_gain(model, s.Q, s.R, scheduling_grid(scenario),
                          p_nominal=[scenario.synthesis.p_nominal])
    closed = ClosedLoopModel(model, syn.K)
    delta1 = scenario.delta1
    cfg = MpcConfig(
        N=s.N, Q=s.Q, R=s.R, P=syn.P,
        state_lower=s.state_lower, state_upper=s.state_upper,
        input_lower=s.input_lower, input_upper=s.input_upper,
        max_iter_inner=s.max_iter_inner, eps_inner=s.eps_inner,
        max_iter_inner_first_step=s.max_iter_inner_first_step,
        warm_start_steps=s.warm_start_steps,
        constrain_total_input=s.constrain_total_input,
        delta1=delta1, enforce_delta1=scenario.enforce_delta1_in_qp,
        qp_tol=s.qp_tol, qp_max_iter=s.qp_max_iter,
    )
    tcfg = tb.TubeConfig(delta1=delta1, xi_interval=tuple(scenario.tube.xi_interval))
    ops = tb.disk_error_operators(closed)
    return Pipeline(model, syn, closed, cfg, tcfg, ops)


@dataclass
class BenchmarkSummary:
    status: str
    scenario: BenchmarkScenario
    pipeline: Pipeline | None = None
    trace: object = None
    reports: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def containment_pairs(self):
        return sum(len(r.rows) for r in self.reports)

    @property
    def containment_passed(self):
        return sum(r.contained for rep in self.reports for r in rep.rows)

    @property
    def containment_rate(self):
        n = self.containment_pairs
        return self.containment_passed / n if n else float("nan")

    @property
    def premise_rate(self):
        n = self.containment_pairs
        return sum(r.premise_ok for rep in self.reports for r in rep.rows) / n if n else float("nan")

    @property
    def all_contained(self):
        return all(rep.passed for rep in self.reports)


def _fmt(v):
    return f"{float(v):.17g}"


def write_trace_csv(path, trace):
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "theta", "omega", "u", "p_realized", "cost", "inner_iters", "qp_time"])
        for s in trace.steps:
            w.writerow([s.k, _fmt(s.x[0]), _fmt(s.x[1]), _fmt(s.u[0]), _fmt(s.p_realized[0]),
                        _fmt(s.result.cost), s.result.inner_iterations, _fmt(s.result.solve_time)])


def read_trace_csv(path):
    with open(Path(path), newline="") as fh:
        return [{k: (int(v) if k in ("k", "inner_iters") else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def write_prediction_csv(path, result):
    N = len(result.inputs)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "xhat1", "xhat2", "u", "phat"])
        for i, x in enumerate(result.predicted_states):
            u = _fmt(result.inputs[i][0]) if i < N else ""
            p = _fmt(result.scheduling_used[i][0]) if i < N else ""
            w.writerow([i, _fmt(x[0]), _fmt(x[1]), u, p])


def read_prediction_csv(path):
    """Returns ``(xhat, inputs, p_hat)`` arrays."""
    xs, us, ps = [], [], []
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            xs.append([float(row["xhat1"]), float(row["xhat2"])])
            if row["u"] != "":
                us.append([float(row["u"])])
                ps.append([float(row["phat"])])
    return np.array(xs), np.array(us), np.array(ps)


def _matrix(a):
    return np.atleast_2d(np.asarray(a, dtype=float)).tolist()


def build_manifest(summary):
    sc = summary.scenario
    man = {
        "status": summary.status,
        "config_hash": sc.config_hash(),
        "parameters": sc.as_dict(),
        "delta1": sc.delta1,
    }
    if summary.error:
        man["error"] = summary.error
    pipe = summary.pipeline
    if pipe is not None:
        syn = pipe.synthesis
        man["synthesis"] = {
            "K": _matrix(syn.K),
            "P": _matrix(syn.P),
            "P_riccati": _matrix(syn.P_riccati),
            "riccati_residual": syn.riccati_residual,
            "lyapunov_residual": syn.lyapunov_residual,
            "p_nominal": np.asarray(syn.p_nominal).tolist(),
            "certification_grid": [[float(p[0]), r] for p, r in syn.spectral_radii],
            "max_spectral_radius": syn.max_spectral_radius,
        }
    tr = summary.trace
    if tr is not None and len(tr):
        times = tr.qp_times
        mean_t = statistics.fmean(times)
        man["timing"] = {
            "qp_solves": len(times),
            "mean_qp_time": mean_t,
            "max_qp_time": max(times),
            "mean_inner_iterations": statistics.fmean(s.result.inner_iterations for s in tr.steps),
            "sampling_time": sc.disk.t_s,
            "real_time_ok": mean_t < sc.disk.t_s,
        }
        man["steps_completed"] = len(tr)
        man["final_state"] = np.asarray(tr.final_state).tolist()
    if summary.reports:
        man["containment"] = {
            "pairs": summary.containment_pairs,
            "passed": summary.containment_passed,
            "rate": summary.containment_rate,
            "premise_rate": summary.premise_rate,
            "violations": [[rep.k, i] for rep in summary.reports for i in rep.violations],
        }
    return man


def write_outputs(summary, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr = summary.trace
    if tr is not None and len(tr):
        write_trace_csv(out / "trace.csv", tr)
        write_trajectory_csv(out / "trajectory.csv", tr.states, tr.inputs,
                             [s.p_realized for s in tr.steps])
        for s in tr.steps:
            write_prediction_csv(out / f"pred_k{s.k}.csv", s.result)
            if s.tube is not None:
                tb.write_tube_csv(out / f"tube_k{s.k}.csv", s.tube)
    for rep in summary.reports:
        tb.write_containment_csv(out / f"containment_k{rep.k}.csv", rep)
    summary.manifest = build_manifest(summary)
    (out / "manifest.json").write_text(json.dumps(summary.manifest, indent=2, sort_keys=True) + "\n")


def certify_trace(trace, tube_cfg, tol):
    reports = []
    for s in trace.steps:
        if s.tube is None:
            continue
        reports.append(tb.certify_containment(
            s.tube, s.true_states, tol, anchors=s.result.scheduling_source, delta1=tube_cfg.delta1))
    return reports


def run_benchmark(scenario=None, with_tubes=None, out_dir=None):
    """Synthesize, run the closed loop, build and certify tubes, write outputs.

    Any failure leaves ``status = "failed"`` with whatever was produced so far
    written to ``out_dir``.
    """
    scenario = default_scenario() if scenario is None else scenario
    with_tubes = scenario.with_tubes if with_tubes is None else with_tubes
    summary = BenchmarkSummary(status="running", scenario=scenario)
    try:
        pipe = build_pipeline(scenario)
        summary.pipeline = pipe
        log.info("K = %s, max closed-loop spectral radius %.4f",
                 pipe.synthesis.K.tolist(), pipe.synthesis.max_spectral_radius)
        tube_fn = None
        if with_tubes:
            def tube_fn(p_hat, xhat):
                return tb.tube_recursion(pipe.ops, pipe.tube, p_hat, xhat)
        try:
            trace = run_closed_loop(pipe.closed_loop, pipe.mpc, scenario.x0, scenario.x_ref,
                                    scenario.steps, tube_fn=tube_fn)
        except MpcError as exc:
            summary.trace = exc.trace
            raise
        for s in trace.steps:
            if s.tube is not None:
                s.tube.k = s.k
        summary.trace = trace
        if with_tubes:
            summary.reports = certify_trace(trace, pipe.tube, scenario.tube.containment_tol)
        summary.status = "ok"
    except Exception as exc:
        summary.status = "failed"
        summary.error = f"{type(exc).__name__}: {exc}"
        log.error("benchmark failed: %s", summary.error)
    if out_dir is not None:
        write_outputs(summary, out_dir)
    else:
        summary.manifest = build_manifest(summary)
    return summary
