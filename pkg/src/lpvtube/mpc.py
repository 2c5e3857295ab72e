"""Condensed LPV-MPC and the receding-horizon loop with scheduling refinement.

Scheduling predictions are arrays of shape ``(N, n_p)``; state trajectories
are ``(N + 1, n_x)``; input sequences ``(N, n_u)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import qp
from .lpv import simulate_true


class MpcError(RuntimeError):
    def __init__(self, message, step=None, trace=None):
        super().__init__(message)
        self.step = step
        self.trace = trace


def _box(v, n, name):
    v = np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
    return v


@dataclass(frozen=True)
class MpcConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    state_lower: np.ndarray
    state_upper: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray
    max_iter_inner: int = 1
    eps_inner: float = 1e-7
    max_iter_inner_first_step: int = 10
    warm_start_steps: int = 1
    constrain_total_input: bool = True
    delta1: float | None = None
    enforce_delta1: bool = False
    qp_tol: float = qp.DEFAULT_TOL
    qp_max_iter: int = qp.DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n_x, n_u = Q.shape[0], R.shape[0]
        if Q.shape != (n_x, n_x) or P.shape != (n_x, n_x) or R.shape != (n_u, n_u):
            raise ValueError("weight matrices have inconsistent shapes")
        for name, M in (("Q", Q), ("P", P)):
            if np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
            raise ValueError("R must be positive definite")
        xl, xu = _box(self.state_lower, n_x, "state"), _box(self.state_upper, n_x, "state")
        ul, uu = _box(self.input_lower, n_u, "input"), _box(self.input_upper, n_u, "input")
        if np.any(xl >= xu) or np.any(ul >= uu):
            raise ValueError("lower bounds must be below upper bounds")
        if self.max_iter_inner < 1 or self.max_iter_inner_first_step < 1:
            raise ValueError("inner iteration counts must be at least 1")
        if self.enforce_delta1 and not (self.delta1 and self.delta1 > 0):
            raise ValueError("enforce_delta1 needs a positive delta1")
        for name, val in (("Q", Q), ("R", R), ("P", P), ("state_lower", xl), ("state_upper", xu),
                          ("input_lower", ul), ("input_upper", uu)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_x(self):
        return self.Q.shape[0]

    @property
    def n_u(self):
        return self.R.shape[0]


def prediction_matrices(model, p_hat):
    """Stacked ``X = Phi x_k + Gamma U`` for the scheduling sequence ``p_hat``.

    ``Phi`` has shape ``((N+1) n_x, n_x)`` and ``Gamma`` ``((N+1) n_x, N n_u)``.
    """
    p_hat = np.asarray(p_hat, dtype=float).reshape(len(p_hat), -1)
    N, n_x, n_u = p_hat.shape[0], model.n_x, model.n_u
    Phi = np.zeros(((N + 1) * n_x, n_x))
    Gamma = np.zeros(((N + 1) * n_x, N * n_u))
    Phi[:n_x] = np.eye(n_x)
    for i in range(N):
        A = model.eval_A(p_hat[i])
        rows, nxt = slice(i * n_x, (i + 1) * n_x), slice((i + 1) * n_x, (i + 2) * n_x)
        Phi[nxt] = A @ Phi[rows]
        Gamma[nxt] = A @ Gamma[rows]
        Gamma[nxt, i * n_u:(i + 1) * n_u] += model.B
    return Phi, Gamma


def predict_states(model, x_k, inputs, p_hat):
    """Roll ``x_{i+1} = A_c(p_i) x_i + B u_i`` forward from ``x_k``."""
    x = np.asarray(x_k, dtype=float).ravel()
    traj = [x]
    for u, p in zip(np.asarray(inputs, dtype=float).reshape(len(p_hat), -1), p_hat):
        x = model.step(x, u, p)
        traj.append(x)
    return np.array(traj)


def _reference(x_ref, N, n_x):
    r = np.asarray(x_ref, dtype=float)
    if r.ndim == 1:
        if r.shape[0] != n_x:
            raise ValueError(f"reference must have length {n_x}")
        return np.tile(r, (N + 1, 1))
    if r.shape != (N + 1, n_x):
        raise ValueError(f"reference sequence must have shape {(N + 1, n_x)}, got {r.shape}")
    return r


def _check_p_hat(p_hat, cfg, model):
    p_hat = np.asarray(p_hat, dtype=float)
    p_hat = p_hat.reshape(p_hat.shape[0], -1) if p_hat.ndim else p_hat.reshape(1, 1)
    if p_hat.shape != (cfg.N, model.n_p):
        raise ValueError(f"scheduling prediction must have shape {(cfg.N, model.n_p)}, got {p_hat.shape}")
    return p_hat


def build_condensed_qp(model, cfg, p_hat, x_k, x_ref, anchor=None):
    """Finite-horizon tracking QP with the states eliminated; decision variables are ``u_0..u_{N-1}``.

    Inequality rows, in order: state boxes for ``i = 0..N``, input boxes for
    ``i = 0..N-1`` (on ``K x_i + u_i`` when ``cfg.constrain_total_input``),
    and, when ``cfg.enforce_delta1`` and ``anchor`` are given,
    ``|x_i[0] - anchor_i[0]| <= delta1`` for ``i = 0..N-1``.
    """
    N, n_x, n_u = cfg.N, model.n_x, model.n_u
    if cfg.n_x != n_x or cfg.n_u != n_u:
        raise ValueError("configuration and model dimensions disagree")
    p_hat = _check_p_hat(p_hat, cfg, model)
    x_k = np.asarray(x_k, dtype=float).ravel()
    if x_k.shape[0] != n_x:
        raise ValueError(f"state must have length {n_x}")
    ref = _reference(x_ref, N, n_x).ravel()

    Phi, Gamma = prediction_matrices(model, p_hat)
    Qt = np.kron(np.eye(N + 1), cfg.Q)
    Qt[N * n_x:, N * n_x:] = cfg.P
    Rt = np.kron(np.eye(N), cfg.R)
    H = Gamma.T @ Qt @ Gamma + Rt
    f = Gamma.T @ Qt @ (Phi @ x_k - ref)

    free = Phi @ x_k
    G_rows, h_rows = [], []
    for i in range(N + 1):
        Gi = Gamma[i * n_x:(i + 1) * n_x]
        ci = free[i * n_x:(i + 1) * n_x]
        for j in range(n_x):
            if np.isfinite(cfg.state_upper[j]):
                G_rows.append(Gi[j])
                h_rows.append(cfg.state_upper[j] - ci[j])
            if np.isfinite(cfg.state_lower[j]):
                G_rows.append(-Gi[j])
                h_rows.append(ci[j] - cfg.state_lower[j])
    K = getattr(model, "K", None)
    for i in range(N):
        Ei = np.zeros((n_u, N * n_u))
        Ei[:, i * n_u:(i + 1) * n_u] = np.eye(n_u)
        ci = np.zeros(n_u)
        if cfg.constrain_total_input and K is not None:
            Ei = Ei + K @ Gamma[i * n_x:(i + 1) * n_x]
            ci = K @ free[i * n_x:(i + 1) * n_x]
        for j in range(n_u):
            if np.isfinite(cfg.input_upper[j]):
                G_rows.append(Ei[j])
                h_rows.append(cfg.input_upper[j] - ci[j])
            if np.isfinite(cfg.input_lower[j]):
                G_rows.append(-Ei[j])
                h_rows.append(ci[j] - cfg.input_lower[j])
    if cfg.enforce_delta1 and anchor is not None:
        anchor = np.asarray(anchor, dtype=float).reshape(N, n_x)
        for i in range(N):
            row = Gamma[i * n_x]
            G_rows.append(row)
            h_rows.append(cfg.delta1 + anchor[i, 0] - free[i * n_x])
            G_rows.append(-row)
            h_rows.append(cfg.delta1 - anchor[i, 0] + free[i * n_x])

    G = np.array(G_rows) if G_rows else np.zeros((0, N * n_u))
    h = np.array(h_rows)
    return qp.QpProblem(H, f, G, h)


def mpc_cost(cfg, states, inputs, x_ref):
    """Finite-horizon tracking objective evaluated on a trajectory."""
    N = cfg.N
    ref = _reference(x_ref, N, cfg.n_x)
    dx = np.asarray(states) - ref
    u = np.asarray(inputs).reshape(N, cfg.n_u)
    J = sum(dx[i] @ cfg.Q @ dx[i] + u[i] @ cfg.R @ u[i] for i in range(N))
    return float(J + dx[N] @ cfg.P @ dx[N])


@dataclass(frozen=True)
class MpcStepResult:
    u_applied: np.ndarray
    predicted_states: np.ndarray
    inputs: np.ndarray
    scheduling_used: np.ndarray
    scheduling_source: np.ndarray
    refreshed_scheduling: np.ndarray
    inner_iterations: int
    gamma_history: list
    cost: float
    solve_time: float
    qp_times: list


def mpc_step(model, cfg, p_hat, x_k, x_ref, max_iter=None, source=None):
    """One MPC step with scheduling refinement.

    Each inner pass solves the QP for the current ``p_hat``, rebuilds the
    scheduling from the resulting predicted trajectory and records
    ``gamma_j = |p_new - p_hat|_2`` over the stacked horizon.  The loop stops
    after ``max_iter`` passes or once ``gamma_j < cfg.eps_inner``; the last
    QP solution is returned together with the scheduling it was solved for.

    ``source`` is the trajectory ``p_hat`` was evaluated on (``p_hat[i] =
    rho(source[i])``); it is carried along so the error analysis can anchor
    its mean-value segments, and becomes the predicted trajectory of the
    previous pass whenever the loop refines.
    """
    max_iter = cfg.max_iter_inner if max_iter is None else max_iter
    p_hat = _check_p_hat(p_hat, cfg, model)
    x_k = np.asarray(x_k, dtype=float).ravel()
    N, n_u = cfg.N, model.n_u
    source = None if source is None else np.asarray(source, dtype=float).reshape(N, model.n_x)

    gammas, times = [], []
    for j in range(1, max_iter + 1):
        problem = build_condensed_qp(model, cfg, p_hat, x_k, x_ref, anchor=source)
        try:
            sol = qp.solve(problem, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
        except qp.QpError as exc:
            raise MpcError(f"QP failed at inner iteration {j}: {exc}") from exc
        times.append(sol.solve_time)
        inputs = sol.x.reshape(N, n_u)
        states = predict_states(model, x_k, inputs, p_hat)
        p_new = np.array([model.scheduling(states[i], inputs[i]) for i in range(N)])
        gamma = float(np.linalg.norm(p_new - p_hat))
        gammas.append(gamma)
        if j >= max_iter or gamma < cfg.eps_inner:
            break
        p_hat, source = p_new, states[:N]

    return MpcStepResult(
        u_applied=model.total_input(x_k, inputs[0]) if hasattr(model, "total_input") else inputs[0],
        predicted_states=states,
        inputs=inputs,
        scheduling_used=p_hat,
        scheduling_source=source,
        refreshed_scheduling=p_new,
        inner_iterations=len(gammas),
        gamma_history=gammas,
        cost=mpc_cost(cfg, states, inputs, x_ref),
        solve_time=float(sum(times)),
        qp_times=times,
    )


def shift_scheduling(p_hat_prev, model=None, last_prediction=None):
    """Drop index 0 and shift left.

    The freed final slot holds the last value, or, when ``model`` and a
    trajectory ``last_prediction`` of length ``N + 1`` are supplied,
    ``rho`` evaluated at its terminal state.
    """
    p = np.asarray(p_hat_prev, dtype=float)
    p = p.reshape(p.shape[0], -1)
    if p.shape[0] == 0:
        return p.copy()
    tail = p[-1]
    if model is not None and last_prediction is not None:
        tail = model.scheduling(np.asarray(last_prediction)[-1])
    return np.vstack([p[1:], tail[None, :]])


@dataclass
class StepRecord:
    k: int
    x: np.ndarray
    u: np.ndarray
    p_realized: np.ndarray
    result: MpcStepResult
    true_states: np.ndarray
    tube: object = None

    @property
    def errors(self):
        return self.true_states - self.result.predicted_states


@dataclass
class SimTrace:
    steps: list = field(default_factory=list)
    final_state: np.ndarray = None

    def __len__(self):
        return len(self.steps)

    @property
    def states(self):
        xs = [s.x for s in self.steps]
        if self.final_state is not None:
            xs.append(self.final_state)
        return np.array(xs)

    @property
    def inputs(self):
        return np.array([s.u for s in self.steps])

    @property
    def qp_times(self):
        return [t for s in self.steps for t in s.result.qp_times]


def run_closed_loop(model, cfg, x0, x_ref, steps, tube_fn=None):
    """Receding-horizon loop.

    The scheduling starts at ``rho(x0, 0)`` over the whole horizon.  After
    each step the true plant response to the planned inputs is simulated
    (the embedding is exact, so this is what the plant will do if the plan
    were applied in full) and the next prediction is its scheduling shifted
    by one: ``p_hat[i | k+1] = rho(x[i+1 | k])``.  ``tube_fn(p_hat, xhat)``,
    if given, is evaluated per step and stored with the record.

    On failure an :class:`MpcError` carrying the partial trace is raised.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x = np.asarray(x0, dtype=float).ravel()
    N = cfg.N
    p_hat = np.tile(model.scheduling(x), (N, 1))
    source = np.tile(x, (N, 1))
    trace = SimTrace()
    for k in range(steps):
        n_inner = cfg.max_iter_inner_first_step if k < cfg.warm_start_steps else cfg.max_iter_inner
        try:
            res = mpc_step(model, cfg, p_hat, x, x_ref, max_iter=n_inner, source=source)
            true_states = simulate_true(model, x, res.inputs)
            tube = tube_fn(res.scheduling_used, res.predicted_states) if tube_fn is not None else None
        except Exception as exc:
            trace.final_state = x
            raise MpcError(f"step {k}: {exc}", step=k, trace=trace) from exc
        u_tot = res.u_applied
        p_real = model.base.scheduling(x, u_tot) if hasattr(model, "base") else model.scheduling(x, u_tot)
        trace.steps.append(StepRecord(k, x, u_tot, p_real, res, true_states, tube))

        refreshed = np.array([model.scheduling(true_states[i], res.inputs[i]) for i in range(N)])
        p_hat = shift_scheduling(refreshed, model, last_prediction=true_states)
        source = true_states[1:]
        x = true_states[1]
    trace.final_state = x
    return trace


def with_overrides(cfg, **kw):
    return replace(cfg, **kw)
