"""Dense convex QP solver.

Solves

    min  0.5 x'Hx + f'x
    s.t. G x <= h
         A x  = b

for symmetric positive definite H with the Goldfarb-Idnani dual active-set
method.  Equality constraints are eliminated through a null-space basis before
the inequality phase, so the active-set loop only ever sees inequalities.
Everything is deterministic: the most violated constraint is added first, ties
broken by the lowest index.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200


class QpError(RuntimeError):
    """Base class for solver failures."""


class Infeasible(QpError):
    """The constraints admit no point.

    When the inequality phase detects it, ``certificate`` holds Farkas
    multipliers ``w >= 0`` (one per inequality row) with ``G'w = 0`` on the
    equality null space and ``h'w < 0``.
    """

    def __init__(self, message, x=None, certificate=None):
        super().__init__(message)
        self.x = x
        self.certificate = certificate


class NotConverged(QpError):
    def __init__(self, message, x=None, residual=np.inf):
        super().__init__(message)
        self.x = x
        self.residual = residual


def _as_matrix(a, ncols, name):
    if a is None:
        return np.zeros((0, ncols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, ncols))
    if a.shape[1] != ncols:
        raise ValueError(f"{name} must have {ncols} columns, got shape {a.shape}")
    return a


def _as_vector(v, n, name):
    if v is None:
        if n:
            raise ValueError(f"{name} is required")
        return np.zeros(0)
    v = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
    if v.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class QpProblem:
    """Strictly convex QP ``min 0.5 x'Hx + f'x  s.t. Gx <= h, Ax = b``.

    H is symmetrized on construction and must be positive definite.
    """

    H: np.ndarray
    f: np.ndarray
    G: np.ndarray = None
    h: np.ndarray = None
    A: np.ndarray = None
    b: np.ndarray = None
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError(f"H must be square, got shape {H.shape}")
        n = H.shape[0]
        H = 0.5 * (H + H.T)
        f = _as_vector(self.f, n, "f")
        G = _as_matrix(self.G, n, "G")
        h = _as_vector(self.h, G.shape[0], "h")
        A = _as_matrix(self.A, n, "A")
        b = _as_vector(self.b, A.shape[0], "b")
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise ValueError("H is not positive definite") from None
        if np.any(np.diag(L) <= 0.0):
            raise ValueError("H is not positive definite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "chol", L)

    @property
    def n(self):
        return self.H.shape[0]

    @property
    def m(self):
        return self.G.shape[0]

    @property
    def q(self):
        return self.A.shape[0]

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x @ self.H @ x + self.f @ x


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    duals: np.ndarray
    eq_duals: np.ndarray
    active_set: tuple
    kkt_residual: float
    iterations: int
    solve_time: float

    @property
    def multipliers(self):
        return self.duals


def kkt_residual(problem, x, duals, eq_duals=None, H=None):
    """Infinity-norm KKT residual of ``(x, duals)`` for ``problem``.

    The maximum of stationarity ``|Hx + f + G'mu + A'nu|``, primal
    infeasibility, negativity of ``mu`` and complementarity ``|mu_i (Gx-h)_i|``.
    ``H`` overrides the problem Hessian, which lets callers evaluate the
    residual of a semidefinite problem solved through a regularized one.
    """
    H = problem.H if H is None else np.asarray(H, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    mu = np.asarray(duals, dtype=float).ravel()
    if x.shape[0] != problem.n:
        raise ValueError(f"x must have length {problem.n}")
    if mu.shape[0] != problem.m:
        raise ValueError(f"duals must have length {problem.m}")
    nu = np.zeros(problem.q) if eq_duals is None else np.asarray(eq_duals, dtype=float).ravel()
    if nu.shape[0] != problem.q:
        raise ValueError(f"eq_duals must have length {problem.q}")

    grad = H @ x + problem.f + problem.G.T @ mu + problem.A.T @ nu
    parts = [np.max(np.abs(grad), initial=0.0)]
    if problem.m:
        slack = problem.G @ x - problem.h
        parts.append(np.max(slack, initial=0.0))
        parts.append(np.max(-mu, initial=0.0))
        parts.append(np.max(np.abs(mu * slack), initial=0.0))
    if problem.q:
        parts.append(np.max(np.abs(problem.A @ x - problem.b), initial=0.0))
    return float(max(parts))


def _eliminate_equalities(problem):
    """Return (x_p, Z) with {x : Ax = b} = {x_p + Z y}."""
    n = problem.n
    if problem.q == 0:
        return np.zeros(n), np.eye(n)
    A, b = problem.A, problem.b
    U, s, Vt = np.linalg.svd(A)
    rank = int(np.sum(s > max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)))
    x_p = Vt[:rank].T @ ((U[:, :rank].T @ b) / s[:rank])
    if np.max(np.abs(A @ x_p - b)) > 1e-9 * (1.0 + np.max(np.abs(b))):
        raise Infeasible("equality constraints are inconsistent", x=x_p)
    return x_p, Vt[rank:].T


def _dual_active_set(H, f, G, h, max_iter):
    """Goldfarb-Idnani iterations on ``min 0.5y'Hy + f'y s.t. Gy <= h``.

    Returns (y, active, mu_active, iterations).
    """
    n = H.shape[0]
    L = np.linalg.cholesky(H)
    Linv = linalg.solve_triangular(L, np.eye(n), lower=True)
    y = -Linv.T @ (Linv @ f)
    active = []
    mu = np.zeros(0)
    iterations = 0
    if n == 0:
        if G.shape[0] and np.max(-h) > 0:
            raise Infeasible("constraint infeasible on a zero-dimensional feasible set", x=y)
        return y, active, mu, 0

    row_norms = np.linalg.norm(G, axis=1)
    while True:
        viol = G @ y - h
        thresh = 1e-12 * (1.0 + np.abs(h) + row_norms * np.linalg.norm(y))
        candidates = viol > thresh
        candidates[active] = False
        if not np.any(candidates):
            return y, active, mu, iterations
        masked = np.where(candidates, viol, -np.inf)
        p = int(np.argmax(masked))
        n_p = -G[p]
        mu_p = 0.0

        while True:
            iterations += 1
            if iterations > max_iter:
                raise NotConverged(f"exceeded {max_iter} active-set iterations", x=y)
            d = Linv @ n_p
            q = len(active)
            if q:
                B = Linv @ (-G[active].T)
                Qf, Rf = np.linalg.qr(B, mode="complete")
                Q1, Q2 = Qf[:, :q], Qf[:, q:]
                z = Linv.T @ (Q2 @ (Q2.T @ d))
                r = linalg.solve_triangular(Rf[:q, :q], Q1.T @ d)
            else:
                z = Linv.T @ d
                r = np.zeros(0)

            t1, k = np.inf, -1
            for j in range(q):
                if r[j] > 1e-14:
                    ratio = mu[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j

            # zn = |Q2'd|^2: the part of the new normal outside the span of
            # the active normals; below a 1e-10 relative norm it is dependent
            zn = float(z @ n_p)
            if zn > 1e-20 * float(d @ d):
                t2 = (G[p] @ y - h[p]) / zn
            else:
                t2 = np.inf

            t = min(t1, t2)
            if not np.isfinite(t):
                # n_p lies in the span of the active normals with r <= 0, so
                # G_p - G_active' r = 0 combines rows with nonnegative weights
                w = np.zeros(G.shape[0])
                w[p] = 1.0
                if q:
                    w[active] = np.maximum(-r, 0.0)
                raise Infeasible(f"constraint {p} cannot be satisfied", x=y, certificate=w)
            if np.isinf(t2):
                mu = mu - t * r
                mu_p += t
                del active[k]
                mu = np.delete(mu, k)
                continue
            y = y + t * z
            mu = mu - t * r
            mu_p += t
            if t2 <= t1:
                active.append(p)
                mu = np.append(mu, mu_p)
                break
            del active[k]
            mu = np.delete(mu, k)


def _polish(H, f, G, h, active, y, mu):
    """Re-solve the KKT system on the final active set for a cleaner iterate."""
    if not active:
        return y, mu
    Ga = G[active]
    q = len(active)
    n = H.shape[0]
    K = np.block([[H, Ga.T], [Ga, np.zeros((q, q))]])
    rhs = np.concatenate([-f, h[active]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return y, mu
    y_new, mu_new = sol[:n], sol[n:]
    if not np.all(np.isfinite(sol)) or np.any(mu_new < -1e-10):
        return y, mu
    scale = 1.0 + np.max(np.abs(h), initial=0.0)
    if G.shape[0] and np.max(G @ y_new - h) > 1e-10 * scale:
        return y, mu
    return y_new, np.maximum(mu_new, 0.0)


def solve(problem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solve ``problem`` to a KKT residual of at most ``tol``.

    Raises
    ------
    Infeasible
        The constraint set is empty.
    NotConverged
        ``max_iter`` active-set changes were exhausted, or the final KKT
        residual exceeds ``tol``.  The exception carries the best iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    start = time.perf_counter()
    x_p, Z = _eliminate_equalities(problem)
    Hr = Z.T @ problem.H @ Z
    fr = Z.T @ (problem.f + problem.H @ x_p)
    Gr = problem.G @ Z
    hr = problem.h - problem.G @ x_p

    if Z.shape[1] == 0:
        y, active, mu_a, iterations = np.zeros(0), [], np.zeros(0), 0
        if problem.m and np.max(problem.G @ x_p - problem.h) > 1e-12 * (1 + np.max(np.abs(problem.h))):
            raise Infeasible("inequalities violated at the unique equality solution", x=x_p)
    else:
        y, active, mu_a, iterations = _dual_active_set(Hr, fr, Gr, hr, max_iter)
        y, mu_a = _polish(Hr, fr, Gr, hr, active, y, mu_a)

    x = x_p + Z @ y
    duals = np.zeros(problem.m)
    if active:
        duals[active] = mu_a
    if problem.q:
        rhs = -(problem.H @ x + problem.f + problem.G.T @ duals)
        eq_duals = np.linalg.lstsq(problem.A.T, rhs, rcond=None)[0]
    else:
        eq_duals = np.zeros(0)

    res = kkt_residual(problem, x, duals, eq_duals)
    elapsed = time.perf_counter() - start
    if res > tol:
        raise NotConverged(f"KKT residual {res:.3e} above tolerance {tol:.1e}", x=x, residual=res)
    return QpSolution(
        x=x,
        duals=duals,
        eq_duals=eq_duals,
        active_set=tuple(sorted(active)),
        kkt_residual=res,
        iterations=iterations,
        solve_time=elapsed,
    )


def dump_problem(problem, path):
    """Write (H, f, G, h, A, b) as comma-delimited text blocks for cross-checking."""
    lines = []
    for name in ("H", "f", "G", "h", "A", "b"):
        arr = np.atleast_2d(getattr(problem, name))
        if name in ("f", "h", "b"):
            arr = arr.reshape(1, -1)
        lines.append(f"# {name} {arr.shape[0]}x{arr.shape[1]}")
        for row in arr:
            lines.append(",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
