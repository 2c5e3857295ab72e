"""Offline synthesis of the stabilizing gain and the terminal weight."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SynthesisError(RuntimeError):
    pass


def spectral_radius(M):
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def dare_residual(A, B, Q, R, P):
    BtPA = B.T @ P @ A
    rhs = A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
    return float(np.max(np.abs(rhs - P)))


def solve_dare(A, B, Q, R, tol=1e-10, max_iter=100_000):
    """Value iteration on the discrete algebraic Riccati equation.

    Starts at ``P = Q`` and iterates
    ``P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q`` until successive iterates agree
    to ``tol`` in the max norm.  Returns ``(P, K)`` with ``K`` chosen so that
    the closed loop is ``A + BK``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
        raise SynthesisError("R must be positive definite")

    P = Q.copy()
    delta = np.inf
    for _ in range(max_iter):
        BtPA = B.T @ P @ A
        P_next = A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
        P_next = 0.5 * (P_next + P_next.T)
        delta = float(np.max(np.abs(P_next - P)))
        P = P_next
        if not np.isfinite(delta):
            break
        if delta <= tol:
            K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return P, K
    raise SynthesisError(f"Riccati iteration did not converge (last change {delta:.3e})")


def lyapunov_residual(A_cl, Q_bar, P):
    return float(np.max(np.abs(A_cl.T @ P @ A_cl - P + Q_bar)))


def solve_discrete_lyapunov(A_cl, Q_bar, tol=1e-12, max_iter=200):
    """``P = sum_k (A')^k Q_bar A^k``, summed by repeated squaring.

    Each doubling step adds the next ``2^j`` terms of the series; the loop
    stops once the added block is below ``tol``.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    Q_bar = np.atleast_2d(np.asarray(Q_bar, dtype=float))
    if spectral_radius(A_cl) >= 1.0:
        raise SynthesisError("Lyapunov summation needs a Schur-stable matrix")
    P = Q_bar.copy()
    Ak = A_cl.copy()
    for _ in range(max_iter):
        term = Ak.T @ P @ Ak
        P = P + term
        Ak = Ak @ Ak
        if np.max(np.abs(term)) <= tol * max(1.0, np.max(np.abs(P))):
            return 0.5 * (P + P.T)
    raise SynthesisError("Lyapunov summation did not converge")


@dataclass(frozen=True)
class SynthesisResult:
    K: np.ndarray
    P: np.ndarray
    P_riccati: np.ndarray
    riccati_residual: float
    lyapunov_residual: float
    p_nominal: np.ndarray
    spectral_radii: list = field(default_factory=list)

    @property
    def max_spectral_radius(self):
        return max(r for _, r in self.spectral_radii)


def robust_lpv_gain(model, Q, R, p_grid, p_nominal=None, tol=1e-12):
    """Riccati gain at a nominal scheduling value, certified on ``p_grid``.

    The gain is computed for ``A(p_nominal)``; then ``rho(A(p) + BK) < 1`` is
    checked at every grid point.  The terminal weight solves the Lyapunov
    equation of the nominal closed loop with ``Q + K'RK``.
    """
    p_grid = [np.atleast_1d(np.asarray(p, dtype=float)) for p in p_grid]
    if not p_grid:
        raise ValueError("p_grid must not be empty")
    if p_nominal is None:
        p_nominal = np.ones(model.n_p)
    p_nominal = np.atleast_1d(np.asarray(p_nominal, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))

    A_nom = model.eval_A(p_nominal)
    P_ric, K = solve_dare(A_nom, model.B, Q, R, tol=tol)
    radii = []
    bad = []
    for p in p_grid:
        r = spectral_radius(model.eval_A(p) + model.B @ K)
        radii.append((p.copy(), r))
        if r >= 1.0:
            bad.append((p.tolist(), r))
    if bad:
        raise SynthesisError(f"closed loop not Schur stable at scheduling values {bad}")

    A_cl = A_nom + model.B @ K
    Q_bar = Q + K.T @ R @ K
    P = solve_discrete_lyapunov(A_cl, Q_bar)
    return SynthesisResult(
        K=K,
        P=P,
        P_riccati=P_ric,
        riccati_residual=dare_residual(A_nom, model.B, Q, R, P_ric),
        lyapunov_residual=lyapunov_residual(A_cl, Q_bar, P),
        p_nominal=p_nominal,
        spectral_radii=radii,
    )
