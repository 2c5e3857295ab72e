import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_are
from scipy.linalg import solve_discrete_lyapunov as scipy_lyap

from lpvtube.lpv import AffineLpvModel, disk_model
from lpvtube.synthesis import (
    SynthesisError,
    dare_residual,
    lyapunov_residual,
    robust_lpv_gain,
    solve_dare,
    solve_discrete_lyapunov,
    spectral_radius,
)


def test_scalar_dare_closed_form():
    # p^2 - 0.25 p - 1 = 0 for a = 0.5, b = q = r = 1
    p_exact = (0.25 + math.sqrt(0.25**2 + 4.0)) / 2.0
    k_exact = -p_exact * 0.5 / (1.0 + p_exact)
    P, K = solve_dare([[0.5]], [[1.0]], [[1.0]], [[1.0]])
    assert P[0, 0] == pytest.approx(p_exact, abs=1e-9)
    assert K[0, 0] == pytest.approx(k_exact, abs=1e-9)
    assert p_exact == pytest.approx(1.13278, abs=1e-5)
    assert k_exact == pytest.approx(-0.26556, abs=1e-5)


def test_dare_without_input_is_lyapunov():
    P, K = solve_dare([[0.5]], [[0.0]], [[1.0]], [[1.0]])
    assert P[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-9)
    assert K[0, 0] == 0.0


def test_dare_deadbeat():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    P, K = solve_dare(np.zeros((2, 2)), np.array([[0.0], [1.0]]), Q, [[1.0]])
    np.testing.assert_array_equal(P, Q)
    np.testing.assert_array_equal(K, np.zeros((1, 2)))


def test_dare_rejects_indefinite_r():
    with pytest.raises(SynthesisError):
        solve_dare([[0.5]], [[1.0]], [[1.0]], [[0.0]])


def test_dare_reports_non_convergence():
    # unstable and uncontrollable: the iteration diverges
    with pytest.raises(SynthesisError, match="did not converge"):
        solve_dare([[2.0]], [[0.0]], [[1.0]], [[1.0]], max_iter=50)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_dare_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    A = rng.normal(size=(n, n))
    A *= 1.3 / max(spectral_radius(A), 1e-3)  # mildly unstable
    B = rng.normal(size=(n, m))
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.1 * np.eye(n)
    R = np.eye(m) * rng.uniform(0.1, 2.0)
    P, K = solve_dare(A, B, Q, R, tol=1e-12)
    P_ref = solve_discrete_are(A, B, Q, R)
    np.testing.assert_allclose(P, P_ref, rtol=1e-7, atol=1e-8)
    assert dare_residual(A, B, Q, R, P) <= 1e-9 * max(1.0, np.max(np.abs(P)))
    assert spectral_radius(A + B @ K) < 1.0


def test_lyapunov_examples():
    Qb = np.array([[1.0, 0.2], [0.2, 3.0]])
    np.testing.assert_array_equal(solve_discrete_lyapunov(np.zeros((2, 2)), Qb), Qb)
    assert solve_discrete_lyapunov([[0.5]], [[1.0]])[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-12)
    np.testing.assert_array_equal(solve_discrete_lyapunov(np.diag([0.3, 0.9]), np.zeros((2, 2))), 0.0)
    with pytest.raises(SynthesisError):
        solve_discrete_lyapunov([[1.0]], [[1.0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_lyapunov_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    A = rng.normal(size=(n, n))
    A *= rng.uniform(0.1, 0.98) / max(spectral_radius(A), 1e-3)
    M = rng.normal(size=(n, n))
    Qb = M @ M.T
    P = solve_discrete_lyapunov(A, Qb)
    np.testing.assert_allclose(P, scipy_lyap(A.T, Qb), rtol=1e-8, atol=1e-9)
    assert lyapunov_residual(A, Qb, P) <= 1e-9 * max(1.0, np.max(np.abs(P)))


def test_disk_gain_certified(synthesis, sinc_grid):
    assert len(synthesis.spectral_radii) == 41
    assert all(r < 1.0 for _, r in synthesis.spectral_radii)
    assert synthesis.riccati_residual <= 1e-9
    assert synthesis.lyapunov_residual <= 1e-9
    np.testing.assert_array_equal(synthesis.P, synthesis.P.T)
    assert np.all(np.linalg.eigvalsh(synthesis.P) > 0)
    p_values = [p[0] for p in sinc_grid]
    assert min(p_values) == pytest.approx(-0.2172, abs=1e-3)
    assert max(p_values) == 1.0


def test_disk_gain_against_scipy(disk, synthesis):
    A_nom = disk.eval_A([1.0])
    Q, R = np.diag([8.0, 0.1]), np.array([[0.5]])
    P_ref = solve_discrete_are(A_nom, disk.B, Q, R)
    K_ref = -np.linalg.solve(R + disk.B.T @ P_ref @ disk.B, disk.B.T @ P_ref @ A_nom)
    np.testing.assert_allclose(synthesis.K, K_ref, rtol=1e-8)
    A_cl = A_nom + disk.B @ K_ref
    np.testing.assert_allclose(synthesis.P, scipy_lyap(A_cl.T, Q + K_ref.T @ R @ K_ref), rtol=1e-8)


def test_heavy_input_penalty_leaves_open_loop():
    A0 = np.diag([0.5, 0.8])
    A1 = np.array([[0.0, 0.1], [0.0, 0.0]])
    model = AffineLpvModel((A0, A1), np.array([[1.0], [0.5]]), lambda x, u: np.zeros(1))
    grid = [np.array([v]) for v in (-1.0, 0.0, 1.0)]
    res = robust_lpv_gain(model, np.eye(2), [[1e6]], grid, p_nominal=[0.0])
    assert np.max(np.abs(res.K)) < 1e-5
    for p, r in res.spectral_radii:
        assert r == pytest.approx(spectral_radius(model.eval_A(p)), abs=1e-5)


def test_single_point_grid_is_nominal_loop(disk):
    res = robust_lpv_gain(disk, np.diag([8.0, 0.1]), [[0.5]], [np.array([1.0])])
    (p, r), = res.spectral_radii
    assert r == spectral_radius(disk.eval_A([1.0]) + disk.B @ res.K)


def test_certification_failure_names_points(disk):
    # a gain designed at p = 1 cannot hold p = 40 (strong positive feedback)
    with pytest.raises(SynthesisError, match="not Schur stable"):
        robust_lpv_gain(disk, np.diag([8.0, 0.1]), [[0.5]], [np.array([1.0]), np.array([40.0])])


def test_empty_grid_rejected(disk):
    with pytest.raises(ValueError):
        robust_lpv_gain(disk, np.eye(2), [[1.0]], [])
