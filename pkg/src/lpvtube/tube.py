"""Error dynamics between plant and prediction, and polytopic error tubes.

With ``e = x - xhat`` and the closed-loop split ``A_c(p) = A_c0 + sum p_l A_cl``
the error obeys

    e[i+1] = A_c0 e[i] + g(x[i]) - sigma_hat[i] xhat[i],       g(x) = sigma(x) x

and, through a mean-value point ``xi`` on the segment from the anchor state
``z[i]`` (whose scheduling equals ``p_hat[i]``) to ``x[i]``,

    e[i+1] = A_c0 e[i] + sigma_hat[i] (z[i] - xhat[i]) + grad_g(xi) (x[i] - z[i]).

Bounding the two last terms by segments gives the recursion
``E[i+1] = A_c0 E[i] (+) V[i] (+) W`` with ``E[0] = {0}``.  The set
constructions are worked out for the unbalanced disk, whose ``A_c1`` has a
single nonzero entry below the diagonal.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import polytope as pt
from .lpv import sinc

_JAC_SERIES_BELOW = 0.1


class TubeStructureError(ValueError):
    """The model does not have the rank-one scheduling structure handled here."""


def cos_sinc_slope(theta):
    """``(cos t - sinc t) / t``, continuous through ``t = 0``."""
    theta = float(theta)
    if abs(theta) < _JAC_SERIES_BELOW:
        # sum_{n>=1} (-1)^n 2n t^(2n-1) / (2n+1)!
        total, t2 = 0.0, theta * theta
        term_pow = theta
        for n in range(1, 8):
            total += (-1) ** n * 2 * n * term_pow / math.factorial(2 * n + 1)
            term_pow *= t2
        return total
    return (math.cos(theta) - sinc(theta)) / theta


def disk_scheduled_state(x):
    """``sinc(theta) * (theta, omega) = (sin theta, omega sinc theta)``."""
    s = sinc(x[0])
    return np.array([s * x[0], s * x[1]])


def disk_jacobian(x):
    """Jacobian of :func:`disk_scheduled_state`."""
    theta, omega = float(x[0]), float(x[1])
    return np.array([
        [math.cos(theta), 0.0],
        [omega * cos_sinc_slope(theta), sinc(theta)],
    ])


@dataclass(frozen=True, eq=False)
class ErrorOperators:
    """Closed-loop split plus the nonlinear map ``g(x) = sigma(x) x``.

    ``scheduled_state`` is ``p(x) x`` for scalar scheduling and ``jacobian``
    its derivative, so that ``g = A_c1 scheduled_state`` and
    ``grad_g = A_c1 jacobian``.
    """

    A_c0: np.ndarray
    A_c1: np.ndarray
    rho: object
    scheduled_state: object
    jacobian: object

    @property
    def gamma(self):
        return float(self.A_c1[1, 0])

    @property
    def n_x(self):
        return self.A_c0.shape[0]

    def sigma(self, p):
        return float(np.ravel(p)[0]) * self.A_c1

    def g(self, x):
        return self.A_c1 @ self.scheduled_state(np.asarray(x, dtype=float))

    def grad_g(self, x):
        return self.A_c1 @ self.jacobian(np.asarray(x, dtype=float))


def disk_error_operators(closed_loop):
    """Operators for a closed-loop disk model; checks the rank-one structure."""
    if closed_loop.n_p != 1 or closed_loop.n_x != 2:
        raise TubeStructureError("the vertex constructions need n_x = 2 and a scalar scheduling")
    A_c1 = np.asarray(closed_loop.A_c_list[1])
    mask = np.ones_like(A_c1, dtype=bool)
    mask[1, 0] = False
    if np.any(A_c1[mask] != 0.0):
        raise TubeStructureError("A_c1 must have its only nonzero entry at row 2, column 1")
    return ErrorOperators(
        A_c0=np.array(closed_loop.A_c0),
        A_c1=A_c1.copy(),
        rho=lambda x: closed_loop.base.scheduling(x),
        scheduled_state=disk_scheduled_state,
        jacobian=disk_jacobian,
    )


def _check_structure(ops):
    A = ops.A_c1
    if A.shape != (2, 2) or A[0, 0] or A[0, 1] or A[1, 1]:
        raise TubeStructureError("vertex constructions are only available for the disk structure")


@dataclass(frozen=True)
class TubeConfig:
    """``delta1`` bounds the first-coordinate variations; ``xi_interval`` the MVT point."""

    delta1: float
    delta2_present: bool = False
    xi_interval: tuple = (math.pi, 2 * math.pi)

    def __post_init__(self):
        if not self.delta1 >= 0:
            raise ValueError("delta1 must be nonnegative")
        lo, hi = self.xi_interval
        if not lo <= hi:
            raise ValueError("xi_interval must be nonempty")


def cos_range(lo, hi):
    """Range of ``cos`` over ``[lo, hi]``."""
    vals = [math.cos(lo), math.cos(hi)]
    j = math.ceil(lo / math.pi)
    while j * math.pi <= hi:
        vals.append(1.0 if j % 2 == 0 else -1.0)
        j += 1
    return min(vals), max(vals)


def error_state(true_x, pred_x):
    true_x = np.asarray(true_x, dtype=float)
    pred_x = np.asarray(pred_x, dtype=float)
    if true_x.shape != pred_x.shape:
        raise ValueError(f"shape mismatch: {true_x.shape} vs {pred_x.shape}")
    return true_x - pred_x


def error_increment(ops, e_i, x_i, xhat_i, p_hat_i):
    """``A_c0 e + g(x) - sigma_hat xhat`` (no mean-value point needed)."""
    return ops.A_c0 @ e_i + ops.g(x_i) - ops.sigma(p_hat_i) @ xhat_i


def propagate_error(ops, e_i, x_next_prev, x_i_true, xhat_i, sigma_hat_i, xi):
    """``A_c0 e + sigma_hat (z - xhat) + grad_g(xi) (x - z)`` with anchor ``z = x_next_prev``."""
    vecs = [np.asarray(v, dtype=float).ravel() for v in (e_i, x_next_prev, x_i_true, xhat_i, xi)]
    e_i, z, x, xhat, xi = vecs
    n = ops.n_x
    if any(v.shape[0] != n for v in vecs):
        raise ValueError(f"all vectors must have length {n}")
    sigma_hat_i = np.asarray(sigma_hat_i, dtype=float)
    if sigma_hat_i.shape != (n, n):
        raise ValueError(f"sigma_hat must be {n}x{n}")
    return ops.A_c0 @ e_i + sigma_hat_i @ (z - xhat) + ops.grad_g(xi) @ (x - z)


def find_mvt_point(ops, x_a, x_b, row=1, tol=1e-12):
    """Point ``xi`` on ``[x_a, x_b]`` with ``g_row(x_b) - g_row(x_a) = grad g_row(xi) (x_b - x_a)``.

    Scans the segment for a sign change of the mean-value defect and bisects
    it; a root without a sign change (tangency) falls back to a bounded
    minimization of the defect's magnitude.  Returns ``(xi, t)`` with
    ``xi = x_a + t (x_b - x_a)``.
    """
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    d = x_b - x_a
    target = ops.g(x_b)[row] - ops.g(x_a)[row]

    def defect(t):
        return target - ops.grad_g(x_a + t * d)[row] @ d

    if not np.any(d):
        return x_a.copy(), 0.5
    grid = np.linspace(0.0, 1.0, 65)
    vals = np.array([defect(t) for t in grid])
    zero = np.flatnonzero(vals == 0.0)
    if zero.size:
        t = float(grid[zero[0]])
        return x_a + t * d, t
    change = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if change.size:
        lo, hi = grid[change[0]], grid[change[0] + 1]
        f_lo = vals[change[0]]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            f_mid = defect(mid)
            if f_mid == 0.0:
                lo = hi = mid
                break
            if np.sign(f_mid) == np.sign(f_lo):
                lo, f_lo = mid, f_mid
            else:
                hi = mid
        t = 0.5 * (lo + hi)
        return x_a + t * d, t
    from scipy.optimize import minimize_scalar

    best = int(np.argmin(np.abs(vals)))
    lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, len(grid) - 1)]
    r = minimize_scalar(lambda t: abs(defect(t)), bounds=(lo, hi), method="bounded",
                        options={"xatol": tol})
    return x_a + r.x * d, float(r.x)


def build_W(ops, cfg):
    """Segment bounding ``grad_g(xi) (x - z)`` for ``|x_1 - z_1| <= delta1``."""
    _check_structure(ops)
    lo, hi = cos_range(*cfg.xi_interval)
    half = abs(ops.gamma) * max(abs(lo), abs(hi)) * cfg.delta1
    if half == 0.0:
        return pt.VPolytope.origin(2)
    return pt.VPolytope.segment([0.0, -half], [0.0, half])


def build_V(ops, cfg, p_hat_i):
    """Segment bounding ``sigma_hat (z - xhat)`` for ``|z_1 - xhat_1| <= delta1``."""
    _check_structure(ops)
    half = abs(ops.gamma * float(np.ravel(p_hat_i)[0])) * cfg.delta1
    if half == 0.0:
        return pt.VPolytope.origin(2)
    return pt.VPolytope.segment([0.0, -half], [0.0, half])


@dataclass
class TubeSequence:
    polytopes: list
    centers: np.ndarray
    k: int | None = None

    def __len__(self):
        return len(self.polytopes)

    def translated(self, i):
        return pt.translate(self.polytopes[i], self.centers[i])


def tube_recursion(ops, cfg, p_hat, xhat_states, k=None):
    """``E[0] = {0}``, ``E[i+1] = A_c0 E[i] (+) V[i] (+) W``, centred on ``xhat``."""
    p_hat = np.asarray(p_hat, dtype=float)
    if p_hat.ndim == 1:
        p_hat = p_hat[:, None]
    xhat_states = np.asarray(xhat_states, dtype=float)
    N = p_hat.shape[0]
    if xhat_states.shape[0] != N + 1:
        raise ValueError(f"need {N + 1} predicted states for {N} scheduling values")
    W = build_W(ops, cfg)
    E = pt.VPolytope.origin(ops.n_x)
    tube = [E]
    for i in range(N):
        E = pt.minkowski_sum(pt.minkowski_sum(pt.linear_image(ops.A_c0, E), build_V(ops, cfg, p_hat[i])), W)
        tube.append(E)
    return TubeSequence(tube, xhat_states.copy(), k)


@dataclass(frozen=True)
class ContainmentRow:
    i: int
    contained: bool
    residual: float
    premise_ok: bool


@dataclass
class ContainmentReport:
    k: int | None
    rows: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.contained for r in self.rows)

    @property
    def violations(self):
        return [r.i for r in self.rows if not r.contained]


def premise_flags(true_states, pred_states, anchors, delta1, slack=1e-12):
    """Per-index premise: ``|x_1 - z_1| <= delta1`` and ``|z_1 - xhat_1| <= delta1``.

    Entry ``i`` (``i >= 1``) covers the step from ``i - 1`` to ``i``; entry 0
    is always true since ``E[0]`` needs no premise.
    """
    n = len(pred_states)
    flags = [True]
    for i in range(1, n):
        j = i - 1
        if anchors is None or j >= len(anchors):
            flags.append(True)
            continue
        z = anchors[j]
        ok = (abs(true_states[j][0] - z[0]) <= delta1 + slack
              and abs(z[0] - pred_states[j][0]) <= delta1 + slack)
        flags.append(bool(ok))
    return flags


def certify_containment(tube, true_states, tol=1e-8, anchors=None, delta1=None):
    """Check ``x[i] in xhat[i] (+) E[i]`` for every ``i`` of the tube.

    Raises :class:`polytope.MembershipError` when a membership QP fails,
    which is distinct from a point lying outside.
    """
    true_states = np.asarray(true_states, dtype=float)
    if len(true_states) < len(tube):
        raise ValueError("fewer true states than tube sets")
    flags = (premise_flags(true_states, tube.centers, anchors, delta1)
             if delta1 is not None else [True] * len(tube))
    report = ContainmentReport(tube.k)
    for i in range(len(tube)):
        m = pt.contains(tube.translated(i), true_states[i], tol)
        report.rows.append(ContainmentRow(i, m.contained, m.residual, flags[i]))
    return report


def write_tube_csv(path, tube):
    """Blocks separated by blank lines: index line, ``e1,e2`` rows, centre row."""
    blocks = []
    for i, (E, c) in enumerate(zip(tube.polytopes, tube.centers)):
        lines = [str(i)]
        lines += [",".join(f"{v:.17g}" for v in vert) for vert in E.vertices]
        lines.append("center," + ",".join(f"{v:.17g}" for v in c))
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + "\n")


def read_tube_csv(path, k=None):
    text = Path(path).read_text()
    polys, centers = [], []
    for block in text.strip().split("\n\n"):
        lines = [ln for ln in block.splitlines() if ln.strip()]
        verts = []
        for ln in lines[1:]:
            if ln.startswith("center,"):
                centers.append([float(v) for v in ln.split(",")[1:]])
            else:
                verts.append([float(v) for v in ln.split(",")])
        polys.append(pt.VPolytope(np.array(verts)))
    return TubeSequence(polys, np.array(centers), k)


def write_containment_csv(path, report):
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "contained", "residual", "premise_ok"])
        for r in report.rows:
            w.writerow([r.i, int(r.contained), f"{r.residual:.17g}", int(r.premise_ok)])


def read_containment_csv(path, k=None):
    report = ContainmentReport(k)
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            report.rows.append(ContainmentRow(int(row["i"]), row["contained"] == "1",
                                              float(row["residual"]), row["premise_ok"] == "1"))
    return report
