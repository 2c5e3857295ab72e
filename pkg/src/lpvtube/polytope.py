"""Convex polytopes in vertex representation.

Only the operations the error tubes need are provided: Minkowski sums, linear
images, translation, membership and (in the plane) redundancy removal via a
monotone-chain hull.  Polytopes of dimension above two keep their pairwise-sum
vertex lists unreduced; that is still a valid representation of the set.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import qp

class MembershipError(RuntimeError):
    """The membership QP failed; says nothing about containment."""


@dataclass(frozen=True, eq=False)
class VPolytope:
    """Convex hull of the rows of ``vertices`` (shape ``(n_vertices, dim)``)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v.reshape(1, -1)
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise ValueError("a polytope needs at least one vertex of positive dimension")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self):
        return self.vertices.shape[1]

    def __len__(self):
        return self.vertices.shape[0]

    def __repr__(self):
        return f"VPolytope(dim={self.dim}, n_vertices={len(self)})"

    @classmethod
    def point(cls, x):
        return cls(np.atleast_2d(np.asarray(x, dtype=float)))

    @classmethod
    def origin(cls, dim):
        return cls(np.zeros((1, dim)))

    @classmethod
    def segment(cls, a, b):
        return cls(np.vstack([a, b]))


def _reduce(points):
    points = np.asarray(points, dtype=float)
    if points.shape[1] == 2:
        return hull_2d(points)
    return VPolytope(points)


def _orientation(o, a, b):
    """Sign of the cross product (a - o) x (b - o), exact for float inputs.

    The floating-point value is trusted when it clears a rounding bound;
    otherwise the determinant is recomputed in rational arithmetic.
    """
    ax, ay, bx, by = a[0] - o[0], a[1] - o[1], b[0] - o[0], b[1] - o[1]
    left, right = ax * by, ay * bx
    det = left - right
    if abs(det) > 1e-15 * (abs(left) + abs(right)) and np.isfinite(det):
        return 1 if det > 0 else -1
    F = Fraction
    o0, o1 = F(float(o[0])), F(float(o[1]))
    exact = (F(float(a[0])) - o0) * (F(float(b[1])) - o1) - (F(float(a[1])) - o1) * (F(float(b[0])) - o0)
    return (exact > 0) - (exact < 0)


def _segment_distance(p, a, b):
    d = b - a
    dd = float(d @ d)
    t = 0.0 if dd == 0.0 else min(1.0, max(0.0, float((p - a) @ d) / dd))
    return float(np.linalg.norm(a + t * d - p))


def hull_2d(points):
    """Counterclockwise convex hull (Andrew's monotone chain).

    Orientation tests are exact, so the chain is the exact hull of the
    input.  A final pass drops vertices lying within ``1e-14`` times the
    coordinate spread of the segment joining their neighbours, which moves
    the boundary by at most that much.  A single point or a segment comes
    back with one or two vertices.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("hull_2d needs at least one point")
    if pts.shape[1] != 2:
        raise ValueError(f"hull_2d works on 2-vectors, got dimension {pts.shape[1]}")
    pts = np.unique(pts, axis=0)  # lexicographic sort, exact duplicates removed
    if pts.shape[0] == 1:
        return VPolytope(pts)

    def half(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2 and _orientation(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    hull = half(pts)[:-1] + half(pts[::-1])[:-1]

    eps = 1e-14 * float(np.max(np.abs(pts - pts[0])))
    changed = True
    while changed and len(hull) > 2:
        changed = False
        for j in range(len(hull)):
            if _segment_distance(hull[j], hull[j - 1], hull[(j + 1) % len(hull)]) <= eps:
                del hull[j]
                changed = True
                break
    if len(hull) == 2 and np.linalg.norm(hull[0] - hull[1]) <= eps:
        hull = hull[:1]
    return VPolytope(np.array(hull))


def minkowski_sum(a, b):
    """``{x + y | x in a, y in b}`` from all pairwise vertex sums."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    sums = (a.vertices[:, None, :] + b.vertices[None, :, :]).reshape(-1, a.dim)
    return _reduce(sums)


def linear_image(m, p):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape != (p.dim, p.dim):
        raise ValueError(f"matrix of shape {m.shape} cannot map a {p.dim}-dimensional polytope")
    return _reduce(p.vertices @ m.T)


def translate(p, x):
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != p.dim:
        raise ValueError(f"translation of length {x.shape[0]} for a {p.dim}-dimensional polytope")
    return VPolytope(p.vertices + x)


@dataclass(frozen=True)
class Membership:
    """Outcome of a membership test.

    ``weights`` are convex weights on the vertices and ``residual`` is the
    distance from their combination to the query point, an upper bound on
    the distance to the set.  ``lower_bound`` is a dual bound from a
    separating direction (zero when none exists).
    """

    contained: bool
    weights: np.ndarray
    residual: float
    lower_bound: float = 0.0

    def __bool__(self):
        return self.contained


def contains(p, x, tol=1e-8):
    """Test ``x in p`` up to Euclidean distance ``tol``.

    With ``d_j`` the vertices shifted by ``-x`` and scaled to unit size, the
    strictly convex QP ``min 0.5|z|^2  s.t. d_j'z >= 1`` is feasible exactly
    when ``x`` lies outside the hull.  Its solution is a separating direction
    whose normalized multipliers are the weights of the nearest point, and
    ``1/|z|`` is the distance.  When it is infeasible the solver's Farkas
    multipliers are convex weights reproducing ``x``.  Either way the verdict
    rests on the weights, checked directly against the vertices.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != p.dim:
        raise ValueError(f"point of length {x.shape[0]} for a {p.dim}-dimensional polytope")
    if tol <= 0:
        raise ValueError("tol must be positive")
    D = p.vertices - x
    nv = D.shape[0]
    scale = float(np.max(np.linalg.norm(D, axis=1)))
    if nv == 1 or scale == 0.0:
        weights = np.zeros(nv)
        weights[0] = 1.0
        res = float(np.linalg.norm(D[0]))
        return Membership(res <= tol, weights, res, res)
    dist = np.linalg.norm(D, axis=1)
    nearest = int(np.argmin(dist))
    if dist[nearest] <= tol:
        weights = np.zeros(nv)
        weights[nearest] = 1.0
        return Membership(True, weights, float(dist[nearest]), 0.0)
    D = D / scale

    prob = qp.QpProblem(np.eye(p.dim), np.zeros(p.dim), -D, -np.ones(nv))
    lower = 0.0
    try:
        # the verdict is certified below, so the solver's own residual
        # test is switched off
        sol = qp.solve(prob, tol=np.inf, max_iter=50 * (nv + p.dim))
    except qp.Infeasible as exc:
        w = exc.certificate
        if w is None or not np.sum(w) > 0:
            raise MembershipError("membership QP reported infeasibility without a certificate") from exc
    except qp.QpError as exc:
        raise MembershipError(f"membership QP failed: {exc}") from exc
    else:
        w = sol.duals
        z = sol.x
        if not np.sum(w) > 0:
            raise MembershipError("membership QP returned no active vertices")
        lower = scale * max(0.0, float(np.min(D @ z))) / float(np.linalg.norm(z))
    weights = w / np.sum(w)
    res = float(np.linalg.norm(p.vertices.T @ weights - x))
    if res > tol and lower <= tol and res - lower > 1e-6 * res + 1e-12 * scale:
        raise MembershipError(
            f"membership certificate gap too wide: distance in [{lower:.3e}, {res:.3e}]")
    return Membership(res <= tol, weights, res, min(lower, res))


def set_equal(a, b, tol=1e-9):
    """Mutual containment of all vertices, each within ``tol``."""
    return all(contains(b, v, tol).contained for v in a.vertices) and all(
        contains(a, v, tol).contained for v in b.vertices
    )


def to_text(p, **header):
    """One vertex per line, comma separated, with a ``#`` header line."""
    fields = " ".join([f"dim={p.dim}"] + [f"{k}={v}" for k, v in header.items()])
    rows = [",".join(f"{c:.17g}" for c in v) for v in p.vertices]
    return "\n".join([f"# {fields}", *rows]) + "\n"


def from_text(text):
    rows = []
    dim = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("dim="):
                    dim = int(tok[4:])
            continue
        rows.append([float(c) for c in line.split(",")])
    p = VPolytope(np.array(rows))
    if dim is not None and p.dim != dim:
        raise ValueError(f"header says dim={dim} but rows have {p.dim} columns")
    return p


def write_polytope(p, path, **header):
    Path(path).write_text(to_text(p, **header))


def read_polytope(path):
    return from_text(Path(path).read_text())
