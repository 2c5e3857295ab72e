"""Affine LPV models ``x+ = A(p) x + B u`` with ``p = rho(x, u)``."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

_SINC_SERIES_BELOW = 1e-6


def sinc(theta):
    """Unnormalized sinc, ``sin(t)/t`` with ``sinc(0) = 1``."""
    theta = float(theta)
    if abs(theta) < _SINC_SERIES_BELOW:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0
    return math.sin(theta) / theta


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AffineLpvModel:
    """``A(p) = A_0 + sum_l p[l] A_l`` with a scheduling-independent ``B``.

    ``rho`` maps ``(x, u)`` to a length-``n_p`` scheduling vector.
    """

    A_list: tuple
    B: np.ndarray
    rho: Callable
    t_s: float = 1.0
    name: str = "lpv"

    def __post_init__(self):
        mats = tuple(_freeze(np.atleast_2d(a)) for a in self.A_list)
        if len(mats) < 1:
            raise ValueError("A_list needs at least A_0")
        n_x = mats[0].shape[0]
        for a in mats:
            if a.shape != (n_x, n_x):
                raise ValueError(f"all A_l must be {n_x}x{n_x}, got {a.shape}")
        B = _freeze(np.asarray(self.B, dtype=float).reshape(n_x, -1))
        if self.t_s <= 0:
            raise ValueError("sampling time must be positive")
        object.__setattr__(self, "A_list", mats)
        object.__setattr__(self, "B", B)

    @property
    def n_x(self):
        return self.A_list[0].shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_p(self):
        return len(self.A_list) - 1

    def _p(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=float)).ravel()
        if p.shape[0] != self.n_p:
            raise ValueError(f"scheduling vector must have length {self.n_p}, got {p.shape[0]}")
        return p

    def eval_A(self, p):
        p = self._p(p)
        A = self.A_list[0].copy()
        for pl, Al in zip(p, self.A_list[1:]):
            A = A + pl * Al
        return A

    def scheduling(self, x, u=None):
        if u is None:
            u = np.zeros(self.n_u)
        return self._p(self.rho(np.asarray(x, dtype=float), np.atleast_1d(np.asarray(u, dtype=float))))

    def step(self, x, u, p):
        x, u = self._xu(x, u)
        return self.eval_A(p) @ x + self.B @ u

    def _xu(self, x, u):
        x = np.asarray(x, dtype=float).ravel()
        u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        if x.shape[0] != self.n_x:
            raise ValueError(f"state must have length {self.n_x}, got {x.shape[0]}")
        if u.shape[0] != self.n_u:
            raise ValueError(f"input must have length {self.n_u}, got {u.shape[0]}")
        return x, u


@dataclass(frozen=True, eq=False)
class ClosedLoopModel:
    """``A_c(p) = A(p) + B K``: only the constant term picks up the feedback."""

    base: AffineLpvModel
    K: np.ndarray

    def __post_init__(self):
        K = _freeze(np.asarray(self.K, dtype=float).reshape(self.base.n_u, self.base.n_x))
        object.__setattr__(self, "K", K)
        Ac = (_freeze(self.base.A_list[0] + self.base.B @ K),) + self.base.A_list[1:]
        object.__setattr__(self, "A_c_list", Ac)

    n_x = property(lambda self: self.base.n_x)
    n_u = property(lambda self: self.base.n_u)
    n_p = property(lambda self: self.base.n_p)
    B = property(lambda self: self.base.B)
    t_s = property(lambda self: self.base.t_s)

    @property
    def A_c0(self):
        return self.A_c_list[0]

    def eval_A(self, p):
        p = self.base._p(p)
        A = self.A_c_list[0].copy()
        for pl, Al in zip(p, self.A_c_list[1:]):
            A = A + pl * Al
        return A

    def total_input(self, x, u):
        """Physical plant input ``K x + u`` for the MPC part ``u``."""
        x, u = self.base._xu(x, u)
        return self.K @ x + u

    def scheduling(self, x, u=None):
        """Scheduling at state ``x`` under MPC input ``u`` (feedback included)."""
        if u is None:
            u = np.zeros(self.n_u)
        return self.base.scheduling(x, self.total_input(x, u))

    def step(self, x, u, p):
        x, u = self.base._xu(x, u)
        return self.eval_A(p) @ x + self.B @ u


def simulate_true(model, x0, inputs):
    """Self-scheduled recursion ``x+ = A(rho(x, u)) x + B u``.

    For a :class:`ClosedLoopModel` the inputs are the MPC part and the
    scheduling sees the total input.  Returns an array of shape
    ``(len(inputs) + 1, n_x)``.
    """
    x = np.asarray(x0, dtype=float).ravel()
    if x.shape[0] != model.n_x:
        raise ValueError(f"x0 must have length {model.n_x}")
    traj = [x]
    for u in inputs:
        p = model.scheduling(x, u)
        x = model.step(x, u, p)
        traj.append(x)
    return np.array(traj)


@dataclass(frozen=True)
class DiskParams:
    I_n: float = 2.4e-4
    m: float = 0.076
    g: float = 9.81
    l: float = 0.041
    tau: float = 0.4
    K_m: float = 11.0
    t_s: float = 0.01

    def __post_init__(self):
        for name in ("I_n", "m", "g", "l", "tau", "K_m", "t_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"disk parameter {name} must be strictly positive")

    @property
    def gamma(self):
        """Discrete gravity gain ``t_s m g l / I_n``."""
        return self.t_s * self.m * self.g * self.l / self.I_n


def disk_rho(x, u=None):
    return np.array([sinc(x[0])])


def disk_model(params=None):
    """Forward-Euler unbalanced disk, scheduled on ``sinc(theta)``."""
    params = DiskParams() if params is None else params
    t_s = params.t_s
    A0 = np.array([[1.0, t_s], [0.0, 1.0 - t_s / params.tau]])
    A1 = np.array([[0.0, 0.0], [params.gamma, 0.0]])
    B = np.array([[0.0], [t_s * params.K_m / params.tau]])
    return AffineLpvModel((A0, A1), B, disk_rho, t_s=t_s, name="unbalanced_disk")


def write_trajectory_csv(path, states, inputs, scheduling):
    """``k,theta,omega,u,p`` rows; the last state has empty input/scheduling."""
    states = np.asarray(states, dtype=float)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "theta", "omega", "u", "p"])
        for k, x in enumerate(states):
            u = f"{float(np.ravel(inputs[k])[0]):.17g}" if k < len(inputs) else ""
            p = f"{float(np.ravel(scheduling[k])[0]):.17g}" if k < len(scheduling) else ""
            w.writerow([k, f"{x[0]:.17g}", f"{x[1]:.17g}", u, p])
