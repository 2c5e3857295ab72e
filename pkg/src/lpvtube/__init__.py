"""LPV model predictive control with polytopic error tubes."""

from .lpv import AffineLpvModel, ClosedLoopModel, DiskParams, disk_model, simulate_true, sinc
from .polytope import VPolytope, contains, hull_2d, linear_image, minkowski_sum, translate
from .qp import QpProblem, QpSolution, kkt_residual, solve

__all__ = [
    "AffineLpvModel",
    "ClosedLoopModel",
    "DiskParams",
    "QpProblem",
    "QpSolution",
    "VPolytope",
    "contains",
    "disk_model",
    "hull_2d",
    "kkt_residual",
    "linear_image",
    "minkowski_sum",
    "simulate_true",
    "sinc",
    "solve",
    "translate",
]

__version__ = "0.1.0"
