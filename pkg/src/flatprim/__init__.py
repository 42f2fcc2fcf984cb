"""flatprim: indirect optimal control for differentially flat systems.

Optimal trajectories are stitched from closed-form motion primitives at
constraint junctions; costates, Euler-Lagrange residuals, and junction
conditions are reconstructed afterwards to certify the result numerically.
"""

from .flat_model import (
    AnalyticSegment,
    CraneParams,
    FlatnessSingularity,
    HorizonError,
    IntegratorChainSpec,
    PiecewiseTrajectory,
    crane_boundary_to_flat,
    crane_from_flat,
    unicycle_from_flat,
)
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "AnalyticSegment",
    "CraneParams",
    "FlatnessSingularity",
    "HorizonError",
    "IntegratorChainSpec",
    "KERNEL_BACKEND",
    "PiecewiseTrajectory",
    "crane_boundary_to_flat",
    "crane_from_flat",
    "unicycle_from_flat",
]
