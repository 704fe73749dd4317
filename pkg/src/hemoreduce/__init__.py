"""Reduced-order modeling of pulsatile flow in a 2D bifurcation.

Pipeline: full-order MAC-grid projection solver -> POD compression ->
intrusive Galerkin ROM / non-intrusive echo-state surrogate -> evaluation.
"""

__version__ = "0.1.0"

from .errors import HemoreduceError
from .fom import FluidProps, FlowState, InletSignal, run_fom, run_to_steady
from .geometry import BifurcationParams, DomainMask, build_bifurcation, build_channel
from .pod import PodBasis, pod_from_snapshots, project, reconstruct
from .snapshots import LiftingField, SnapshotMatrix, compute_lifting, homogenize

__all__ = [
    "__version__",
    "HemoreduceError",
    "FluidProps",
    "FlowState",
    "InletSignal",
    "run_fom",
    "run_to_steady",
    "BifurcationParams",
    "DomainMask",
    "build_bifurcation",
    "build_channel",
    "PodBasis",
    "pod_from_snapshots",
    "project",
    "reconstruct",
    "LiftingField",
    "SnapshotMatrix",
    "compute_lifting",
    "homogenize",
]
