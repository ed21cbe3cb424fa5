"""Continuation and automatic bifurcation analysis of the extreme type-II
Ginzburg-Landau equation on two-dimensional domains.

The package discretizes the equation with a gauge-consistent finite-volume
scheme, traces solution branches by pseudo-arclength continuation, detects
and locates singular points, computes the tangents of every branch emerging
there (Lyapunov-Schmidt reduction or the equivariant shortcut), and explores
the whole connected solution landscape into a structured diagram.
"""

from .mesh import DomainSpec, Mesh, build_mesh
from .model import State, energy, residual
from .linalg import InnerProduct
from .continuation import ContinuationConfig, Tangent, trace_branch
from .bifurcation import BifurcationPoint, locate_bifurcation
from .tangents import TangentConfig, TangentDirection, emerging_tangents
from .explorer import Branch, Diagram, ExplorerConfig, diagram_export, explore
from .symmetry import GroupSpec

__all__ = [
    "Branch",
    "BifurcationPoint",
    "ContinuationConfig",
    "Diagram",
    "DomainSpec",
    "ExplorerConfig",
    "GroupSpec",
    "InnerProduct",
    "Mesh",
    "State",
    "Tangent",
    "TangentConfig",
    "TangentDirection",
    "build_mesh",
    "diagram_export",
    "emerging_tangents",
    "energy",
    "explore",
    "locate_bifurcation",
    "residual",
    "trace_branch",
]

__version__ = "0.1.0"
