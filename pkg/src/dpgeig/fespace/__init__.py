"""Discrete spaces: quadrature, reference bases, DOF maps and FE functions."""
from .basis import (BrokenLagrange, BrokenRT0, ContinuousLagrangeZeroBC, CrouzeixRaviartZeroBC,
                    Family, SkeletonPk, Space, TraceSkeleton, basis_eval, edge_lagrange_values,
                    lagrange_gradients, lagrange_values, local_dim)
from .dofmap import DofMap, build_dofmap, dof_count
from .function import FEFunction, evaluate, interpolate, locate, to_physical, to_reference
from .quadrature import QuadratureRule, edge_points, line_quadrature, quadrature

__all__ = [
    "BrokenLagrange", "BrokenRT0", "ContinuousLagrangeZeroBC", "CrouzeixRaviartZeroBC",
    "DofMap", "FEFunction", "Family", "QuadratureRule", "SkeletonPk", "Space", "TraceSkeleton",
    "basis_eval", "build_dofmap", "dof_count", "edge_lagrange_values", "edge_points", "evaluate",
    "interpolate", "lagrange_gradients", "lagrange_values", "line_quadrature", "local_dim",
    "locate", "quadrature", "to_physical", "to_reference",
]
