"""Adaptive discontinuous Petrov-Galerkin solver for Laplace-Dirichlet eigenvalues."""
from .afem import AfemConfig, ConvergenceRecord, dorfler_mark, estimate_rate, run_afem
from .assembly import (AssembledPencil, Formulation, Kind, Primal, PrimalLowest, Ultraweak,
                       UltraweakAugmented, UltraweakLowestRT, condense_and_assemble,
                       recover_residual)
from .eigensolve import EigenPair, SolverConfig, normalize, smallest_eigenpairs, solve_spd
from .estimators import (EstimatorKind, IndicatorField, ReferenceSolution, energy_error, eta_bar,
                         eta_natural, eta_tilde, higher_order_term)
from .mesh import DomainSpec, Mesh, build_domain, refine_adaptive, refine_uniform

__version__ = "0.1.0"

__all__ = [
    "AfemConfig", "AssembledPencil", "ConvergenceRecord", "DomainSpec", "EigenPair",
    "EstimatorKind", "Formulation", "IndicatorField", "Kind", "Mesh", "Primal", "PrimalLowest",
    "ReferenceSolution", "SolverConfig", "Ultraweak", "UltraweakAugmented", "UltraweakLowestRT",
    "build_domain", "condense_and_assemble", "dorfler_mark", "energy_error", "estimate_rate",
    "eta_bar", "eta_natural", "eta_tilde", "higher_order_term", "normalize", "recover_residual",
    "refine_adaptive", "refine_uniform", "run_afem", "smallest_eigenpairs", "solve_spd",
]
