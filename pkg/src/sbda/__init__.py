"""Adaptive scalarisation for bi-objective QUBO problems."""

from .annealer import ExactSolver, SimulatedAnnealingSolver, SolverResult, enumerate_exact, solve
from .metrics import (
    attainment_surface,
    default_reference,
    eaf,
    eaf_difference,
    hypervolume_2d,
)
from .pareto import Archive, ObjectivePoint, dominates, manhattan, non_dominated_filter
from .portfolio import (
    EncodingScheme,
    PortfolioEncoder,
    PortfolioInstance,
    build_qubos,
    decode,
    is_feasible,
    parse_orlib,
)
from .qubo import QuboMatrix, aggregate, delta_energy, energy, positive_coefficient_sum
from .scalarise import SBDA, RunConfig, WeightSet, momc_penalty, rescale, run_sbda

__version__ = "0.1.0"

__all__ = [
    "Archive", "EncodingScheme", "ExactSolver", "ObjectivePoint", "PortfolioEncoder",
    "PortfolioInstance", "QuboMatrix", "RunConfig", "SBDA", "SimulatedAnnealingSolver",
    "SolverResult", "WeightSet", "aggregate", "attainment_surface", "build_qubos", "decode",
    "default_reference", "delta_energy", "dominates", "eaf", "eaf_difference", "energy",
    "enumerate_exact", "hypervolume_2d", "is_feasible", "manhattan", "momc_penalty",
    "non_dominated_filter", "parse_orlib", "positive_coefficient_sum", "rescale", "run_sbda",
    "solve",
]
