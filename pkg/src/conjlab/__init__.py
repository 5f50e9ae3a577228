"""Similarity of dynamical systems through conjugating maps."""
from __future__ import annotations

from ._accel import backend, set_threads
from .dynsys import IntegratorConfig, SystemSpec, Trajectory, integrate
from .errors import (BlowUpError, ConfigError, ConjlabError, ConvergenceError, DimensionError,
                     NumericalError, SingularMatrixError)
from .geomap import AffineMap, PiecewiseAffineMap, build_polyline_conjugacy
from .simdeg import (MapSequence, PolynomialMap, SimilarityReport, algorithm1_solve_Kt,
                     algorithm2_best_constant_K, best_constant_K_least_squares, discrete_cost,
                     evaluate_similarity_over_time, fit_polynomial_map, similarity_degree)

__version__ = "0.1.0"

__all__ = [
    "AffineMap", "BlowUpError", "ConfigError", "ConjlabError", "ConvergenceError",
    "DimensionError", "IntegratorConfig", "MapSequence", "NumericalError",
    "PiecewiseAffineMap", "PolynomialMap", "SimilarityReport", "SingularMatrixError",
    "SystemSpec", "Trajectory", "algorithm1_solve_Kt", "algorithm2_best_constant_K",
    "backend", "best_constant_K_least_squares", "build_polyline_conjugacy", "discrete_cost",
    "evaluate_similarity_over_time", "fit_polynomial_map", "integrate", "set_threads",
    "similarity_degree",
]
