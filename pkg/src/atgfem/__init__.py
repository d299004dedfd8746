"""Adaptive two-grid P1 finite elements on 2D triangulations.

Newest-vertex bisection, residual error estimators with bulk marking, and
level-loop drivers that solve only linear (or linearized) problems on every
refined mesh.
"""
from .adaptivity import (EstimatorReport, MarkedSet, dorfler_mark, estimate, estimate_fixed_function,
                         estimate_general, estimate_linear, estimate_mild, mark, reduction_check)
from .algorithms import (ALGORITHMS, ConvergenceHistory, LevelRecord, RunConfig, compute_hot,
                         convergence_slope, efficiency_terms, run)
from .errors import (AtgError, ConfigError, HierarchyError, MeshError, MeshParseError,
                     OrientationError, PreconditionerError, SolverFailure)
from .fespace import FeFunction, FeSpace, interpolate, norms, prolongate
from .mesh import Mesh, bisect_marked, build_initial_uniform, conformity_check, refine_uniform
from .problems import PROBLEMS, get_problem

__version__ = "0.1.0"
