"""Cauchy data completion for 2D Stokes/Oseen flow.

Quasi-reversibility and penalized Kohn-Vogelius reconstructions on
structured finite-difference grids, with manufactured solutions and
studies that check convergence and log-stability estimates empirically.
"""

__version__ = "0.1.0"

from .fields import BoundaryField, ScalarField, StokesState, VectorField
from .kv import KVSolution, KVUnknown, kv_gradient_check, kv_value, minimize_kv
from .manufactured import NoiseModel, catalog, make_cauchy_data, make_incompatible_data, perturb
from .mesh import DomainKind, Grid, boundary_run, build_grid, window
from .operators import OseenCoefficients
from .problem import CauchyProblem
from .qr import QRSolution, assemble_qr, qr_apriori_check, solve_qr, solve_qr_interior
from .studies import (StudyReport, fit_log_rate, run_convergence_study, run_interp_inequality_probe,
                      run_noise_study, run_robin_study, run_stability_probe)

__all__ = [
    "BoundaryField", "CauchyProblem", "DomainKind", "Grid", "KVSolution", "KVUnknown",
    "NoiseModel", "OseenCoefficients", "QRSolution", "ScalarField", "StokesState", "StudyReport",
    "VectorField", "assemble_qr", "boundary_run", "build_grid", "catalog", "fit_log_rate",
    "kv_gradient_check", "kv_value", "make_cauchy_data", "make_incompatible_data", "minimize_kv",
    "perturb", "qr_apriori_check", "run_convergence_study", "run_interp_inequality_probe",
    "run_noise_study", "run_robin_study", "run_stability_probe", "solve_qr", "solve_qr_interior",
    "window",
]
