"""Quasi-reversibility: regularized least squares for the Cauchy problem.

The discrete objective over states ``(v, p)`` is

    J_eps = |Oseen(v, p) - f|^2_{L2} + |div v - d|^2_{H1} + gamma h^2 |stab p|^2
            + beta_N |sigma(v, p) n - g_N|^2_{L2(gamma_obs)}
            + eps (|v|^2_{H2} + |p|^2_{H1})

with ``v = g_D`` imposed on ``gamma_obs`` by elimination and ``beta_N = 1/h``.
Everything except the ``eps`` block is the *data misfit*; evaluated at the
sampled exact state it is the discretization floor ``rho_h``.

The interior-observation variant drops both boundary conditions and adds
``beta_w |v - v_obs|^2_{L2(w)}`` on a window ``w`` instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fields import StokesState
from .linalg import SolveReport, assemble_normal, stack_terms
from .lsq import (DEFAULT_METHOD, ConstrainedLeastSquares, dirichlet_dofs, div_term,
                  observation_term, pde_term, pressure_stabilization_term, regularization_term,
                  traction_term)
from .norms import boundary_l2, norm_h1, norm_l2, state_norm
from .operators import boundary_rows, divergence, oseen_residual, traction
from .problem import CauchyProblem, ProblemError

APRIORI_SLACK = 0.1
OBSERVATION_WEIGHT = 1.0


class QRError(ValueError):
    code = "qr-error"


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise QRError(f"epsilon-nonpositive: epsilon = {epsilon}")
    return epsilon


def misfit_terms(problem: CauchyProblem) -> list:
    """Data-misfit terms of the boundary-observation objective (no ``eps`` block)."""
    problem.require_boundary_data()
    g = problem.grid
    return [pde_term(g, problem.coeffs, problem.f), div_term(g, problem.d),
            pressure_stabilization_term(g),
            traction_term(g, problem.gamma_obs, problem.coeffs.nu, problem.g_N.values)]


def qr_terms(problem: CauchyProblem, epsilon: float) -> list:
    return misfit_terms(problem) + [regularization_term(problem.grid, _check_epsilon(epsilon))]


def interior_terms(problem: CauchyProblem, epsilon: float | None) -> list:
    if problem.window is None or problem.v_obs is None or len(problem.window) == 0:
        raise QRError("empty-window: the interior variant needs a nonempty observation window")
    g = problem.grid
    terms = [pde_term(g, problem.coeffs, problem.f), div_term(g, problem.d),
             pressure_stabilization_term(g),
             observation_term(g, problem.window, problem.v_obs, OBSERVATION_WEIGHT)]
    if epsilon is not None:
        terms.append(regularization_term(g, _check_epsilon(epsilon)))
    return terms


@dataclass(frozen=True)
class UnknownMap:
    """Free/fixed split of the packed state ``[v_x, v_y, p]``."""

    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    size: int

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = np.zeros(self.size)
        x[self.free] = x_free
        x[self.fixed] = self.fixed_values
        return x


def assemble_qr(problem: CauchyProblem, epsilon: float):
    """Normal equations of ``J_eps`` over the free unknowns.

    Returns
    -------
    A : csr_matrix
        SPD matrix over velocity unknowns off ``gamma_obs`` and all pressures.
    b : ndarray
        Right-hand side with the eliminated Dirichlet values moved over.
    unknowns : UnknownMap
    """
    terms = qr_terms(problem, epsilon)
    A_full, b_full = assemble_normal(terms)
    N3 = A_full.shape[0]
    fixed = dirichlet_dofs(problem.grid, problem.gamma_obs)
    mask = np.ones(N3, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    xfix = boundary_rows(problem.g_D.values)
    A_ff = A_full[free][:, free].tocsr()
    b = b_full[free] - A_full[free][:, fixed] @ xfix
    return A_ff, b, UnknownMap(free, fixed, xfix, N3)


# ---------------------------------------------------------------------------
# diagnostics

def data_misfit(problem: CauchyProblem, state: StokesState) -> float:
    """``J_eps(state) - eps |state|^2``; the floor ``rho_h`` at the exact state."""
    T, t = stack_terms(misfit_terms(problem))
    r = T @ state.vector() - t
    return float(r @ r)


def qr_objective(problem: CauchyProblem, epsilon: float, state: StokesState) -> float:
    return data_misfit(problem, state) + _check_epsilon(epsilon) * state_norm(state) ** 2


def compute_diagnostics(problem: CauchyProblem, state: StokesState) -> dict:
    """Residual diagnostics of a state, all as unweighted norms."""
    seg = problem.gamma_obs
    res = oseen_residual(state, problem.coeffs, problem.f)
    div = divergence(state.v) - problem.d
    out = {"pde_residual_l2": norm_l2(res), "div_h1_norm": norm_h1(div)}
    if problem.g_D is not None:
        ids = seg.node_ids
        vd = np.column_stack([state.v.x[ids], state.v.y[ids]]) - problem.g_D.values
        out["bc_dirichlet_residual"] = boundary_l2(vd, seg.weights)
    if problem.g_N is not None:
        tn = traction(state, seg, problem.coeffs.nu).values - problem.g_N.values
        out["bc_traction_residual"] = boundary_l2(tn, seg.weights)
    if problem.window is not None and problem.v_obs is not None:
        ids = problem.window.node_ids
        vo = np.column_stack([state.v.x[ids], state.v.y[ids]]) - problem.v_obs
        out["obs_residual"] = boundary_l2(vo, problem.window.weights)
    out["state_norm_h2h1"] = state_norm(state)
    return out


@dataclass
class QRSolution:
    state: StokesState
    epsilon: float
    diagnostics: dict
    report: SolveReport
    objective: float
    oseen_extension: bool = False
    variant: str = "boundary"

    def as_dict(self) -> dict:
        """Diagnostics JSON with a fixed key order."""
        d = {"epsilon": self.epsilon}
        for key in ("pde_residual_l2", "div_h1_norm", "bc_dirichlet_residual",
                    "bc_traction_residual", "obs_residual", "state_norm_h2h1"):
            if key in self.diagnostics:
                d[key] = self.diagnostics[key]
        d["objective"] = self.objective
        d["cg_iterations"] = self.report.iterations
        d["solver"] = self.report.method
        d["relative_residual"] = self.report.relative_residual
        d["oseen_extension"] = self.oseen_extension
        d["wall_ms"] = self.report.wall_ms
        return d


class QRSystem:
    """Factorized quasi-reversibility operator for one grid, coefficients and ``eps``.

    The factorization depends on the data only through the right-hand side,
    so :meth:`solve` can be called for any problem sharing grid and
    coefficients (noise sweeps, linearity checks).
    """

    def __init__(self, problem: CauchyProblem, epsilon: float, method: str = DEFAULT_METHOD,
                 tol: float = 1e-10, max_iter: int | None = None):
        t0 = time.perf_counter()
        self.epsilon = _check_epsilon(epsilon)
        self.problem = problem
        problem.require_boundary_data()
        self.system = ConstrainedLeastSquares(qr_terms(problem, self.epsilon),
                                              dirichlet_dofs(problem.grid, problem.gamma_obs),
                                              method=method, tol=tol, max_iter=max_iter)
        self.setup_ms = 1e3 * (time.perf_counter() - t0)

    def solve(self, problem: CauchyProblem | None = None) -> QRSolution:
        t0 = time.perf_counter()
        problem = self.problem if problem is None else problem
        if problem.grid != self.problem.grid or problem.coeffs is not self.problem.coeffs:
            raise ProblemError("problem does not share grid and coefficients with the factorization")
        problem.require_boundary_data()
        _, target = stack_terms(qr_terms(problem, self.epsilon))
        x, rep = self.system.solve(target, boundary_rows(problem.g_D.values))
        state = StokesState.from_vector(problem.grid, x)
        diag = compute_diagnostics(problem, state)
        obj = data_misfit(problem, state) + self.epsilon * diag["state_norm_h2h1"] ** 2
        wall = self.setup_ms + 1e3 * (time.perf_counter() - t0)
        rep = SolveReport(rep.iterations, rep.relative_residual, wall, rep.method)
        return QRSolution(state, self.epsilon, diag, rep, obj,
                          oseen_extension=not problem.coeffs.is_stokes)


def solve_qr(problem: CauchyProblem, epsilon: float, method: str = DEFAULT_METHOD,
             tol: float = 1e-10, max_iter: int | None = None) -> QRSolution:
    """Unique minimizer of ``J_eps`` for boundary Cauchy data on ``gamma_obs``."""
    problem.require_divergence_free()
    return QRSystem(problem, epsilon, method, tol, max_iter).solve()


def solve_qr_interior(problem: CauchyProblem, epsilon: float, method: str = DEFAULT_METHOD,
                      tol: float = 1e-10) -> QRSolution:
    """Minimizer with the boundary terms replaced by a window observation."""
    t0 = time.perf_counter()
    epsilon = _check_epsilon(epsilon)
    system = ConstrainedLeastSquares(interior_terms(problem, epsilon), None, method=method, tol=tol)
    x, rep = system.solve()
    state = StokesState.from_vector(problem.grid, x)
    diag = compute_diagnostics(problem.with_data(g_D=None, g_N=None), state)
    T, t = stack_terms(interior_terms(problem, None))
    r = T @ x - t
    obj = float(r @ r) + epsilon * diag["state_norm_h2h1"] ** 2
    rep = SolveReport(rep.iterations, rep.relative_residual,
                      1e3 * (time.perf_counter() - t0), rep.method)
    return QRSolution(state, epsilon, diag, rep, obj,
                      oseen_extension=not problem.coeffs.is_stokes, variant="interior")


def interior_misfit(problem: CauchyProblem, state: StokesState) -> float:
    T, t = stack_terms(interior_terms(problem, None))
    r = T @ state.vector() - t
    return float(r @ r)


def qr_apriori_check(solution: QRSolution, exact: StokesState | None,
                     slack: float = APRIORI_SLACK) -> dict:
    """Norm bounds of the regularized state against the exact one.

    ``norm_bound_ok``: ``|(v_e, p_e)| <= (1 + slack) M_h``;
    ``diff_bound_ok``: ``|(v_e - v, p_e - p)| <= (1 + slack) M_h``, both in
    the ``H2 x H1`` product norm with ``M_h`` the norm of the sampled exact state.
    """
    if exact is None:
        return {"applicable": False, "norm_bound_ok": None, "diff_bound_ok": None}
    M = state_norm(exact)
    sn = solution.diagnostics["state_norm_h2h1"]
    dn = state_norm(solution.state - exact)
    tol = 1e-12 * max(M, 1.0)
    return {"applicable": True, "M_h": M, "state_norm": sn, "diff_norm": dn,
            "norm_bound_ok": bool(sn <= (1 + slack) * M + tol),
            "diff_bound_ok": bool(dn <= (1 + slack) * M + tol)}
