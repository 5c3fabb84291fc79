"""Penalized Kohn-Vogelius minimization on the square annulus.

Two mixed forward problems share the source and split the Cauchy data on
the outer boundary ``gamma_obs``:

* phi-problem: ``v = g_D`` on ``gamma_obs``, ``sigma n = phi`` on ``gamma_c``;
* psi-problem: ``sigma n = g_N`` on ``gamma_obs``, ``v = psi`` on ``gamma_c``.

With ``u = (phi, psi)`` the penalized functional is

    F_eps(u) = |v_phi - v_psi|^2_{H1 semi} + |v_phi - v_psi|^2_{H2 semi}
               + eps (|x_phi|^2 + |x_psi|^2)

in the ``H2 x H1`` state norm.  Both forward maps are affine in ``u`` and do
not depend on ``eps``, so the reduced model (``x_phi = a + B_phi phi``,
``x_psi = c + B_psi psi``) is built once from two sparse factorizations and
reused for every ``eps`` of a sweep.  The minimizer solves the dense
``4m x 4m`` system ``H u = -g`` by Cholesky.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fields import BoundaryField, StokesState
from .linalg import DenseCholesky, NotPositiveDefinite, SolveReport
from .lsq import DEFAULT_METHOD, forward_system, solve_mixed, traction_weight
from .mesh import DomainKind, Grid
from .norms import (FractionalNormOperator, seminorm_h1, seminorm_h2, state_gram, state_norm,
                    velocity_seminorm_rows)
from .operators import OseenCoefficients, boundary_rows, boundary_values, traction
from .problem import CauchyProblem

APRIORI_SLACK = 0.1


class KVError(ValueError):
    code = "kv-error"


def _check_domain(grid: Grid) -> None:
    if grid.kind is not DomainKind.SQUARE_ANNULUS:
        raise KVError("wrong-domain-kind: Kohn-Vogelius needs the square annulus, whose "
                      "observed and complementary boundaries have disjoint closures")


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise KVError(f"epsilon-nonpositive: epsilon = {epsilon}")
    return epsilon


@dataclass(frozen=True)
class KVUnknown:
    """Traction guess ``phi_N`` and Dirichlet guess ``psi_D`` on ``gamma_c``."""

    phi_N: BoundaryField
    psi_D: BoundaryField

    def __post_init__(self):
        if not np.array_equal(self.phi_N.segment.node_ids, self.psi_D.segment.node_ids):
            raise KVError("phi_N and psi_D must live on the same segment")
        if not (self.phi_N.is_vector and self.psi_D.is_vector):
            raise KVError("phi_N and psi_D are vector boundary fields")

    def vector(self) -> np.ndarray:
        return np.concatenate([boundary_rows(self.phi_N.values), boundary_rows(self.psi_D.values)])

    @classmethod
    def from_vector(cls, segment, u: np.ndarray) -> "KVUnknown":
        u = np.asarray(u, dtype=float)
        m2 = 2 * len(segment)
        if u.shape != (2 * m2,):
            raise KVError(f"unknown vector needs length {2 * m2}, got {u.shape}")
        return cls(BoundaryField(segment, boundary_values(u[:m2])),
                   BoundaryField(segment, boundary_values(u[m2:])))

    @classmethod
    def zeros(cls, segment) -> "KVUnknown":
        return cls.from_vector(segment, np.zeros(4 * len(segment)))

    @classmethod
    def from_state(cls, state: StokesState, segment, nu: float) -> "KVUnknown":
        """Traction and trace of ``state`` on ``segment``: the exact-data unknown."""
        ids = segment.node_ids
        return cls(traction(state, segment, nu),
                   BoundaryField(segment, np.column_stack([state.v.x[ids], state.v.y[ids]])))


# ---------------------------------------------------------------------------
# forward problems

def solve_forward_phi(grid: Grid, coeffs: OseenCoefficients, f, g_D, phi_N, d=None,
                      method: str = DEFAULT_METHOD, tol: float = 1e-10) -> StokesState:
    """Dirichlet ``g_D`` on ``gamma_obs``, traction ``phi_N`` on ``gamma_c``."""
    _check_domain(grid)
    state, _ = solve_mixed(grid, coeffs, f, d, dirichlet={"gamma_obs": _values(g_D)},
                           traction={"gamma_c": _values(phi_N)}, method=method, tol=tol)
    return state


def solve_forward_psi(grid: Grid, coeffs: OseenCoefficients, f, g_N, psi_D, d=None,
                      method: str = DEFAULT_METHOD, tol: float = 1e-10) -> StokesState:
    """Traction ``g_N`` on ``gamma_obs``, Dirichlet ``psi_D`` on ``gamma_c``."""
    _check_domain(grid)
    state, _ = solve_mixed(grid, coeffs, f, d, dirichlet={"gamma_c": _values(psi_D)},
                           traction={"gamma_obs": _values(g_N)}, method=method, tol=tol)
    return state


def _values(g) -> np.ndarray:
    return g.values if isinstance(g, BoundaryField) else np.asarray(g, dtype=float)


def forward_states(problem: CauchyProblem, unknown: KVUnknown, method: str = DEFAULT_METHOD,
                   tol: float = 1e-10) -> tuple[StokesState, StokesState]:
    problem.require_boundary_data()
    g, c = problem.grid, problem.coeffs
    phi = solve_forward_phi(g, c, problem.f, problem.g_D, unknown.phi_N, problem.d, method, tol)
    psi = solve_forward_psi(g, c, problem.f, problem.g_N, unknown.psi_D, problem.d, method, tol)
    return phi, psi


def gap_seminorms(state_phi: StokesState, state_psi: StokesState) -> tuple[float, float]:
    gap = state_phi.v - state_psi.v
    return seminorm_h1(gap), seminorm_h2(gap)


def kv_value(unknown: KVUnknown, problem: CauchyProblem, epsilon: float,
             method: str = DEFAULT_METHOD, tol: float = 1e-10) -> tuple[float, float]:
    """``(F, F_eps)`` from two fresh forward solves."""
    epsilon = _check_epsilon(epsilon)
    phi, psi = forward_states(problem, unknown, method, tol)
    h1, h2 = gap_seminorms(phi, psi)
    F = h1**2 + h2**2
    return F, F + epsilon * (state_norm(phi) ** 2 + state_norm(psi) ** 2)


# ---------------------------------------------------------------------------
# reduced model

class KVReducedModel:
    """Affine forward maps and the ``eps``-independent blocks of the reduced Hessian."""

    def __init__(self, problem: CauchyProblem, method: str = DEFAULT_METHOD, tol: float = 1e-10):
        t0 = time.perf_counter()
        _check_domain(problem.grid)
        problem.require_boundary_data()
        problem.require_divergence_free()
        self.problem = problem
        grid = problem.grid
        self.segment = grid.segment("gamma_c")
        m2 = 2 * len(self.segment)
        self.m2 = m2

        zeros_c = np.zeros((len(self.segment), 2))
        # phi-problem: traction on gamma_c enters the target linearly
        sys_phi = forward_system(grid, problem.coeffs, problem.f, problem.d, ("gamma_obs",),
                                 {"gamma_c": zeros_c}, method=method, tol=tol)
        a, _ = sys_phi.solve(fixed_values=boundary_rows(problem.g_D.values))
        rows = sys_phi.rows["traction:gamma_c"]
        E_phi = np.zeros((len(sys_phi.target), m2))
        E_phi[rows, :] = np.diag(self._row_scale(grid))
        B_phi = sys_phi.solve_many(E_phi, np.zeros((len(sys_phi.fixed), m2)))

        # psi-problem: Dirichlet values on gamma_c are eliminated unknowns
        sys_psi = forward_system(grid, problem.coeffs, problem.f, problem.d, ("gamma_c",),
                                 {"gamma_obs": problem.g_N.values}, method=method, tol=tol)
        c, _ = sys_psi.solve(fixed_values=np.zeros(m2))
        B_psi = sys_psi.solve_many(np.zeros((len(sys_psi.target), m2)), np.eye(m2))

        self.a, self.c, self.B_phi, self.B_psi = a, c, B_phi, B_psi
        self.sys_phi, self.sys_psi = sys_phi, sys_psi

        Rg = sp.vstack([velocity_seminorm_rows(grid, "h1"), velocity_seminorm_rows(grid, "h2")],
                       format="csr")
        self.gap_rows = Rg
        E = np.hstack([B_phi, -B_psi])
        e0 = a - c
        RE = Rg @ E
        Re0 = Rg @ e0
        self.H_gap = RE.T @ RE
        self.g_gap = RE.T @ Re0
        self.F0 = float(Re0 @ Re0)
        S = state_gram(grid)
        SB_phi, SB_psi = S @ B_phi, S @ B_psi
        self.H_reg = sla.block_diag(B_phi.T @ SB_phi, B_psi.T @ SB_psi)
        self.g_reg = np.concatenate([SB_phi.T @ a, SB_psi.T @ c])
        self.reg0 = float(a @ (S @ a) + c @ (S @ c))
        self.build_ms = 1e3 * (time.perf_counter() - t0)

    def _row_scale(self, grid: Grid) -> np.ndarray:
        """``sqrt(beta w)`` of the traction rows on ``gamma_c``, component-major."""
        return np.sqrt(traction_weight(grid) * np.tile(self.segment.weights, 2))

    @property
    def reduced_dim(self) -> int:
        return 2 * self.m2

    def states(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        phi, psi = u[:self.m2], u[self.m2:]
        return self.a + self.B_phi @ phi, self.c + self.B_psi @ psi

    def hessian(self, epsilon: float) -> np.ndarray:
        return self.H_gap + epsilon * self.H_reg

    def gradient_offset(self, epsilon: float) -> np.ndarray:
        return self.g_gap + epsilon * self.g_reg

    def value(self, u: np.ndarray, epsilon: float) -> tuple[float, float]:
        """``(F, F_eps)`` from the quadratic model."""
        F = float(u @ (self.H_gap @ u) + 2 * self.g_gap @ u + self.F0)
        reg = float(u @ (self.H_reg @ u) + 2 * self.g_reg @ u + self.reg0)
        return F, F + epsilon * reg

    def gradient(self, u: np.ndarray, epsilon: float) -> np.ndarray:
        return 2.0 * (self.hessian(epsilon) @ u + self.gradient_offset(epsilon))


# ---------------------------------------------------------------------------
# minimization

@dataclass
class KVSolution:
    unknown: KVUnknown
    epsilon: float
    state_phi: StokesState
    state_psi: StokesState
    F_value: float
    F_eps_value: float
    gap_h1: float
    gap_h2: float
    norm_phi_state: float
    norm_psi_state: float
    traction_gap_h12: float
    min_hessian_eig: float
    report: SolveReport

    @property
    def state(self) -> StokesState:
        """Velocity of the phi-problem with pressure of the psi-problem."""
        return StokesState(self.state_phi.v, self.state_psi.p)

    @property
    def alternative_state(self) -> StokesState:
        return StokesState(self.state_psi.v, self.state_phi.p)

    @property
    def reduced_dim(self) -> int:
        return 4 * len(self.unknown.phi_N.segment)

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "F_value": self.F_value, "F_eps_value": self.F_eps_value,
                "gap_h1": self.gap_h1, "gap_h2": self.gap_h2,
                "norm_phi_state": self.norm_phi_state, "norm_psi_state": self.norm_psi_state,
                "traction_gap_h12": self.traction_gap_h12, "reduced_dim": self.reduced_dim,
                "min_hessian_eig": self.min_hessian_eig, "wall_ms": self.report.wall_ms}


def traction_gap(problem: CauchyProblem, state: StokesState) -> float:
    """``|sigma(v, p) n - g_N|_{H^{1/2}(gamma_obs)}``."""
    seg = problem.gamma_obs
    diff = traction(state, seg, problem.coeffs.nu).values - problem.g_N.values
    return FractionalNormOperator.for_segment(seg).norm(diff, 0.5)


def minimize_kv(problem: CauchyProblem, epsilon: float, model: KVReducedModel | None = None,
                method: str = DEFAULT_METHOD, tol: float = 1e-10) -> KVSolution:
    """Global minimizer of the discrete ``F_eps`` over ``(phi_N, psi_D)``."""
    t0 = time.perf_counter()
    epsilon = _check_epsilon(epsilon)
    if model is None:
        model = KVReducedModel(problem, method, tol)
    elif model.problem is not problem:
        raise KVError("reduced model was built for a different problem")
    H = model.hessian(epsilon)
    H = 0.5 * (H + H.T)
    try:
        u = -DenseCholesky(H).solve(model.gradient_offset(epsilon))
    except NotPositiveDefinite as exc:
        raise KVError(f"reduced-system-not-PD: {exc}") from None
    min_eig = float(sla.eigvalsh(H, subset_by_index=[0, 0])[0])
    resid = np.linalg.norm(H @ u + model.gradient_offset(epsilon))
    rhs = np.linalg.norm(model.gradient_offset(epsilon))
    x_phi, x_psi = model.states(u)
    grid = problem.grid
    phi = StokesState.from_vector(grid, x_phi)
    psi = StokesState.from_vector(grid, x_psi)
    h1, h2 = gap_seminorms(phi, psi)
    n_phi, n_psi = state_norm(phi), state_norm(psi)
    F = h1**2 + h2**2
    unknown = KVUnknown.from_vector(model.segment, u)
    wall = model.build_ms + 1e3 * (time.perf_counter() - t0)
    report = SolveReport(model.reduced_dim, float(resid / rhs) if rhs > 0 else 0.0, wall, "dense")
    sol = KVSolution(unknown, epsilon, phi, psi, F, F + epsilon * (n_phi**2 + n_psi**2), h1, h2,
                     n_phi, n_psi, 0.0, min_eig, report)
    sol.traction_gap_h12 = traction_gap(problem, sol.state)
    return sol


def exact_unknown(problem: CauchyProblem) -> KVUnknown:
    if problem.exact is None:
        raise KVError("no exact state attached to the problem")
    seg = problem.grid.segment("gamma_c")
    return KVUnknown.from_state(problem.exact, seg, problem.coeffs.nu)


def kv_gradient_check(problem: CauchyProblem, epsilon: float, unknown: KVUnknown,
                      direction: np.ndarray, model: KVReducedModel | None = None,
                      step: float | None = None, tol: float = 1e-10) -> dict:
    """Compare the reduced-model derivative of ``F_eps`` with central differences
    of :func:`kv_value` (two fresh forward solves per evaluation)."""
    direction = np.asarray(direction, dtype=float)
    if not np.any(direction):
        raise KVError("direction must be nonzero")
    epsilon = _check_epsilon(epsilon)
    if model is None:
        model = KVReducedModel(problem, tol=tol)
    u = unknown.vector()
    model_deriv = float(model.gradient(u, epsilon) @ direction)
    if step is None:
        step = max(1.0, np.linalg.norm(u)) / np.linalg.norm(direction)
    seg = model.segment
    fp = kv_value(KVUnknown.from_vector(seg, u + step * direction), problem, epsilon, tol=tol)[1]
    fm = kv_value(KVUnknown.from_vector(seg, u - step * direction), problem, epsilon, tol=tol)[1]
    fd = (fp - fm) / (2 * step)
    scale = max(abs(model_deriv), abs(fd), np.finfo(float).tiny)
    return {"model_derivative": model_deriv, "fd_derivative": fd, "step": step,
            "relative_error": abs(model_deriv - fd) / scale}


def kv_floor(problem: CauchyProblem, model: KVReducedModel) -> dict:
    """Reference quantities at the exact-data unknown.

    ``rho_h`` is ``F`` there; ``norm_excess`` is how much the two exact-data
    forward states exceed ``2 M_h^2`` in squared norm.
    """
    u_ex = exact_unknown(problem).vector()
    x_phi, x_psi = model.states(u_ex)
    grid = problem.grid
    phi, psi = StokesState.from_vector(grid, x_phi), StokesState.from_vector(grid, x_psi)
    h1, h2 = gap_seminorms(phi, psi)
    M = state_norm(problem.exact)
    sq = state_norm(phi) ** 2 + state_norm(psi) ** 2
    return {"rho_h": h1**2 + h2**2, "M_h": M, "norm_sq_exact_unknown": sq,
            "norm_excess": max(0.0, sq - 2 * M**2),
            "traction_gap_floor": traction_gap(problem, StokesState(phi.v, psi.p))}
