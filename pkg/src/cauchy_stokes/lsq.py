"""Least-squares building blocks shared by the forward, QR and KV solvers.

Every discrete problem here minimizes a sum of weighted squared residuals
over the packed state ``x = [v_x, v_y, p]``, with some velocity unknowns
fixed by Dirichlet data.  Terms carry ``sqrt(weight)`` inside their rows so
that all weights in :class:`~cauchy_stokes.linalg.LeastSquaresTerm` are 1.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fields import ScalarField, StokesState, VectorField
from .linalg import LeastSquaresSolver, LeastSquaresTerm, SolveReport, stack_terms
from .mesh import BoundarySegment, Grid, SubdomainWindow
from .norms import state_rows
from .operators import (OseenCoefficients, boundary_rows, div_matrix, oseen_matrix, stencils,
                        trace_matrix, traction_matrix)

DEFAULT_METHOD = "normal"


def traction_weight(grid: Grid) -> float:
    """Penalty weight on boundary traction residuals, ``1/h``."""
    return 1.0 / grid.h


def _sqrt_diag(w) -> sp.dia_matrix:
    return sp.diags(np.sqrt(np.asarray(w, dtype=float)))


def pde_term(grid: Grid, coeffs: OseenCoefficients, f: VectorField) -> LeastSquaresTerm:
    """``|-nu lap v + (z1.grad)v + (v.grad)z2 + grad p - f|^2_{L2}``."""
    sw = _sqrt_diag(np.tile(grid.area_weights, 2))
    return LeastSquaresTerm(sw @ oseen_matrix(grid, coeffs), sw @ f.stack(), 1.0, "pde")


def div_term(grid: Grid, d: ScalarField) -> LeastSquaresTerm:
    """``|div v - d|^2_{H1}``: L2 of the divergence and of its gradient."""
    S = stencils(grid)
    sw = _sqrt_diag(grid.area_weights)
    Dv = div_matrix(grid)
    op = sp.vstack([sw @ Dv, sw @ S.dx @ Dv, sw @ S.dy @ Dv], format="csr")
    dv = d.values
    tgt = np.concatenate([sw @ dv, sw @ (S.dx @ dv), sw @ (S.dy @ dv)])
    return LeastSquaresTerm(op, tgt, 1.0, "div")


def pressure_stabilization_term(grid: Grid, gamma: float = 1.0) -> LeastSquaresTerm:
    """``gamma h^2 |(L_compact - L_wide) p|^2_{L2}``.

    Centered first differences cannot see odd-even pressure modes on a
    collocated lattice.  The difference between the compact 5-point Laplacian
    and the wide Laplacian ``Dx Dx + Dy Dy`` is ``O(h^2)`` on smooth fields but
    ``O(1/h^2)`` on a checkerboard, so this term removes the spurious modes
    while leaving the consistency order of the PDE rows intact.
    """
    S = stencils(grid)
    N = grid.num_nodes
    wide = S.dx @ S.dx + S.dy @ S.dy
    sw = _sqrt_diag(gamma * grid.h**2 * grid.area_weights)
    Z = sp.csr_matrix((N, N))
    op = sp.hstack([Z, Z, sw @ (S.lap - wide)], format="csr")
    op.eliminate_zeros()
    return LeastSquaresTerm(op, np.zeros(N), 1.0, "stab")


def regularization_term(grid: Grid, epsilon: float) -> LeastSquaresTerm:
    """``epsilon (|v|^2_{H2} + |p|^2_{H1})``."""
    R = state_rows(grid)
    return LeastSquaresTerm(np.sqrt(epsilon) * R, np.zeros(R.shape[0]), 1.0, "reg")


def traction_term(grid: Grid, segment: BoundarySegment, nu: float, target: np.ndarray,
                  beta: float | None = None, name: str = "traction") -> LeastSquaresTerm:
    """``beta |sigma(v,p) n - target|^2_{L2(segment)}`` with arclength weights."""
    beta = traction_weight(grid) if beta is None else beta
    sw = _sqrt_diag(beta * np.tile(segment.weights, 2))
    return LeastSquaresTerm(sw @ traction_matrix(grid, segment, nu),
                            sw @ boundary_rows(target), 1.0, name)


def robin_term(grid: Grid, segment: BoundarySegment, nu: float, alpha: np.ndarray,
               beta: float | None = None) -> LeastSquaresTerm:
    """``beta |sigma(v,p) n + alpha v|^2_{L2(segment)}``."""
    beta = traction_weight(grid) if beta is None else beta
    sw = _sqrt_diag(beta * np.tile(segment.weights, 2))
    a = sp.diags(np.tile(np.asarray(alpha, dtype=float), 2))
    op = traction_matrix(grid, segment, nu) + a @ trace_matrix(grid, segment)
    return LeastSquaresTerm(sw @ op, np.zeros(op.shape[0]), 1.0, "robin")


def observation_term(grid: Grid, win: SubdomainWindow, v_obs: np.ndarray,
                     beta: float = 1.0) -> LeastSquaresTerm:
    """``beta |v - v_obs|^2_{L2(window)}``."""
    m, N = len(win), grid.num_nodes
    P = sp.csr_matrix((np.ones(m), (np.arange(m), win.node_ids)), shape=(m, N))
    Z = sp.csr_matrix((m, N))
    sw = _sqrt_diag(beta * np.tile(win.weights, 2))
    op = sp.bmat([[P, Z, Z], [Z, P, Z]], format="csr")
    return LeastSquaresTerm(sw @ op, sw @ boundary_rows(v_obs), 1.0, "obs")


def dirichlet_dofs(grid: Grid, segment: BoundarySegment) -> np.ndarray:
    """Indices of the velocity unknowns on ``segment``, component-major."""
    N = grid.num_nodes
    return np.concatenate([segment.node_ids, N + segment.node_ids])


class ConstrainedLeastSquares:
    """Factorized least-squares problem with some unknowns fixed.

    Parameters
    ----------
    terms : list of LeastSquaresTerm
        Terms over the full packed state.
    fixed : ndarray of int
        Unknowns whose values are prescribed at solve time.
    method, tol
        Passed to :class:`~cauchy_stokes.linalg.LeastSquaresSolver`.
    """

    def __init__(self, terms, fixed=None, method: str = DEFAULT_METHOD, tol: float = 1e-10,
                 max_iter: int | None = None):
        self.terms = list(terms)
        T, t = stack_terms(self.terms)
        self.ncol = T.shape[1]
        self.fixed = np.asarray([] if fixed is None else fixed, dtype=np.int64)
        if len(np.unique(self.fixed)) != len(self.fixed):
            raise ValueError("fixed unknowns must be distinct")
        mask = np.ones(self.ncol, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)
        Tc = T.tocsc()
        self.T_free = Tc[:, self.free].tocsr()
        self.T_fixed = Tc[:, self.fixed].tocsr()
        self.target = t
        offsets = np.cumsum([0] + [term.operator.shape[0] for term in self.terms])
        self.rows = {term.name: slice(offsets[k], offsets[k + 1])
                     for k, term in enumerate(self.terms)}
        self.solver = LeastSquaresSolver(self.T_free, method=method, tol=tol, max_iter=max_iter)

    def _assemble(self, x_free: np.ndarray, fixed_values: np.ndarray) -> np.ndarray:
        shape = (self.ncol,) + x_free.shape[1:]
        x = np.zeros(shape)
        x[self.free] = x_free
        x[self.fixed] = fixed_values
        return x

    def solve(self, target: np.ndarray | None = None,
              fixed_values: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
        t = self.target if target is None else np.asarray(target, dtype=float)
        xf = np.zeros(len(self.fixed)) if fixed_values is None else np.asarray(fixed_values, float)
        x_free, report = self.solver.solve(t - self.T_fixed @ xf)
        return self._assemble(x_free, xf), report

    def solve_many(self, targets: np.ndarray, fixed_values: np.ndarray) -> np.ndarray:
        """Columns of full states for columns of targets / fixed values."""
        rhs = targets - self.T_fixed @ fixed_values
        return self._assemble(self.solver.solve_many(rhs), fixed_values)

    def residual_norms(self, x: np.ndarray, target: np.ndarray | None = None) -> dict:
        """Per-term ``|rows x - target|`` for a full state ``x``."""
        t = self.target if target is None else target
        r = self.T_free @ x[self.free] + self.T_fixed @ x[self.fixed] - t
        return {name: float(np.linalg.norm(r[s])) for name, s in self.rows.items()}


def forward_system(grid: Grid, coeffs: OseenCoefficients, f: VectorField, d: ScalarField,
                   dirichlet_segments=(), traction_data=None, robin_data=None,
                   method: str = DEFAULT_METHOD, tol: float = 1e-10) -> ConstrainedLeastSquares:
    """Factorized forward problem: PDE + div in H1, Dirichlet by elimination on
    ``dirichlet_segments`` and penalized traction / Robin conditions."""
    terms = [pde_term(grid, coeffs, f), div_term(grid, d), pressure_stabilization_term(grid)]
    for name, g in (traction_data or {}).items():
        terms.append(traction_term(grid, grid.segment(name), coeffs.nu, g, name=f"traction:{name}"))
    for name, alpha in (robin_data or {}).items():
        terms.append(robin_term(grid, grid.segment(name), coeffs.nu, alpha))
    fixed = [dirichlet_dofs(grid, grid.segment(name)) for name in dirichlet_segments]
    fixed = np.concatenate(fixed) if fixed else None
    return ConstrainedLeastSquares(terms, fixed, method=method, tol=tol)


def solve_mixed(grid: Grid, coeffs: OseenCoefficients, f: VectorField, d: ScalarField | None = None,
                dirichlet=None, traction=None, robin=None, method: str = DEFAULT_METHOD,
                tol: float = 1e-10) -> tuple[StokesState, SolveReport]:
    """One forward solve.

    ``dirichlet`` and ``traction`` map segment names to ``(m, 2)`` nodal data;
    ``robin`` maps segment names to nodal coefficients ``alpha`` in
    ``sigma n + alpha v = 0``.
    """
    d = ScalarField.zeros(grid) if d is None else d
    dirichlet = dirichlet or {}
    system = forward_system(grid, coeffs, f, d, tuple(dirichlet), traction, robin, method, tol)
    fixed_vals = (np.concatenate([boundary_rows(v) for v in dirichlet.values()])
                  if dirichlet else None)
    x, report = system.solve(fixed_values=fixed_vals)
    return StokesState.from_vector(grid, x), report
