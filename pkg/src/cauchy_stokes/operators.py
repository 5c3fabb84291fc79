"""Finite-difference operators on the node lattice.

First and second derivatives use 3-point centered stencils wherever both
neighbours exist and second-order one-sided stencils otherwise, so every
operator is O(h^2) accurate on smooth fields with no ghost nodes.  The mixed
derivative is the symmetrized product of the first-derivative matrices.

Block operators act on the packed state ``[v_x, v_y, p]`` of length ``3N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .fields import BoundaryField, ScalarField, StokesState, VectorField
from .mesh import BoundarySegment, Grid

_PAD = 3


@dataclass(frozen=True)
class Stencils:
    dx: sp.csr_matrix
    dy: sp.csr_matrix
    dxx: sp.csr_matrix
    dyy: sp.csr_matrix
    dxy: sp.csr_matrix

    @property
    def lap(self) -> sp.csr_matrix:
        return (self.dxx + self.dyy).tocsr()

    def d(self, axis: int) -> sp.csr_matrix:
        return self.dx if axis == 0 else self.dy


def _axis_operators(grid: Grid, axis: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    N, h = grid.num_nodes, grid.h
    padded = np.full((grid.n + 1 + 2 * _PAD,) * 2, -1, dtype=np.int64)
    padded[_PAD:-_PAD, _PAD:-_PAD] = grid.index
    i = grid.ij[:, 0] + _PAD
    j = grid.ij[:, 1] + _PAD

    def nb(s):
        return padded[j, i + s] if axis == 0 else padded[j + s, i]

    k = np.arange(N)
    m1, p1, m2, p2, m3, p3 = nb(-1), nb(1), nb(-2), nb(2), nb(-3), nb(3)
    centered = (m1 >= 0) & (p1 >= 0)
    fwd = ~centered & (p1 >= 0) & (p2 >= 0) & (p3 >= 0)
    bwd = ~centered & ~fwd & (m1 >= 0) & (m2 >= 0) & (m3 >= 0)
    if not np.all(centered | fwd | bwd):
        bad = grid.ij[~(centered | fwd | bwd)][0]
        raise RuntimeError(f"no stencil available at node {tuple(bad)} along axis {axis}")

    rows1, cols1, vals1 = [], [], []
    rows2, cols2, vals2 = [], [], []

    def put(rows, cols, vals, mask, cols_list, coefs, scale):
        for c, a in zip(cols_list, coefs):
            rows.append(k[mask])
            cols.append(c[mask])
            vals.append(np.full(int(mask.sum()), a / scale))

    put(rows1, cols1, vals1, centered, [m1, p1], [-1.0, 1.0], 2 * h)
    put(rows1, cols1, vals1, fwd, [k, p1, p2], [-3.0, 4.0, -1.0], 2 * h)
    put(rows1, cols1, vals1, bwd, [k, m1, m2], [3.0, -4.0, 1.0], 2 * h)
    put(rows2, cols2, vals2, centered, [m1, k, p1], [1.0, -2.0, 1.0], h * h)
    put(rows2, cols2, vals2, fwd, [k, p1, p2, p3], [2.0, -5.0, 4.0, -1.0], h * h)
    put(rows2, cols2, vals2, bwd, [k, m1, m2, m3], [2.0, -5.0, 4.0, -1.0], h * h)

    def build(rows, cols, vals):
        mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(N, N)).tocsr()
        mat.sum_duplicates()
        mat.eliminate_zeros()
        return mat

    return build(rows1, cols1, vals1), build(rows2, cols2, vals2)


@lru_cache(maxsize=16)
def stencils(grid: Grid) -> Stencils:
    dx, dxx = _axis_operators(grid, 0)
    dy, dyy = _axis_operators(grid, 1)
    dxy = (0.5 * (dx @ dy + dy @ dx)).tocsr()
    dxy.eliminate_zeros()
    return Stencils(dx=dx, dy=dy, dxx=dxx, dyy=dyy, dxy=dxy)


# ---------------------------------------------------------------------------
# field-level operators

def gradient(u: ScalarField) -> VectorField:
    S = stencils(u.grid)
    return VectorField(u.grid, S.dx @ u.values, S.dy @ u.values)


def divergence(y: VectorField) -> ScalarField:
    S = stencils(y.grid)
    return ScalarField(y.grid, S.dx @ y.x + S.dy @ y.y)


def laplacian(u: ScalarField | VectorField) -> ScalarField | VectorField:
    L = stencils(u.grid).lap
    if isinstance(u, VectorField):
        return VectorField(u.grid, L @ u.x, L @ u.y)
    return ScalarField(u.grid, L @ u.values)


def curl_vec(y: VectorField) -> ScalarField:
    S = stencils(y.grid)
    return ScalarField(y.grid, S.dx @ y.y - S.dy @ y.x)


def curl_scal(w: ScalarField) -> VectorField:
    S = stencils(w.grid)
    return VectorField(w.grid, S.dy @ w.values, -(S.dx @ w.values))


def velocity_gradient(y: VectorField) -> np.ndarray:
    """Nodal Jacobian ``G[k, a, b] = d y_a / d x_b``."""
    S = stencils(y.grid)
    G = np.empty((y.grid.num_nodes, 2, 2))
    for a, comp in enumerate(y.components):
        G[:, a, 0] = S.dx @ comp
        G[:, a, 1] = S.dy @ comp
    return G


def sym_gradient(y: VectorField) -> np.ndarray:
    G = velocity_gradient(y)
    return 0.5 * (G + G.transpose(0, 2, 1))


def traction(state: StokesState, segment: BoundarySegment, nu: float = 1.0) -> BoundaryField:
    """Cauchy stress times outward normal, ``(2 nu D(v) - p I) n``, per segment node."""
    ids = segment.node_ids
    D = sym_gradient(state.v)[ids]
    n = segment.normals
    sigma = 2.0 * nu * D
    sigma[:, 0, 0] -= state.p.values[ids]
    sigma[:, 1, 1] -= state.p.values[ids]
    return BoundaryField(segment, np.einsum("kab,kb->ka", sigma, n))


def normal_derivative(y: VectorField, segment: BoundarySegment) -> BoundaryField:
    G = velocity_gradient(y)[segment.node_ids]
    return BoundaryField(segment, np.einsum("kab,kb->ka", G, segment.normals))


# ---------------------------------------------------------------------------
# Oseen coefficients and residuals

@dataclass(frozen=True, eq=False)
class OseenCoefficients:
    """Viscosity and the two linearization fields of the Oseen operator.

    ``m_const = max(1, |z1|_inf, |grad z2|_L4)`` and ``K = exp(exp(m_const))``.
    ``K`` overflows a double as soon as ``m_const`` exceeds ~6.56, so the
    logarithm ``log_K = exp(m_const)`` is the quantity to compute with.
    """

    nu: float
    z1: VectorField
    z2: VectorField
    m_const: float = field(init=False)
    log_K: float = field(init=False)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")
        grid = self.z1.grid
        w = grid.area_weights
        z1_inf = float(np.max(np.hypot(self.z1.x, self.z1.y), initial=0.0))
        G = velocity_gradient(self.z2)
        frob2 = np.einsum("kab,kab->k", G, G)
        grad_l4 = float(np.sum(w * frob2**2) ** 0.25)
        m = max(1.0, z1_inf, grad_l4)
        object.__setattr__(self, "m_const", m)
        object.__setattr__(self, "log_K", math.exp(m))

    @property
    def K_const(self) -> float:
        return math.exp(self.log_K) if self.log_K < 709.0 else math.inf

    @property
    def is_stokes(self) -> bool:
        return not (np.any(self.z1.x) or np.any(self.z1.y) or np.any(self.z2.x) or np.any(self.z2.y))

    @classmethod
    def stokes(cls, grid: Grid, nu: float = 1.0) -> "OseenCoefficients":
        return cls(nu, VectorField.zeros(grid), VectorField.zeros(grid))


def oseen_residual(state: StokesState, coeffs: OseenCoefficients, f: VectorField) -> VectorField:
    """Nodal ``-nu lap v + (z1 . grad) v + (v . grad) z2 + grad p - f``."""
    r = oseen_matrix(state.grid, coeffs) @ state.vector()
    N = state.grid.num_nodes
    return VectorField(state.grid, r[:N] - f.x, r[N:] - f.y)


def div_residual(state: StokesState, d: ScalarField) -> ScalarField:
    return divergence(state.v) - d


# ---------------------------------------------------------------------------
# block matrices on the packed state [v_x, v_y, p]

def _hstack3(a, b, c) -> sp.csr_matrix:
    return sp.hstack([a, b, c], format="csr")


@lru_cache(maxsize=32)
def _zero(N: int) -> sp.csr_matrix:
    return sp.csr_matrix((N, N))


def oseen_matrix(grid: Grid, coeffs: OseenCoefficients) -> sp.csr_matrix:
    """Rows ``[x-momentum; y-momentum]`` of the Oseen operator, shape ``(2N, 3N)``."""
    S = stencils(grid)
    nu = coeffs.nu
    base = -nu * S.lap
    if not coeffs.is_stokes:
        z1 = coeffs.z1
        base = base + sp.diags(z1.x) @ S.dx + sp.diags(z1.y) @ S.dy
        Gz2 = velocity_gradient(coeffs.z2)
        blocks = [[base + sp.diags(Gz2[:, 0, 0]), sp.diags(Gz2[:, 0, 1]), S.dx],
                  [sp.diags(Gz2[:, 1, 0]), base + sp.diags(Gz2[:, 1, 1]), S.dy]]
    else:
        Z = _zero(grid.num_nodes)
        blocks = [[base, Z, S.dx], [Z, base, S.dy]]
    return sp.bmat(blocks, format="csr")


def div_matrix(grid: Grid) -> sp.csr_matrix:
    S = stencils(grid)
    return _hstack3(S.dx, S.dy, _zero(grid.num_nodes))


def _select(grid: Grid, ids: np.ndarray) -> sp.csr_matrix:
    m = len(ids)
    return sp.csr_matrix((np.ones(m), (np.arange(m), ids)), shape=(m, grid.num_nodes))


def trace_matrix(grid: Grid, segment: BoundarySegment) -> sp.csr_matrix:
    """Velocity trace, rows ``[v_x on segment; v_y on segment]``."""
    P = _select(grid, segment.node_ids)
    Z = sp.csr_matrix(P.shape)
    return sp.bmat([[P, Z, Z], [Z, P, Z]], format="csr")


def traction_matrix(grid: Grid, segment: BoundarySegment, nu: float) -> sp.csr_matrix:
    """Discrete ``sigma(v, p) n`` on a segment, rows component-major like :func:`trace_matrix`."""
    S = stencils(grid)
    P = _select(grid, segment.node_ids)
    n1 = sp.diags(segment.normals[:, 0])
    n2 = sp.diags(segment.normals[:, 1])
    Dx, Dy = P @ S.dx, P @ S.dy
    row1 = [nu * (2 * n1 @ Dx + n2 @ Dy), nu * (n2 @ Dx), -(n1 @ P)]
    row2 = [nu * (n1 @ Dy), nu * (n1 @ Dx + 2 * n2 @ Dy), -(n2 @ P)]
    mat = sp.bmat([row1, row2], format="csr")
    mat.eliminate_zeros()
    return mat


def boundary_rows(values: np.ndarray) -> np.ndarray:
    """Flatten an ``(m, 2)`` boundary array to the component-major row order."""
    return np.asarray(values, dtype=float).T.ravel()


def boundary_values(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    return rows.reshape(2, -1).T
