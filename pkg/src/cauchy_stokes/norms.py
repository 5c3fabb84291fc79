"""Discrete Sobolev norms on the domain and fractional norms on boundary segments.

Domain norms are trapezoid-weighted sums of squared nodal values and stencil
derivatives.  Each norm also has a *row form*: a sparse matrix ``R`` with
``|R u|_2^2 = |u|^2``, which lets the solvers treat norms as least-squares
terms.

Fractional boundary norms are spectral: with ``(mu_k, e_k)`` the eigenpairs
of the 1D second-difference operator along the segment (periodic on closed
loops, Dirichlet on open runs), orthonormal in the arclength-weighted inner
product, ``|g|_{H^s}^2 = sum_k (1 + mu_k)^s <g, e_k>^2``.
"""

from __future__ import annotations

import weakref
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fields import BoundaryField, ScalarField, StokesState, VectorField
from .mesh import BoundarySegment, Grid, SubdomainWindow
from .operators import stencils

SUPPORTED_ORDERS = (0.0, 0.5, 1.0, 1.5)


class NormError(ValueError):
    pass


def _components(field) -> list[np.ndarray]:
    if isinstance(field, VectorField):
        return [field.x, field.y]
    if isinstance(field, ScalarField):
        return [field.values]
    raise TypeError(f"expected ScalarField or VectorField, got {type(field).__name__}")


def _weights(grid: Grid, region: SubdomainWindow | None):
    if region is None:
        return slice(None), grid.area_weights
    return region.node_ids, region.weights


def _sq(grid, comps, region) -> float:
    idx, w = _weights(grid, region)
    return float(sum(np.dot(w, c[idx] ** 2) for c in comps))


def norm_l2(field, region: SubdomainWindow | None = None) -> float:
    return float(np.sqrt(_sq(field.grid, _components(field), region)))


def seminorm_h1(field, region: SubdomainWindow | None = None) -> float:
    S = stencils(field.grid)
    comps = [D @ c for c in _components(field) for D in (S.dx, S.dy)]
    return float(np.sqrt(_sq(field.grid, comps, region)))


def seminorm_h2(field, region: SubdomainWindow | None = None) -> float:
    """``(sum w (u_xx^2 + 2 u_xy^2 + u_yy^2))^{1/2}``."""
    S = stencils(field.grid)
    total = 0.0
    for c in _components(field):
        total += _sq(field.grid, [S.dxx @ c, S.dyy @ c], region)
        total += 2.0 * _sq(field.grid, [S.dxy @ c], region)
    return float(np.sqrt(total))


def norm_h1(field, region: SubdomainWindow | None = None) -> float:
    return float(np.hypot(norm_l2(field, region), seminorm_h1(field, region)))


def norm_h2(field, region: SubdomainWindow | None = None) -> float:
    return float(np.sqrt(norm_h1(field, region) ** 2 + seminorm_h2(field, region) ** 2))


def state_norm(state: StokesState) -> float:
    """Product norm ``(|v|_{H^2}^2 + |p|_{H^1}^2)^{1/2}``."""
    return float(np.sqrt(norm_h2(state.v) ** 2 + norm_h1(state.p) ** 2))


# ---------------------------------------------------------------------------
# row forms and Gram matrices

@lru_cache(maxsize=32)
def scalar_rows(grid: Grid, parts: tuple[str, ...]) -> sp.csr_matrix:
    """Stacked rows ``sqrt(w) * D`` for ``D`` named in ``parts``.

    Part names: ``l2``, ``h1`` (the two first derivatives) and ``h2`` (the
    three second derivatives, mixed term doubled).
    """
    S = stencils(grid)
    sw = sp.diags(np.sqrt(grid.area_weights))
    blocks = []
    for part in parts:
        if part == "l2":
            blocks.append(sw)
        elif part == "h1":
            blocks += [sw @ S.dx, sw @ S.dy]
        elif part == "h2":
            blocks += [sw @ S.dxx, np.sqrt(2.0) * (sw @ S.dxy), sw @ S.dyy]
        else:
            raise NormError(f"unknown norm part {part!r}")
    return sp.vstack(blocks, format="csr")


def scalar_gram(grid: Grid, parts: tuple[str, ...]) -> sp.csr_matrix:
    R = scalar_rows(grid, parts)
    return (R.T @ R).tocsr()


@lru_cache(maxsize=16)
def state_rows(grid: Grid) -> sp.csr_matrix:
    """Rows ``R`` on the packed state with ``|R x|^2 = state_norm^2``."""
    Rv = scalar_rows(grid, ("l2", "h1", "h2"))
    Rp = scalar_rows(grid, ("l2", "h1"))
    return sp.block_diag([Rv, Rv, Rp], format="csr")


@lru_cache(maxsize=16)
def state_gram(grid: Grid) -> sp.csr_matrix:
    R = state_rows(grid)
    return (R.T @ R).tocsr()


@lru_cache(maxsize=16)
def velocity_seminorm_rows(grid: Grid, part: str) -> sp.csr_matrix:
    """Rows for ``|v|_{H^1}`` (``part='h1'``) or ``|v|_{H^2}`` (``'h2'``) of the velocity block."""
    R = scalar_rows(grid, (part,))
    Z = sp.csr_matrix((R.shape[0], grid.num_nodes))
    return sp.bmat([[R, None, Z], [None, R, Z]], format="csr")


# ---------------------------------------------------------------------------
# fractional boundary norms

class FractionalNormOperator:
    """Spectral fractional norm on a closed boundary loop or an open run.

    Parameters
    ----------
    weights : ndarray
        Arclength quadrature weights of the nodes.
    h : float
        Node spacing along the boundary.
    closed : bool
        Periodic second difference if True, homogeneous Dirichlet (zero
        ghost values past both ends) otherwise.
    """

    def __init__(self, weights: np.ndarray, h: float, closed: bool):
        w = np.asarray(weights, dtype=float)
        m = len(w)
        if m < 2:
            raise NormError("fractional norm needs at least two nodes")
        K = 2.0 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)
        if closed:
            K[0, -1] -= 1.0
            K[-1, 0] -= 1.0
        K /= h
        mu, E = sla.eigh(K, np.diag(w))
        self.weights = w
        self.h = h
        self.closed = closed
        self.mu = np.maximum(mu, 0.0)
        self.modes = E  # W-orthonormal columns

    @classmethod
    def for_segment(cls, segment: BoundarySegment) -> "FractionalNormOperator":
        try:
            return _SEGMENT_CACHE[segment]
        except KeyError:
            op = cls(segment.weights, segment.h, segment.closed)
            _SEGMENT_CACHE[segment] = op
            return op

    @classmethod
    def for_run(cls, run: SubdomainWindow) -> "FractionalNormOperator":
        seg = run.segment
        full = seg is not None and seg.closed and len(run) == len(seg)
        return cls(run.weights, seg.h if seg is not None else 1.0, closed=full)

    def __len__(self) -> int:
        return len(self.weights)

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """``<g, e_k>_W`` per mode (rows) and component (columns)."""
        g = np.asarray(values, dtype=float)
        return self.modes.T @ (self.weights[:, None] * g.reshape(len(self), -1))

    def multiplier(self, s: float) -> np.ndarray:
        s = float(s)
        if s not in SUPPORTED_ORDERS:
            raise NormError(f"order-not-supported: s = {s}, expected one of {SUPPORTED_ORDERS}")
        return (1.0 + self.mu) ** s

    def norm(self, values: np.ndarray, s: float) -> float:
        c = self.coefficients(values)
        return float(np.sqrt(np.sum(self.multiplier(s)[:, None] * c**2)))

    def gram(self, s: float) -> np.ndarray:
        """Dense ``G`` with ``g^T G g = |g|_{H^s}^2`` for one scalar component."""
        WE = self.weights[:, None] * self.modes
        return (WE * self.multiplier(s)) @ WE.T


_SEGMENT_CACHE: "weakref.WeakKeyDictionary[BoundarySegment, FractionalNormOperator]" = \
    weakref.WeakKeyDictionary()


def boundary_norm(g: BoundaryField, s: float, operator: FractionalNormOperator | None = None) -> float:
    op = operator if operator is not None else FractionalNormOperator.for_segment(g.segment)
    return op.norm(g.values, s)


def boundary_l2(values: np.ndarray, weights: np.ndarray) -> float:
    """Arclength-weighted L2 norm of nodal (scalar or vector) values."""
    v = np.asarray(values, dtype=float).reshape(len(weights), -1)
    return float(np.sqrt(np.sum(np.asarray(weights)[:, None] * v**2)))
