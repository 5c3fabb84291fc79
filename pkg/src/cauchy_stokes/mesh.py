"""Structured node lattices over the unit square and the square annulus.

Nodes sit on the lattice ``(i h, j h)`` with ``h = 1/n`` and are numbered
lexicographically, ``j`` (y) outer and ``i`` (x) inner.  The annulus is the
unit square with the open square ``(3/8, 5/8)^2`` removed, so ``n`` must be a
multiple of 8 for the hole to be grid aligned.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Raised for invalid grid, window or boundary-run requests."""


class DomainKind(enum.Enum):
    UNIT_SQUARE = "unit_square"
    SQUARE_ANNULUS = "square_annulus"

    @classmethod
    def parse(cls, value: "DomainKind | str") -> "DomainKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"unitsquare": "unit_square", "squareannulus": "square_annulus",
                   "square": "unit_square", "annulus": "square_annulus"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise MeshError(f"unknown domain kind {value!r}") from None


@dataclass(frozen=True, eq=False)
class BoundarySegment:
    """Ordered run of boundary nodes with outward normals and arclength weights."""

    name: str
    node_ids: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    closed: bool
    h: float

    def __len__(self) -> int:
        return len(self.node_ids)

    @property
    def length(self) -> float:
        return float(self.weights.sum())

    @property
    def tangents(self) -> np.ndarray:
        # counterclockwise rotation of the outward normal
        return np.column_stack([-self.normals[:, 1], self.normals[:, 0]])

    def arclength_fractions(self) -> np.ndarray:
        m = len(self.node_ids)
        if self.closed:
            return np.arange(m) / m
        return np.arange(m) / (m - 1)


@dataclass(frozen=True, eq=False)
class SubdomainWindow:
    """Node subset: a grid-aligned rectangle inside the domain, or a boundary run.

    ``weights`` are trapezoid weights on the window itself (area weights for a
    rectangle, arclength weights for a run).  ``positions`` gives the index of
    each node inside its parent segment for boundary runs.
    """

    node_ids: np.ndarray
    weights: np.ndarray
    rectangle: tuple[float, float, float, float] | None = None
    segment: BoundarySegment | None = None
    positions: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.node_ids)


@dataclass(frozen=True, eq=False)
class Grid:
    kind: DomainKind
    n: int
    index: np.ndarray = field(repr=False)
    ij: np.ndarray = field(repr=False)
    interior_mask: np.ndarray = field(repr=False)
    boundary_segments: dict = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_nodes(self) -> int:
        return len(self.ij)

    @cached_property
    def xy(self) -> np.ndarray:
        return self.ij / self.n

    @property
    def x(self) -> np.ndarray:
        return self.xy[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.xy[:, 1]

    @property
    def hole(self) -> tuple[int, int] | None:
        if self.kind is DomainKind.SQUARE_ANNULUS:
            return 3 * self.n // 8, 5 * self.n // 8
        return None

    def segment(self, name: str) -> BoundarySegment:
        try:
            return self.boundary_segments[name]
        except KeyError:
            raise MeshError(f"grid has no boundary segment {name!r}") from None

    def node_id(self, i: int, j: int) -> int:
        if not (0 <= i <= self.n and 0 <= j <= self.n):
            return -1
        return int(self.index[j, i])

    def has_node(self, i: int, j: int) -> bool:
        return self.node_id(i, j) >= 0

    @cached_property
    def cell_mask(self) -> np.ndarray:
        """``cell_mask[cj, ci]`` is True when the cell with lower-left node (ci, cj) lies in the domain."""
        mask = np.ones((self.n, self.n), dtype=bool)
        if self.hole is not None:
            a, b = self.hole
            mask[a:b, a:b] = False
        return mask

    @cached_property
    def area_weights(self) -> np.ndarray:
        """Trapezoid weights: ``h^2/4`` per adjacent in-domain cell."""
        padded = np.zeros((self.n + 2, self.n + 2))
        padded[1:-1, 1:-1] = self.cell_mask
        # node (i, j) touches cells (i-1..i, j-1..j) -> padded indices (i..i+1, j..j+1)
        count = padded[:-1, :-1] + padded[1:, :-1] + padded[:-1, 1:] + padded[1:, 1:]
        i, j = self.ij[:, 0], self.ij[:, 1]
        return count[j, i] * self.h**2 / 4.0

    @property
    def area(self) -> float:
        return float(self.area_weights.sum())

    def __hash__(self) -> int:
        return hash((self.kind, self.n))

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and (self.kind, self.n) == (other.kind, other.n)


def _in_domain(kind: DomainKind, n: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    inside = (i >= 0) & (i <= n) & (j >= 0) & (j <= n)
    if kind is DomainKind.SQUARE_ANNULUS:
        a, b = 3 * n // 8, 5 * n // 8
        inside &= ~((i > a) & (i < b) & (j > a) & (j < b))
    return inside


def _square_loop(lo: int, hi: int) -> list[tuple[int, int]]:
    """Counterclockwise lattice loop around the square [lo, hi]^2, starting at (lo, lo)."""
    pts = [(i, lo) for i in range(lo, hi)]
    pts += [(hi, j) for j in range(lo, hi)]
    pts += [(i, hi) for i in range(hi, lo, -1)]
    pts += [(lo, j) for j in range(hi, lo, -1)]
    return pts


def _edge_normal(i: int, j: int, lo: int, hi: int, sign: float) -> np.ndarray:
    """Normal of the square [lo, hi]^2 at a lattice point of its perimeter.

    ``sign = +1`` gives the normal pointing away from the square, ``-1`` towards
    it.  Corners get the normalized sum of both edge normals.
    """
    nx = (-1.0 if i == lo else 0.0) + (1.0 if i == hi else 0.0)
    ny = (-1.0 if j == lo else 0.0) + (1.0 if j == hi else 0.0)
    vec = np.array([nx, ny]) * sign
    return vec / np.linalg.norm(vec)


def _make_segment(grid_index, name, pts, normals, closed, h) -> BoundarySegment:
    ids = np.array([grid_index[j, i] for i, j in pts], dtype=np.int64)
    weights = np.full(len(ids), h)
    if not closed:
        weights[0] = weights[-1] = h / 2
    return BoundarySegment(name=name, node_ids=ids, normals=np.asarray(normals, dtype=float),
                           weights=weights, closed=closed, h=h)


def build_grid(kind: DomainKind | str, n: int) -> Grid:
    """Build the lattice grid for ``kind`` at ``n`` cells per unit length."""
    kind = DomainKind.parse(kind)
    if int(n) != n or n < 8:
        raise MeshError(f"n-too-small: need an integer n >= 8, got {n}")
    n = int(n)
    if kind is DomainKind.SQUARE_ANNULUS and n % 8:
        raise MeshError(f"resolution-not-divisible: annulus needs 8 | n, got n = {n}")
    h = 1.0 / n

    jj, ii = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    present = _in_domain(kind, n, ii, jj)
    index = np.full((n + 1, n + 1), -1, dtype=np.int64)
    index[present] = np.arange(int(present.sum()))
    ij = np.column_stack([ii[present], jj[present]]).astype(np.int64)

    on_boundary = (ij[:, 0] == 0) | (ij[:, 0] == n) | (ij[:, 1] == 0) | (ij[:, 1] == n)
    segments: dict[str, BoundarySegment] = {}
    if kind is DomainKind.UNIT_SQUARE:
        west = [(0, j) for j in range(n + 1)]
        segments["gamma_obs"] = _make_segment(
            index, "gamma_obs", west, [(-1.0, 0.0)] * len(west), False, h)
        # south, east, north edges as one open chain from (0, 0) to (0, n)
        chain = [(i, 0) for i in range(n + 1)] + [(n, j) for j in range(1, n + 1)]
        chain += [(i, n) for i in range(n - 1, -1, -1)]
        normals = [_edge_normal(i, j, 0, n, 1.0) for i, j in chain]
        normals[0] = np.array([0.0, -1.0])
        normals[-1] = np.array([0.0, 1.0])
        segments["gamma_c"] = _make_segment(index, "gamma_c", chain, normals, False, h)
    else:
        a, b = 3 * n // 8, 5 * n // 8
        outer = _square_loop(0, n)
        segments["gamma_obs"] = _make_segment(
            index, "gamma_obs", outer, [_edge_normal(i, j, 0, n, 1.0) for i, j in outer], True, h)
        inner = _square_loop(a, b)
        inner_seg = _make_segment(
            index, "gamma_c", inner, [_edge_normal(i, j, a, b, -1.0) for i, j in inner], True, h)
        segments["gamma_c"] = inner_seg
        segments["gamma_0"] = BoundarySegment("gamma_0", inner_seg.node_ids, inner_seg.normals,
                                              inner_seg.weights, True, h)
        on_rim = ((ij[:, 0] >= a) & (ij[:, 0] <= b) & (ij[:, 1] >= a) & (ij[:, 1] <= b))
        on_boundary |= on_rim

    for seg in segments.values():
        seg.node_ids.setflags(write=False)
        seg.normals.setflags(write=False)
        seg.weights.setflags(write=False)
    index.setflags(write=False)
    ij.setflags(write=False)
    interior = ~on_boundary
    interior.setflags(write=False)
    return Grid(kind=kind, n=n, index=index, ij=ij, interior_mask=interior,
                boundary_segments=segments)


def _on_lattice(value: float, n: int) -> int:
    scaled = value * n
    k = round(scaled)
    if abs(scaled - k) > 1e-9:
        raise MeshError(f"rectangle coordinate {value} is not grid aligned at n = {n}")
    return int(k)


def window(grid: Grid, rect) -> SubdomainWindow:
    """Nodes of the closed grid-aligned rectangle ``(x0, x1, y0, y1)``.

    The closed rectangle must lie in the open domain: every lattice point in it
    has to be an interior node.
    """
    x0, x1, y0, y1 = (float(v) for v in rect)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"rect-empty: {rect}")
    i0, i1 = _on_lattice(x0, grid.n), _on_lattice(x1, grid.n)
    j0, j1 = _on_lattice(y0, grid.n), _on_lattice(y1, grid.n)
    ids = []
    for j in range(j0, j1 + 1):
        for i in range(i0, i1 + 1):
            k = grid.node_id(i, j)
            if k < 0 or not grid.interior_mask[k]:
                raise MeshError(f"rect-touches-boundary: {rect} reaches node ({i}, {j})")
            ids.append(k)
    # trapezoid weights on the rectangle itself
    wx = np.full(i1 - i0 + 1, grid.h)
    wx[[0, -1]] = grid.h / 2
    wy = np.full(j1 - j0 + 1, grid.h)
    wy[[0, -1]] = grid.h / 2
    weights = np.outer(wy, wx).ravel()
    return SubdomainWindow(node_ids=np.array(ids, dtype=np.int64), weights=weights,
                           rectangle=(x0, x1, y0, y1))


def boundary_run(segment: BoundarySegment, start_fraction: float,
                 end_fraction: float) -> SubdomainWindow:
    """Contiguous run of segment nodes whose arclength fraction lies in [start, end]."""
    if not (0.0 <= start_fraction < end_fraction <= 1.0):
        raise MeshError(f"empty-run: need 0 <= start < end <= 1, got "
                        f"({start_fraction}, {end_fraction})")
    frac = segment.arclength_fractions()
    tol = 1e-12
    pos = np.flatnonzero((frac >= start_fraction - tol) & (frac <= end_fraction + tol))
    if len(pos) < 2:
        raise MeshError("empty-run: fewer than two nodes in the requested run")
    weights = np.full(len(pos), segment.h)
    if not (segment.closed and len(pos) == len(segment)):
        weights[[0, -1]] = segment.h / 2
    return SubdomainWindow(node_ids=segment.node_ids[pos], weights=weights,
                           segment=segment, positions=pos)
