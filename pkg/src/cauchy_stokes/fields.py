"""Node-indexed grid functions and their CSV serialization."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import BoundarySegment, Grid


def _as_values(grid: Grid, values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(grid.num_nodes, float(arr))
    if arr.shape != (grid.num_nodes,):
        raise ValueError(f"field needs {grid.num_nodes} nodal values, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_values(self.grid, self.values))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, fn(grid.x, grid.y))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.num_nodes))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "ScalarField":
        return ScalarField(self.grid, a * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _as_values(self.grid, self.x))
        object.__setattr__(self, "y", _as_values(self.grid, self.y))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "VectorField":
        vx, vy = fn(grid.x, grid.y)
        return cls(grid, vx, vy)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros(grid.num_nodes), np.zeros(grid.num_nodes))

    @property
    def components(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x, self.y

    def stack(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.x + other.x, self.y + other.y)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.x - other.x, self.y - other.y)

    def __mul__(self, a: float) -> "VectorField":
        return VectorField(self.grid, a * self.x, a * self.y)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class StokesState:
    """Velocity-pressure pair; ``vector()`` packs it as ``[v_x, v_y, p]``."""

    v: VectorField
    p: ScalarField

    def __post_init__(self):
        if self.v.grid != self.p.grid:
            raise ValueError("velocity and pressure live on different grids")

    @property
    def grid(self) -> Grid:
        return self.v.grid

    def vector(self) -> np.ndarray:
        return np.concatenate([self.v.x, self.v.y, self.p.values])

    @classmethod
    def from_vector(cls, grid: Grid, x: np.ndarray) -> "StokesState":
        N = grid.num_nodes
        x = np.asarray(x, dtype=float)
        if x.shape != (3 * N,):
            raise ValueError(f"state vector needs length {3 * N}, got {x.shape}")
        return cls(VectorField(grid, x[:N], x[N:2 * N]), ScalarField(grid, x[2 * N:]))

    @classmethod
    def zeros(cls, grid: Grid) -> "StokesState":
        return cls(VectorField.zeros(grid), ScalarField.zeros(grid))

    def __sub__(self, other: "StokesState") -> "StokesState":
        return StokesState(self.v - other.v, self.p - other.p)

    def __add__(self, other: "StokesState") -> "StokesState":
        return StokesState(self.v + other.v, self.p + other.p)

    def __mul__(self, a: float) -> "StokesState":
        return StokesState(self.v * a, self.p * a)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class BoundaryField:
    """Per-node values on a boundary segment; shape ``(m,)`` or ``(m, 2)``."""

    segment: BoundarySegment
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.shape[0] != len(self.segment) or arr.ndim not in (1, 2):
            raise ValueError(f"boundary field on {self.segment.name!r} needs "
                             f"{len(self.segment)} rows, got shape {arr.shape}")
        if arr.ndim == 2 and arr.shape[1] != 2:
            raise ValueError("vector boundary fields have two components")
        object.__setattr__(self, "values", arr)

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 2

    def __sub__(self, other: "BoundaryField") -> "BoundaryField":
        return BoundaryField(self.segment, self.values - other.values)

    def __add__(self, other: "BoundaryField") -> "BoundaryField":
        return BoundaryField(self.segment, self.values + other.values)


def trace(field: ScalarField | VectorField, segment: BoundarySegment) -> BoundaryField:
    ids = segment.node_ids
    if isinstance(field, VectorField):
        return BoundaryField(segment, np.column_stack([field.x[ids], field.y[ids]]))
    return BoundaryField(segment, field.values[ids])


# CSV: header row, one row per node in node order
SCALAR_HEADER = ["i", "j", "x", "y", "value"]
VECTOR_HEADER = ["i", "j", "x", "y", "vx", "vy"]
STATE_HEADER = ["i", "j", "x", "y", "vx", "vy", "p"]


def _fmt(v: float) -> str:
    return repr(float(v))


def field_to_csv(field: ScalarField | VectorField | StokesState) -> str:
    grid = field.grid
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if isinstance(field, ScalarField):
        writer.writerow(SCALAR_HEADER)
        cols = [field.values]
    elif isinstance(field, VectorField):
        writer.writerow(VECTOR_HEADER)
        cols = [field.x, field.y]
    else:
        writer.writerow(STATE_HEADER)
        cols = [field.v.x, field.v.y, field.p.values]
    for k in range(grid.num_nodes):
        i, j = grid.ij[k]
        writer.writerow([int(i), int(j), _fmt(grid.xy[k, 0]), _fmt(grid.xy[k, 1])]
                        + [_fmt(c[k]) for c in cols])
    return buf.getvalue()


def write_field_csv(path: str | Path, field) -> None:
    Path(path).write_text(field_to_csv(field))


def read_field_csv(path: str | Path, grid: Grid):
    """Inverse of :func:`write_field_csv`; the row order must match ``grid``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if len(body) != grid.num_nodes:
        raise ValueError(f"expected {grid.num_nodes} rows, found {len(body)}")
    data = np.array([[float(v) for v in r] for r in body])
    if not np.array_equal(data[:, :2].astype(np.int64), grid.ij):
        raise ValueError("CSV node order does not match the grid")
    if header == SCALAR_HEADER:
        return ScalarField(grid, data[:, 4])
    if header == VECTOR_HEADER:
        return VectorField(grid, data[:, 4], data[:, 5])
    if header == STATE_HEADER:
        return StokesState(VectorField(grid, data[:, 4], data[:, 5]), ScalarField(grid, data[:, 6]))
    raise ValueError(f"unrecognized CSV header {header}")
