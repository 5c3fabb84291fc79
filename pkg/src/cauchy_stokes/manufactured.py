"""Closed-form Stokes/Oseen solutions, the data they induce, and data noise.

Each case stores the exact velocity, its Jacobian and Laplacian, the exact
pressure and its gradient, and the two linearization fields with their
Jacobians, all as numpy closed forms.  The source term is assembled from
those pieces as ``-nu lap v + (z1 . grad) v + (v . grad) z2 + grad p``.
The catalog is

========  =====================================  ===========  =====================
name      v                                      p            (z1, z2)
========  =====================================  ===========  =====================
MS0       0                                      0            (0, 0)
MS1       (y, x)                                 1            (0, 0)
MS2       (pi s_x c_y, -pi c_x s_y)              c_x c_y      (0, 0)
MS3       as MS2                                 as MS2       ((1, 0), v)
========  =====================================  ===========  =====================

with ``s_x = sin(pi x)``, ``c_y = cos(pi y)`` and so on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .fields import BoundaryField, ScalarField, StokesState, VectorField
from .mesh import BoundarySegment, Grid
from .norms import FractionalNormOperator, norm_l2
from .operators import OseenCoefficients
from .problem import CauchyProblem, ProblemError

PI = np.pi
Pair = tuple[np.ndarray, np.ndarray]


class CatalogError(ValueError):
    code = "unknown-case"


def _zero2(x, y) -> Pair:
    return np.zeros_like(x, dtype=float), np.zeros_like(y, dtype=float)


def _zero4(x, y):
    z = np.zeros_like(x, dtype=float)
    return z, z, z, z


@dataclass(frozen=True)
class ManufacturedCase:
    """Analytic solution of the Oseen system with its coefficient preset.

    Jacobians are returned as ``(d1 y1, d2 y1, d1 y2, d2 y2)``.
    """

    name: str
    nu: float
    velocity: Callable
    velocity_jacobian: Callable
    velocity_laplacian: Callable
    pressure: Callable
    pressure_gradient: Callable
    z1: Callable = _zero2
    z2: Callable = _zero2
    z2_jacobian: Callable = _zero4

    @property
    def is_stokes(self) -> bool:
        return self.z1 is _zero2 and self.z2 is _zero2

    def forcing(self, x, y) -> Pair:
        """``-nu lap v + (z1 . grad) v + (v . grad) z2 + grad p`` at points."""
        v1, v2 = self.velocity(x, y)
        a11, a12, a21, a22 = self.velocity_jacobian(x, y)
        l1, l2 = self.velocity_laplacian(x, y)
        px, py = self.pressure_gradient(x, y)
        z11, z12 = self.z1(x, y)
        b11, b12, b21, b22 = self.z2_jacobian(x, y)
        f1 = -self.nu * l1 + z11 * a11 + z12 * a12 + v1 * b11 + v2 * b12 + px
        f2 = -self.nu * l2 + z11 * a21 + z12 * a22 + v1 * b21 + v2 * b22 + py
        return f1, f2

    def stress(self, x, y):
        """Components ``(s11, s12, s22)`` of ``2 nu D(v) - p I``."""
        a11, a12, a21, a22 = self.velocity_jacobian(x, y)
        p = self.pressure(x, y)
        return (2 * self.nu * a11 - p, self.nu * (a12 + a21), 2 * self.nu * a22 - p)

    def traction(self, x, y, normals: np.ndarray) -> np.ndarray:
        s11, s12, s22 = self.stress(x, y)
        n1, n2 = normals[:, 0], normals[:, 1]
        return np.column_stack([s11 * n1 + s12 * n2, s12 * n1 + s22 * n2])

    # sampled quantities ---------------------------------------------------

    def exact_state(self, grid: Grid) -> StokesState:
        return StokesState(VectorField.from_function(grid, self.velocity),
                           ScalarField.from_function(grid, self.pressure))

    def coefficients(self, grid: Grid) -> OseenCoefficients:
        return OseenCoefficients(self.nu, VectorField.from_function(grid, self.z1),
                                 VectorField.from_function(grid, self.z2))

    def f_field(self, grid: Grid) -> VectorField:
        return VectorField.from_function(grid, self.forcing)

    def segment_trace(self, segment: BoundarySegment, grid: Grid) -> BoundaryField:
        xy = grid.xy[segment.node_ids]
        return BoundaryField(segment, np.column_stack(self.velocity(xy[:, 0], xy[:, 1])))

    def segment_traction(self, segment: BoundarySegment, grid: Grid) -> BoundaryField:
        xy = grid.xy[segment.node_ids]
        return BoundaryField(segment, self.traction(xy[:, 0], xy[:, 1], segment.normals))


# --- MS0 -------------------------------------------------------------------

def _ms0(nu: float) -> ManufacturedCase:
    return ManufacturedCase("MS0", nu, _zero2, _zero4, _zero2,
                            lambda x, y: np.zeros_like(x, dtype=float), _zero2)


# --- MS1: v = (y, x), p = 1 -------------------------------------------------

def _ms1(nu: float) -> ManufacturedCase:
    def vel(x, y):
        return np.asarray(y, dtype=float) + 0.0, np.asarray(x, dtype=float) + 0.0

    def jac(x, y):
        one, zero = np.ones_like(x, dtype=float), np.zeros_like(x, dtype=float)
        return zero, one, one, zero

    return ManufacturedCase("MS1", nu, vel, jac, _zero2,
                            lambda x, y: np.ones_like(x, dtype=float), _zero2)


# --- MS2: stream function sin(pi x) sin(pi y) -------------------------------

def _ms2_velocity(x, y) -> Pair:
    return PI * np.sin(PI * x) * np.cos(PI * y), -PI * np.cos(PI * x) * np.sin(PI * y)


def _ms2_jacobian(x, y):
    sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
    return PI**2 * cx * cy, -PI**2 * sx * sy, PI**2 * sx * sy, -PI**2 * cx * cy


def _ms2_laplacian(x, y) -> Pair:
    v1, v2 = _ms2_velocity(x, y)
    return -2 * PI**2 * v1, -2 * PI**2 * v2


def _ms2_pressure(x, y):
    return np.cos(PI * x) * np.cos(PI * y)


def _ms2_pressure_gradient(x, y) -> Pair:
    return -PI * np.sin(PI * x) * np.cos(PI * y), -PI * np.cos(PI * x) * np.sin(PI * y)


def _ms2(nu: float) -> ManufacturedCase:
    return ManufacturedCase("MS2", nu, _ms2_velocity, _ms2_jacobian, _ms2_laplacian,
                            _ms2_pressure, _ms2_pressure_gradient)


def _uniform_x(x, y) -> Pair:
    return np.ones_like(x, dtype=float), np.zeros_like(y, dtype=float)


def _ms3(nu: float) -> ManufacturedCase:
    return ManufacturedCase("MS3", nu, _ms2_velocity, _ms2_jacobian, _ms2_laplacian,
                            _ms2_pressure, _ms2_pressure_gradient,
                            z1=_uniform_x, z2=_ms2_velocity, z2_jacobian=_ms2_jacobian)


_BUILDERS = {"MS0": _ms0, "MS1": _ms1, "MS2": _ms2, "MS3": _ms3}
CASE_NAMES = tuple(_BUILDERS)


def catalog(name: str, nu: float = 1.0) -> ManufacturedCase:
    key = str(name).strip().upper()
    if key not in _BUILDERS:
        raise CatalogError(f"unknown-case: {name!r}, expected one of {', '.join(CASE_NAMES)}")
    if not nu > 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    return _BUILDERS[key](float(nu))


COEFFICIENT_PRESETS = {"zero": (_zero2, _zero4), "uniform_x": (_uniform_x, _zero4),
                       "ms2": (_ms2_velocity, _ms2_jacobian)}


def with_coefficients(case: ManufacturedCase, z1: str | None = None,
                      z2: str | None = None) -> ManufacturedCase:
    """Same exact pair under other linearization fields; the forcing follows."""
    changes = {}
    for key, name in (("z1", z1), ("z2", z2)):
        if name is None:
            continue
        if name not in COEFFICIENT_PRESETS:
            raise CatalogError(f"unknown coefficient preset {name!r}, expected one of "
                               f"{', '.join(COEFFICIENT_PRESETS)}")
        fn, jac = COEFFICIENT_PRESETS[name]
        changes[key] = fn
        if key == "z2":
            changes["z2_jacobian"] = jac
    return replace(case, **changes)


def _as_case(case) -> ManufacturedCase:
    return case if isinstance(case, ManufacturedCase) else catalog(case)


# ---------------------------------------------------------------------------
# data generation

def make_cauchy_data(case, grid: Grid, segment: str = "gamma_obs") -> CauchyProblem:
    """Sampled ``f``, ``d = 0`` and exact trace/traction on ``segment``."""
    case = _as_case(case)
    seg = grid.segment(segment)
    return CauchyProblem(grid=grid, coeffs=case.coefficients(grid), f=case.f_field(grid),
                         d=ScalarField.zeros(grid), g_D=case.segment_trace(seg, grid),
                         g_N=case.segment_traction(seg, grid), exact=case.exact_state(grid),
                         label=case.name)


def make_incompatible_data(case_a, case_b, grid: Grid, segment: str = "gamma_obs") -> CauchyProblem:
    """Trace and source of ``case_a`` combined with the traction of ``case_b``."""
    case_a, case_b = _as_case(case_a), _as_case(case_b)
    if case_a.name == case_b.name:
        raise ProblemError(f"cases-identical: both data sets come from {case_a.name}")
    base = make_cauchy_data(case_a, grid, segment)
    seg = grid.segment(segment)
    return base.with_data(g_N=case_b.segment_traction(seg, grid), exact=None,
                          label=f"{case_a.name}+{case_b.name}")


def observe_window(problem: CauchyProblem, window, case=None) -> CauchyProblem:
    """Attach an interior observation on ``window`` taken from the exact state."""
    if problem.exact is None:
        raise ProblemError("interior observation needs an exact state")
    ids = window.node_ids
    v = problem.exact.v
    return problem.with_data(window=window, v_obs=np.column_stack([v.x[ids], v.y[ids]]))


# ---------------------------------------------------------------------------
# noise

NOISE_TARGETS = ("f", "g_D", "g_N")
NOISE_MODES = 9          # boundary eigenmodes k = 0..8
NOISE_TRIG_MODES = 3     # interior sin/cos modes per direction


@dataclass(frozen=True)
class NoiseModel:
    delta: float
    seed: int = 0
    targets: Sequence[str] = NOISE_TARGETS

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError(f"noise amplitude must be >= 0, got {self.delta}")
        bad = [t for t in self.targets if t not in NOISE_TARGETS]
        if bad:
            raise ValueError(f"unknown noise targets {bad}, expected a subset of {NOISE_TARGETS}")
        object.__setattr__(self, "targets", tuple(t for t in NOISE_TARGETS if t in self.targets))


def boundary_noise(segment: BoundarySegment, order: float, delta: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Band-limited boundary field with fractional norm exactly ``delta``."""
    op = FractionalNormOperator.for_segment(segment)
    k = min(NOISE_MODES, len(op))
    coef = rng.standard_normal((k, 2))
    g = op.modes[:, :k] @ coef
    return g * (delta / op.norm(g, order))


def interior_noise(grid: Grid, delta: float, rng: np.random.Generator) -> VectorField:
    """Low-frequency trigonometric vector field with discrete L2 norm exactly ``delta``."""
    x, y = grid.x, grid.y
    comps = []
    for _ in range(2):
        c = rng.standard_normal((NOISE_TRIG_MODES, NOISE_TRIG_MODES))
        val = np.zeros(grid.num_nodes)
        for a in range(NOISE_TRIG_MODES):
            for b in range(NOISE_TRIG_MODES):
                val += c[a, b] * np.cos(a * PI * x) * np.cos(b * PI * y)
        comps.append(val)
    field = VectorField(grid, comps[0], comps[1])
    return field * (delta / norm_l2(field))


def perturb(problem: CauchyProblem, model: NoiseModel) -> CauchyProblem:
    """Add fixed-seed smooth noise of size ``delta`` to each targeted datum.

    Norms: L2 for ``f``, H^{3/2} for ``g_D`` and H^{1/2} for ``g_N``.  Each
    target draws from its own generator seeded by ``(seed, target index)``.
    """
    if model.delta == 0:
        return problem
    changes = {}
    for idx, target in enumerate(NOISE_TARGETS):
        if target not in model.targets:
            continue
        rng = np.random.default_rng([int(model.seed), idx])
        if target == "f":
            changes["f"] = problem.f + interior_noise(problem.grid, model.delta, rng)
        else:
            g = getattr(problem, target)
            if g is None:
                raise ProblemError(f"missing-boundary-data: cannot perturb absent {target}")
            order = 1.5 if target == "g_D" else 0.5
            noise = boundary_noise(g.segment, order, model.delta, rng)
            changes[target] = BoundaryField(g.segment, g.values + noise)
    return problem.with_data(**changes)
