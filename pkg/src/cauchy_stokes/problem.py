"""Data of one Cauchy data-completion instance."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fields import BoundaryField, ScalarField, StokesState, VectorField
from .mesh import Grid, SubdomainWindow
from .operators import OseenCoefficients


class ProblemError(ValueError):
    code = "problem-error"


@dataclass(frozen=True, eq=False)
class CauchyProblem:
    """Source terms plus over-determined data on ``gamma_obs``.

    ``exact`` carries the sampled exact state for manufactured runs and is
    only used to measure errors, never by the solvers.
    """

    grid: Grid
    coeffs: OseenCoefficients
    f: VectorField
    d: ScalarField
    g_D: BoundaryField | None = None
    g_N: BoundaryField | None = None
    window: SubdomainWindow | None = None
    v_obs: np.ndarray | None = None  # (len(window), 2) observed velocity on the window
    exact: StokesState | None = None
    label: str = ""

    def __post_init__(self):
        for name in ("f", "d"):
            if getattr(self, name).grid != self.grid:
                raise ProblemError(f"{name} lives on a different grid")
        if self.coeffs.z1.grid != self.grid:
            raise ProblemError("coefficients live on a different grid")
        if self.v_obs is not None:
            if self.window is None:
                raise ProblemError("v_obs given without an observation window")
            obs = np.asarray(self.v_obs, dtype=float)
            if obs.shape != (len(self.window), 2):
                raise ProblemError(f"v_obs needs shape ({len(self.window)}, 2), got {obs.shape}")
            object.__setattr__(self, "v_obs", obs)

    @property
    def gamma_obs(self):
        return self.grid.segment("gamma_obs")

    def require_boundary_data(self) -> None:
        if self.g_D is None or self.g_N is None:
            raise ProblemError("missing-boundary-data: g_D and g_N on gamma_obs are required")
        seg = self.gamma_obs
        for name in ("g_D", "g_N"):
            g = getattr(self, name)
            if not np.array_equal(g.segment.node_ids, seg.node_ids) or not g.is_vector:
                raise ProblemError(f"missing-boundary-data: {name} must be a vector field on gamma_obs")

    def require_divergence_free(self) -> None:
        if np.any(self.d.values != 0):
            raise ProblemError("divergence data d must vanish for the data-completion solvers")

    def with_data(self, **changes) -> "CauchyProblem":
        return replace(self, **changes)
