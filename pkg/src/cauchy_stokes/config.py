"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, lists are comma separated and
rectangles are ``x0, x1, y0, y1``.  Unknown keys and out-of-range values are
rejected with the key name and line number before any numerical work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .manufactured import CASE_NAMES
from .mesh import DomainKind, MeshError, build_grid, window


class ConfigError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


COEFF_PRESETS = ("case", "zero", "uniform_x", "ms2")
SOLVER_METHODS = ("normal", "augmented", "cg")
STUDY_METHODS = ("qr", "kv")
STABILITY_MODES = ("distributed", "boundary", "both")
OBS_SELECTORS = {DomainKind.UNIT_SQUARE: ("default", "west"),
                 DomainKind.SQUARE_ANNULUS: ("default", "outer")}


@dataclass
class Config:
    domain_kind: DomainKind = DomainKind.SQUARE_ANNULUS
    n: int = 32
    nu: float = 1.0
    z1_case: str = "case"
    z2_case: str = "case"
    case: str = "MS2"
    gamma_obs: str = "default"
    window: tuple | None = None
    window_nested: int = 3
    eps_list: tuple = tuple(10.0**-k for k in range(2, 9))
    delta_list: tuple = (1e-3, 1e-4)
    seed: int = 0
    robin_alpha1: float = 1.0
    robin_mu: float = 1.0
    robin_t_list: tuple = (1e-3, 1e-2, 1e-1, 1.0)
    robin_kappa: tuple = (0.0, 0.25)
    robin_levels: tuple = (32, 48)
    output_dir: str = "out"
    tol: float = 1e-10
    max_iter: int | None = None
    solver_method: str = "normal"
    study_method: str = "qr"
    study_levels: tuple = (16, 32, 64)
    stability_mode: str = "both"
    stability_cases: tuple = ("MS1", "MS2", "MS3")
    stability_scales: tuple = (1.0, 2.0, 4.0)
    lines: dict = field(default_factory=dict, repr=False)

    @property
    def case_names(self) -> tuple:
        return tuple(self.case.split("+"))

    @property
    def incompatible(self) -> bool:
        return len(self.case_names) == 2

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "lines":
                continue
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, DomainKind) else (list(v) if isinstance(v, tuple) else v)
        return out


def _floats(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _ints(text: str) -> tuple:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise ValueError("integers expected")
    return tuple(int(v) for v in vals)


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError("integer expected")
    return int(v)


def _words(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip())


# key -> (attribute, parser)
KEYS = {
    "domain.kind": ("domain_kind", DomainKind.parse),
    "grid.n": ("n", _int),
    "coeffs.nu": ("nu", float),
    "coeffs.z1_case": ("z1_case", str.lower),
    "coeffs.z2_case": ("z2_case", str.lower),
    "case.name": ("case", str.upper),
    "segments.gamma_obs": ("gamma_obs", str.lower),
    "window": ("window", _floats),
    "window.nested": ("window_nested", _int),
    "eps.list": ("eps_list", _floats),
    "noise.delta_list": ("delta_list", _floats),
    "noise.seed": ("seed", _int),
    "robin.alpha1": ("robin_alpha1", float),
    "robin.mu": ("robin_mu", float),
    "robin.t_list": ("robin_t_list", _floats),
    "robin.kappa_run": ("robin_kappa", _floats),
    "robin.levels": ("robin_levels", _ints),
    "output.dir": ("output_dir", str),
    "solver.tol": ("tol", float),
    "solver.max_iter": ("max_iter", _int),
    "solver.method": ("solver_method", str.lower),
    "study.method": ("study_method", str.lower),
    "study.levels": ("study_levels", _ints),
    "stability.mode": ("stability_mode", str.lower),
    "stability.cases": ("stability_cases", lambda t: tuple(w.upper() for w in _words(t))),
    "stability.scales": ("stability_scales", _floats),
}
ATTR_TO_KEY = {attr: key for key, (attr, _) in KEYS.items()}


def parse_text(text: str, source: str = "<config>") -> Config:
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("syntax-error", f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError("unknown-key", f"{source}:{lineno}: unknown key {key!r}")
        attr, parser = KEYS[key]
        try:
            parsed = parser(value)
        except (ValueError, MeshError) as exc:
            raise ConfigError("value-out-of-range",
                              f"{source}:{lineno}: {key} = {value!r} ({exc})") from None
        setattr(cfg, attr, parsed)
        cfg.lines[attr] = lineno
    validate(cfg, source)
    return cfg


def parse_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("io-error", f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_text(text, str(path))


def validate(cfg: Config, source: str = "<config>") -> None:
    def bad(attr, why):
        line = cfg.lines.get(attr)
        where = f"{source}:{line}: " if line else f"{source}: "
        raise ConfigError("value-out-of-range", f"{where}{ATTR_TO_KEY[attr]}: {why}")

    if cfg.n < 8:
        bad("n", f"n = {cfg.n} must be at least 8")
    if cfg.domain_kind is DomainKind.SQUARE_ANNULUS and cfg.n % 8:
        bad("n", f"n = {cfg.n} must be divisible by 8 on the square annulus")
    if not (cfg.nu > 0 and math.isfinite(cfg.nu)):
        bad("nu", "viscosity must be positive")
    for attr in ("z1_case", "z2_case"):
        if getattr(cfg, attr) not in COEFF_PRESETS:
            bad(attr, f"expected one of {', '.join(COEFF_PRESETS)}")
    names = cfg.case_names
    if len(names) > 2 or any(c not in CASE_NAMES for c in names):
        bad("case", f"expected a case from {', '.join(CASE_NAMES)} or an incompatible pair A+B")
    if len(names) == 2 and names[0] == names[1]:
        bad("case", "cases-identical: an incompatible pair needs two different cases")
    if cfg.gamma_obs not in OBS_SELECTORS[cfg.domain_kind]:
        bad("gamma_obs", f"expected one of {', '.join(OBS_SELECTORS[cfg.domain_kind])}")
    if any(not (e > 0 and math.isfinite(e)) for e in cfg.eps_list):
        bad("eps_list", "every eps must be positive")
    if any(not (d >= 0 and math.isfinite(d)) for d in cfg.delta_list):
        bad("delta_list", "noise levels must be nonnegative")
    if cfg.seed < 0:
        bad("seed", "seed must be nonnegative")
    if any(not (t > 0 and math.isfinite(t)) for t in cfg.robin_t_list):
        bad("robin_t_list", "t values must be positive")
    if len(cfg.robin_kappa) != 2 or not (0 <= cfg.robin_kappa[0] < cfg.robin_kappa[1] <= 1):
        bad("robin_kappa", "need start, end with 0 <= start < end <= 1")
    if any(n < 8 or n % 8 for n in cfg.robin_levels):
        bad("robin_levels", "annulus levels must be multiples of 8")
    if not (0 < cfg.tol < 1):
        bad("tol", "tolerance must lie in (0, 1)")
    if cfg.max_iter is not None and cfg.max_iter < 1:
        bad("max_iter", "max_iter must be at least 1")
    if cfg.solver_method not in SOLVER_METHODS:
        bad("solver_method", f"expected one of {', '.join(SOLVER_METHODS)}")
    if cfg.study_method not in STUDY_METHODS:
        bad("study_method", f"expected one of {', '.join(STUDY_METHODS)}")
    if any(n < 8 for n in cfg.study_levels) or len(set(cfg.study_levels)) < 2:
        bad("study_levels", "need at least two distinct levels >= 8")
    if cfg.stability_mode not in STABILITY_MODES:
        bad("stability_mode", f"expected one of {', '.join(STABILITY_MODES)}")
    if not cfg.stability_cases or any(c not in CASE_NAMES for c in cfg.stability_cases):
        bad("stability_cases", f"expected cases from {', '.join(CASE_NAMES)}")
    if any(not (s > 0) for s in cfg.stability_scales):
        bad("stability_scales", "scales must be positive")
    if cfg.window_nested < 1:
        bad("window_nested", "need at least one window")
    if cfg.window is not None:
        if len(cfg.window) != 4:
            bad("window", "expected x0, x1, y0, y1")
        try:
            window(build_grid(cfg.domain_kind, cfg.n), cfg.window)
        except MeshError as exc:
            bad("window", str(exc))
