"""Command-line front end.

``cauchy-stokes <command> [--config PATH] [--out DIR] [--dry-run]``

Exit codes: 0 when every flag of the run passes, 2 when a flag fails and 1
on any error (one diagnostic line on stderr).  Artifacts are written once,
at the end of a run, together with ``manifest.json``.  Wall-clock times only
appear in the manifest so that every other artifact is reproducible bitwise.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import Config, ConfigError, parse_config, validate
from .fields import field_to_csv
from .kv import (KVReducedModel, exact_unknown, kv_floor, minimize_kv, solve_forward_phi,
                 solve_forward_psi)
from .manufactured import (catalog, make_cauchy_data, make_incompatible_data,
                           with_coefficients)
from .mesh import DomainKind, build_grid
from .qr import qr_apriori_check, solve_qr
from .studies import (DEFAULT_PROBE_WINDOW, RobinConfig, SLACK, StudyReport, _jsonable,
                      run_convergence_study, run_forward_study, run_interior_study,
                      run_interp_inequality_probe, run_noise_study, run_operator_check,
                      run_robin_study, run_stability_probe, state_errors, validate_eps_list)

COMMANDS = ("forward", "qr", "qr-interior", "kv", "study-conv", "study-noise", "study-robin",
            "study-stability", "ops-check")
USAGE = ("usage: cauchy-stokes {" + ",".join(COMMANDS) + "} "
         "[--config PATH] [--out DIR] [--dry-run]")
SQUARE_WINDOW = (0.25, 0.5, 0.25, 0.5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cauchy-stokes", add_help=True, usage=USAGE[7:])
    p.add_argument("command")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--dry-run", action="store_true")
    return p


# ---------------------------------------------------------------------------
# helpers

def _case(cfg: Config, name: str):
    case = catalog(name, cfg.nu)
    z1 = None if cfg.z1_case == "case" else cfg.z1_case
    z2 = None if cfg.z2_case == "case" else cfg.z2_case
    return with_coefficients(case, z1, z2) if (z1 or z2) else case


def _grid(cfg: Config):
    return build_grid(cfg.domain_kind, cfg.n)


def _problem(cfg: Config, grid):
    names = cfg.case_names
    if len(names) == 2:
        return make_incompatible_data(_case(cfg, names[0]), _case(cfg, names[1]), grid)
    return make_cauchy_data(_case(cfg, names[0]), grid)


def _single_case(cfg: Config):
    if cfg.incompatible:
        raise ConfigError("value-out-of-range", "case.name: this command needs a single case")
    return _case(cfg, cfg.case)


def _default_window(cfg: Config) -> tuple:
    if cfg.window is not None:
        return tuple(cfg.window)
    return DEFAULT_PROBE_WINDOW if cfg.domain_kind is DomainKind.SQUARE_ANNULUS else SQUARE_WINDOW


def _nested_windows(cfg: Config) -> list:
    """The configured window and ``window.nested - 1`` shrunken copies, one cell per side each."""
    x0, x1, y0, y1 = _default_window(cfg)
    h = 1.0 / cfg.n
    rects = []
    for k in range(cfg.window_nested):
        r = (x0 + k * h, x1 - k * h, y0 + k * h, y1 - k * h)
        if r[1] - r[0] < h or r[3] - r[2] < h:
            raise ConfigError("value-out-of-range", "window.nested: windows shrink to nothing")
        rects.append(r)
    return rects


def _strip_wall(d: dict) -> dict:
    return {k: v for k, v in d.items() if k != "wall_ms"}


def _json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2) + "\n"


def _report_artifacts(prefix: str, report: StudyReport) -> dict:
    arts = {f"{prefix}.json": report.to_json()}
    groups = report.groups()
    if groups == [""]:
        arts[f"{prefix}.csv"] = report.to_csv()
    else:
        for g in groups:
            arts[f"{prefix}_{_safe(g)}.csv"] = report.to_csv(g)
    return arts


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.=" else "_" for c in name)


# ---------------------------------------------------------------------------
# commands; each returns (artifacts, flags)

def cmd_forward(cfg: Config):
    case = _single_case(cfg)
    grid = _grid(cfg)
    prob = make_cauchy_data(case, grid)
    u = exact_unknown(prob)
    phi = solve_forward_phi(grid, prob.coeffs, prob.f, prob.g_D, u.phi_N,
                            method=cfg.solver_method, tol=cfg.tol)
    psi = solve_forward_psi(grid, prob.coeffs, prob.f, prob.g_N, u.psi_D,
                            method=cfg.solver_method, tol=cfg.tol)
    summary = {}
    for name, st in (("phi", phi), ("psi", psi)):
        el2, eh1, ep = state_errors(st, prob.exact)
        summary[name] = {"error_v_l2": el2, "error_v_h1": eh1, "error_p_l2": ep}
    arts = {"forward_phi_state.csv": field_to_csv(phi), "forward_psi_state.csv": field_to_csv(psi),
            "forward.json": _json({"case": case.name, "n": grid.n, "errors": summary})}
    report = run_forward_study(case, cfg.study_levels, solver=cfg.solver_method)
    arts.update(_report_artifacts("forward_orders", report))
    return arts, report.flags


def cmd_qr(cfg: Config):
    grid = _grid(cfg)
    prob = _problem(cfg, grid)
    eps_list = sorted(cfg.eps_list, reverse=True)
    arts, sols, flags = {}, [], {}
    for k, eps in enumerate(eps_list):
        sol = solve_qr(prob, eps, method=cfg.solver_method, tol=cfg.tol, max_iter=cfg.max_iter)
        d = _strip_wall(sol.as_dict())
        apri = qr_apriori_check(sol, prob.exact)
        d["apriori"] = apri
        if prob.exact is not None:
            el2, eh1, ep = state_errors(sol.state, prob.exact)
            d.update({"error_v_l2": el2, "error_v_h1": eh1, "error_p_l2": ep})
            flags[f"apriori_eps={eps!r}"] = bool(apri["norm_bound_ok"] and apri["diff_bound_ok"])
        sols.append(d)
        arts[f"qr_state_{k}.csv"] = field_to_csv(sol.state)
    if cfg.incompatible and len(sols) >= 2:
        lo, hi = sols[0]["state_norm_h2h1"], sols[-1]["state_norm_h2h1"]
        flags["blowup"] = bool(hi >= 10 * lo)
    arts["qr.json"] = _json({"case": cfg.case, "domain": grid.kind.value, "n": grid.n,
                             "solutions": sols, "flags": flags})
    return arts, flags


def cmd_qr_interior(cfg: Config):
    case = _single_case(cfg)
    report = run_interior_study(case, _grid(cfg), _nested_windows(cfg), cfg.eps_list,
                                solver=cfg.solver_method)
    return _report_artifacts("qr_interior", report), report.flags


def cmd_kv(cfg: Config):
    grid = _grid(cfg)
    prob = _problem(cfg, grid)
    model = KVReducedModel(prob, method=cfg.solver_method, tol=cfg.tol)
    floor = kv_floor(prob, model) if prob.exact is not None else None
    arts, sols, flags = {}, [], {}
    for k, eps in enumerate(sorted(cfg.eps_list, reverse=True)):
        sol = minimize_kv(prob, eps, model=model)
        d = _strip_wall(sol.as_dict())
        flags[f"hessian_pd_eps={eps!r}"] = sol.min_hessian_eig > 0
        if floor is not None:
            M = floor["M_h"]
            el2, eh1, ep = state_errors(sol.state, prob.exact)
            d.update({"error_v_l2": el2, "error_v_h1": eh1, "error_p_l2": ep})
            flags[f"gap_bound_eps={eps!r}"] = bool(
                sol.F_value <= 2 * eps * M**2 * (1 + SLACK) + 2 * floor["rho_h"])
            flags[f"norm_bound_eps={eps!r}"] = bool(
                sol.norm_phi_state**2 + sol.norm_psi_state**2
                <= 2 * M**2 * (1 + SLACK) + floor["norm_excess"])
        sols.append(d)
        arts[f"kv_state_{k}.csv"] = field_to_csv(sol.state)
    arts["kv.json"] = _json({"case": cfg.case, "n": grid.n, "floor": floor, "solutions": sols,
                             "flags": flags})
    return arts, flags


def cmd_study_conv(cfg: Config):
    report = run_convergence_study(cfg.study_method, _single_case(cfg), _grid(cfg), cfg.eps_list,
                                   solver=cfg.solver_method, tol=cfg.tol)
    return _report_artifacts(f"conv_{cfg.study_method}", report), report.flags


def cmd_study_noise(cfg: Config):
    report = run_noise_study(cfg.study_method, _single_case(cfg), _grid(cfg), cfg.eps_list,
                             cfg.delta_list, seed=cfg.seed, solver=cfg.solver_method, tol=cfg.tol)
    return _report_artifacts(f"noise_{cfg.study_method}", report), report.flags


def cmd_study_robin(cfg: Config):
    rc = RobinConfig(alpha1=cfg.robin_alpha1, mu=cfg.robin_mu, t_list=tuple(cfg.robin_t_list),
                     kappa=tuple(cfg.robin_kappa), levels=tuple(cfg.robin_levels), nu=cfg.nu)
    robin = run_robin_study(rc)
    interp = run_interp_inequality_probe()
    arts = {**_report_artifacts("robin", robin), **_report_artifacts("interp", interp)}
    return arts, {"robin": robin.flags, "interp": interp.flags}


def cmd_study_stability(cfg: Config):
    modes = ("distributed", "boundary") if cfg.stability_mode == "both" else (cfg.stability_mode,)
    grid = _grid(cfg)
    cases = [_case(cfg, c) for c in cfg.stability_cases]
    arts, flags = {}, {}
    for mode in modes:
        report = run_stability_probe(mode, cases, grid, cfg.stability_scales,
                                     rect=_default_window(cfg))
        arts.update(_report_artifacts(f"stability_{mode}", report))
        flags[mode] = report.flags
    return arts, flags


def cmd_ops_check(cfg: Config):
    report = run_operator_check(_single_case(cfg), cfg.domain_kind, cfg.study_levels)
    return _report_artifacts("ops_check", report), report.flags


HANDLERS = {"forward": cmd_forward, "qr": cmd_qr, "qr-interior": cmd_qr_interior, "kv": cmd_kv,
            "study-conv": cmd_study_conv, "study-noise": cmd_study_noise,
            "study-robin": cmd_study_robin, "study-stability": cmd_study_stability,
            "ops-check": cmd_ops_check}


# ---------------------------------------------------------------------------
# dry run

def plan(command: str, cfg: Config) -> dict:
    """Problem sizes and solve counts of a run, without numerical work."""
    grid = _grid(cfg)
    N = grid.num_nodes
    out = {"command": command, "domain": grid.kind.value, "n": grid.n, "nodes": N,
           "state_unknowns": 3 * N}
    if command in ("study-conv", "study-noise"):
        validate_eps_list(cfg.eps_list)
    if command in ("qr", "study-conv", "study-noise", "qr-interior"):
        free = 3 * N - 2 * len(grid.segment("gamma_obs"))
        out["free_unknowns"] = free if command != "qr-interior" else 3 * N
        out["sparse_factorizations"] = len(cfg.eps_list) * (cfg.window_nested
                                                            if command == "qr-interior" else 1)
    if command == "kv" or (command in ("study-conv", "study-noise") and cfg.study_method == "kv"):
        if grid.kind is not DomainKind.SQUARE_ANNULUS:
            raise ConfigError("value-out-of-range", "domain.kind: Kohn-Vogelius needs square_annulus")
        m = len(grid.segment("gamma_c"))
        out["reduced_dim"] = 4 * m
        out["basis_solves"] = 4 * m
    if command == "study-noise":
        out["noise_levels"] = len(cfg.delta_list)
    if command == "study-robin":
        out["robin_levels"] = list(cfg.robin_levels)
        out["forward_solves_per_level"] = 1 + len(cfg.robin_t_list)
    if command == "ops-check":
        out["levels"] = list(cfg.study_levels)
    if command == "forward":
        out["forward_solves"] = 2 + 2 * len(cfg.study_levels)
    return out


# ---------------------------------------------------------------------------
# entry point

def _manifest(command, cfg, files, elapsed, passed, code) -> str:
    return _json({
        "command": command,
        "config": cfg.echo(),
        "files": [{"name": n, "sha256": hashlib.sha256(b).hexdigest(), "bytes": len(b)}
                  for n, b in sorted(files.items())],
        "versions": {"cauchy_stokes": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "timings": {"wall_s": elapsed},
        "flags_passed": passed,
        "exit_code": code,
    })


def _all_pass(flags) -> bool:
    if isinstance(flags, dict):
        return all(_all_pass(v) for v in flags.values())
    return flags is not False


def run(command: str, cfg: Config, out_dir: str | None = None, dry_run: bool = False) -> int:
    if command not in HANDLERS:
        print(USAGE, file=sys.stderr)
        print(f"cauchy-stokes: unknown command {command!r}", file=sys.stderr)
        return 1
    try:
        validate(cfg)
        if dry_run:
            print(json.dumps(plan(command, cfg), indent=2))
            return 0
        t0 = time.perf_counter()
        artifacts, flags = HANDLERS[command](cfg)
        elapsed = time.perf_counter() - t0
    except Exception as exc:  # every module error maps to exit code 1
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"cauchy-stokes: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    passed = _all_pass(flags)
    code = 0 if passed else 2
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {name: text.encode() for name, text in artifacts.items()}
    for name, data in sorted(files.items()):
        (out / name).write_bytes(data)
    (out / "manifest.json").write_text(_manifest(command, cfg, files, elapsed, passed, code))
    status = "pass" if passed else "FLAG FAILURE"
    print(f"{command}: {status}; {len(files)} artifacts in {out}")
    return code


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(USAGE, file=sys.stderr)
        print(f"cauchy-stokes: {exc}", file=sys.stderr)
        return 1
    if args.command not in COMMANDS:
        print(USAGE, file=sys.stderr)
        print(f"cauchy-stokes: unknown command {args.command!r}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(args.config) if args.config else Config()
    except ConfigError as exc:
        print(f"cauchy-stokes: error: {exc}", file=sys.stderr)
        return 1
    return run(args.command, cfg, args.out, args.dry_run)


if __name__ == "__main__":
    sys.exit(main())
