import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cauchy_stokes.fields import BoundaryField, VectorField
from cauchy_stokes.kv import (KVError, KVReducedModel, KVUnknown, exact_unknown, forward_states,
                              kv_floor, kv_gradient_check, kv_value, minimize_kv,
                              solve_forward_phi, solve_forward_psi)
from cauchy_stokes.manufactured import make_cauchy_data
from cauchy_stokes.mesh import DomainKind, build_grid
from cauchy_stokes.norms import norm_l2, seminorm_h1, seminorm_h2, state_norm
from cauchy_stokes.operators import OseenCoefficients


@pytest.fixture(scope="module")
def ms2_16():
    prob = make_cauchy_data("MS2", build_grid(DomainKind.SQUARE_ANNULUS, 16))
    return prob, KVReducedModel(prob)


@pytest.fixture(scope="module")
def zero_16():
    prob = make_cauchy_data("MS0", build_grid(DomainKind.SQUARE_ANNULUS, 16))
    return prob, KVReducedModel(prob)


def test_forward_zero_data(annulus16):
    c = OseenCoefficients.stokes(annulus16)
    f = VectorField.zeros(annulus16)
    obs, gc = annulus16.segment("gamma_obs"), annulus16.segment("gamma_c")
    z_obs, z_c = np.zeros((len(obs), 2)), np.zeros((len(gc), 2))
    assert not np.any(solve_forward_phi(annulus16, c, f, z_obs, z_c).vector())
    assert not np.any(solve_forward_psi(annulus16, c, f, z_obs, z_c).vector())


def test_forward_needs_annulus(square8):
    prob = make_cauchy_data("MS1", square8)
    with pytest.raises(KVError, match="wrong-domain-kind"):
        solve_forward_phi(square8, prob.coeffs, prob.f, prob.g_D, prob.g_D)


@pytest.mark.parametrize("which", ["phi", "psi"])
def test_forward_recovers_ms1(annulus16, which):
    prob = make_cauchy_data("MS1", annulus16)
    phi, psi = forward_states(prob, exact_unknown(prob))
    st_ = phi if which == "phi" else psi
    err = st_ - prob.exact
    # linear velocity and constant pressure are reproduced by every stencil
    assert norm_l2(err.v) < 1e-9 and norm_l2(err.p) < 1e-9


@pytest.mark.parametrize("which", ["phi", "psi"])
def test_forward_ms2_velocity_order(which):
    errs = []
    for n in (16, 32):
        prob = make_cauchy_data("MS2", build_grid(DomainKind.SQUARE_ANNULUS, n))
        phi, psi = forward_states(prob, exact_unknown(prob))
        st_ = phi if which == "phi" else psi
        errs.append(norm_l2((st_ - prob.exact).v))
    assert np.log2(errs[0] / errs[1]) >= 1.5


def test_kv_value_examples(zero_16, ms2_16):
    prob, _ = zero_16
    u0 = KVUnknown.zeros(prob.grid.segment("gamma_c"))
    assert kv_value(u0, prob, 1e-3) == (0.0, 0.0)
    prob2, model = ms2_16
    eps = 1e-4
    F, Fe = kv_value(exact_unknown(prob2), prob2, eps)
    floor = kv_floor(prob2, model)
    assert F == pytest.approx(floor["rho_h"], rel=1e-8)
    M = floor["M_h"]
    assert Fe <= floor["rho_h"] + 2 * eps * M**2
    with pytest.raises(KVError, match="epsilon-nonpositive"):
        kv_value(u0, prob, -1.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3.0, 3.0), st.integers(0, 2**31 - 1))
def test_kv_value_is_quadratic_with_zero_data(t, seed):
    prob = make_cauchy_data("MS0", build_grid(DomainKind.SQUARE_ANNULUS, 8))
    seg = prob.grid.segment("gamma_c")
    u = np.random.default_rng(seed).standard_normal(4 * len(seg))
    base = kv_value(KVUnknown.from_vector(seg, u), prob, 1e-2)
    scaled = kv_value(KVUnknown.from_vector(seg, t * u), prob, 1e-2)
    assert scaled[1] == pytest.approx(t**2 * base[1], rel=1e-8, abs=1e-12)
    assert scaled[0] == pytest.approx(t**2 * base[0], rel=1e-6, abs=1e-10)


def test_minimize_zero_data(zero_16):
    prob, model = zero_16
    sol = minimize_kv(prob, 1e-4, model)
    assert not np.any(sol.unknown.vector()) and sol.F_eps_value == 0.0


def test_minimizer_properties(ms2_16):
    prob, model = ms2_16
    eps = 1e-4
    sol = minimize_kv(prob, eps, model)
    # F and F_eps recomputed from the stored states
    gap = sol.state_phi.v - sol.state_psi.v
    F = seminorm_h1(gap) ** 2 + seminorm_h2(gap) ** 2
    assert sol.F_value == pytest.approx(F, rel=1e-10)
    Fe = F + eps * (state_norm(sol.state_phi) ** 2 + state_norm(sol.state_psi) ** 2)
    assert sol.F_eps_value == pytest.approx(Fe, rel=1e-10)
    assert sol.min_hessian_eig > 0
    # fresh forward solves at the minimizer agree with the reduced model
    assert kv_value(sol.unknown, prob, eps)[1] == pytest.approx(sol.F_eps_value, rel=1e-8)
    seg = model.segment
    rng = np.random.default_rng(0)
    probes = [exact_unknown(prob).vector(), np.zeros(model.reduced_dim)]
    probes += [sol.unknown.vector() + 0.1 * rng.standard_normal(model.reduced_dim) for _ in range(3)]
    for u in probes:
        assert sol.F_eps_value <= model.value(u, eps)[1]
    g0 = np.linalg.norm(model.gradient(np.zeros(model.reduced_dim), eps))
    assert np.linalg.norm(model.gradient(sol.unknown.vector(), eps)) <= 1e-6 * g0
    # output pairing and alternative pairing
    assert np.array_equal(sol.state.v.x, sol.state_phi.v.x)
    assert np.array_equal(sol.state.p.values, sol.state_psi.p.values)
    assert np.array_equal(sol.alternative_state.v.x, sol.state_psi.v.x)
    assert sol.as_dict()["reduced_dim"] == 4 * len(seg)


def test_gap_seminorm_controls_velocity_difference(ms2_16):
    prob, model = ms2_16
    for eps in (1e-2, 1e-4, 1e-6):
        sol = minimize_kv(prob, eps, model)
        gap = sol.state_phi.v - sol.state_psi.v
        assert seminorm_h1(gap) <= np.sqrt(sol.F_value) * (1 + 1e-12)


def test_gradient_check(ms2_16):
    prob, model = ms2_16
    seg = model.segment
    rng = np.random.default_rng(2024)
    direction = rng.standard_normal(model.reduced_dim)
    u = KVUnknown.from_vector(seg, rng.standard_normal(model.reduced_dim))
    res = kv_gradient_check(prob, 1e-3, u, direction, model=model, tol=1e-10)
    assert res["relative_error"] <= 1e-5
    with pytest.raises(KVError):
        kv_gradient_check(prob, 1e-3, u, np.zeros(model.reduced_dim), model=model)


def test_minimize_errors(ms2_16, square8):
    prob, model = ms2_16
    with pytest.raises(KVError, match="epsilon-nonpositive"):
        minimize_kv(prob, 0.0, model)
    with pytest.raises(KVError, match="wrong-domain-kind"):
        KVReducedModel(make_cauchy_data("MS2", square8))


def test_unknown_roundtrip(annulus16):
    seg = annulus16.segment("gamma_c")
    u = np.arange(4.0 * len(seg))
    assert np.array_equal(KVUnknown.from_vector(seg, u).vector(), u)
    with pytest.raises(KVError):
        KVUnknown.from_vector(seg, u[:-1])
    other = annulus16.segment("gamma_obs")
    with pytest.raises(KVError):
        KVUnknown(BoundaryField(seg, np.zeros((len(seg), 2))), BoundaryField(other, np.zeros((len(other), 2))))


def test_apriori_norm_bound(ms2_16):
    prob, model = ms2_16
    floor = kv_floor(prob, model)
    M = floor["M_h"]
    for eps in (1e-2, 1e-4, 1e-6):
        sol = minimize_kv(prob, eps, model)
        sq = sol.norm_phi_state**2 + sol.norm_psi_state**2
        assert sq <= 2 * M**2 * 1.1 + floor["norm_excess"]
        assert sol.F_value <= 2 * eps * M**2 * 1.1 + 2 * floor["rho_h"]
