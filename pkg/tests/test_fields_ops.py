import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cauchy_stokes.fields import (BoundaryField, ScalarField, StokesState, VectorField,
                                  field_to_csv, read_field_csv, trace, write_field_csv)
from cauchy_stokes.mesh import DomainKind, build_grid
from cauchy_stokes.norms import (FractionalNormOperator, NormError, boundary_l2, boundary_norm,
                                 norm_h1, norm_h2, norm_l2, seminorm_h1, seminorm_h2, state_norm)
from cauchy_stokes.operators import (OseenCoefficients, curl_scal, curl_vec, div_residual,
                                     divergence, gradient, laplacian, normal_derivative,
                                     oseen_residual, sym_gradient, traction)

PI = np.pi


def _order(e_coarse, e_fine, ratio=2.0):
    return np.log(e_coarse / e_fine) / np.log(ratio)


def test_linear_field_exactness(annulus16):
    y = VectorField.from_function(annulus16, lambda x, y: (x, y))
    assert np.allclose(divergence(y).values, 2.0, atol=1e-12)
    rot = VectorField.from_function(annulus16, lambda x, y: (-y, x))
    assert np.allclose(curl_vec(rot).values, 2.0, atol=1e-12)


def test_curl_scal_is_rotated_gradient(square16):
    w = ScalarField.from_function(square16, lambda x, y: x**2 * y - y**2)
    g, c = gradient(w), curl_scal(w)
    assert np.array_equal(c.x, g.y) and np.array_equal(c.y, -g.x)


def test_laplacian_orders():
    full, inner = [], []
    for n in (16, 32, 64):
        g = build_grid(DomainKind.UNIT_SQUARE, n)
        u = ScalarField.from_function(g, lambda x, y: np.sin(PI * x) * np.sin(PI * y))
        err = np.abs(laplacian(u).values + 2 * PI**2 * u.values)
        full.append(err.max())
        inner.append(err[g.interior_mask].max())
    # centered rows are second order; one-sided boundary rows first order
    assert _order(inner[0], inner[1]) >= 1.8 and _order(inner[1], inner[2]) >= 1.8
    assert _order(full[1], full[2]) >= 0.9


def test_traction_examples(square8):
    seg = square8.segment("gamma_c")
    east = np.isclose(seg.normals[:, 0], 1.0)
    st_ = StokesState(VectorField.zeros(square8), ScalarField(square8, np.ones(square8.num_nodes)))
    t = traction(st_, seg).values
    assert np.allclose(t[east], [-1.0, 0.0])
    north = np.isclose(seg.normals[:, 1], 1.0)
    v = VectorField.from_function(square8, lambda x, y: (y, x))
    t = traction(StokesState(v, ScalarField.zeros(square8)), seg, nu=1.0).values
    assert np.allclose(t[north], [2.0, 0.0], atol=1e-12)
    D = sym_gradient(v)
    assert np.allclose(D, [[0.0, 1.0], [1.0, 0.0]], atol=1e-12)


def test_normal_derivative_examples(square8):
    west = square8.segment("gamma_obs")
    c = VectorField.from_function(square8, lambda x, y: (3.0 + 0 * x, -1.0 + 0 * y))
    assert np.allclose(normal_derivative(c, west).values, 0.0, atol=1e-12)
    y = VectorField.from_function(square8, lambda x, y: (x, 0 * y))
    assert np.allclose(normal_derivative(y, west).values, [-1.0, 0.0], atol=1e-12)


def test_ms1_traction_on_west_edge(square8):
    # v = (y, x), p = 1: sigma = [[-1, 2], [2, -1]], n = (-1, 0)
    v = VectorField.from_function(square8, lambda x, y: (y, x))
    st_ = StokesState(v, ScalarField(square8, np.ones(square8.num_nodes)))
    t = traction(st_, square8.segment("gamma_obs")).values
    assert np.allclose(t, [1.0, -2.0], atol=1e-12)


def test_traction_first_order_on_smooth_field():
    errs = []
    for n in (16, 32, 64):
        g = build_grid(DomainKind.SQUARE_ANNULUS, n)
        seg = g.segment("gamma_obs")
        v = VectorField.from_function(g, lambda x, y: (np.sin(2 * x + y), np.cos(x - 3 * y)))
        p = ScalarField.from_function(g, lambda x, y: np.exp(x * y))
        x, y = g.xy[seg.node_ids].T
        G = np.empty((len(x), 2, 2))
        G[:, 0, 0], G[:, 0, 1] = 2 * np.cos(2 * x + y), np.cos(2 * x + y)
        G[:, 1, 0], G[:, 1, 1] = -np.sin(x - 3 * y), 3 * np.sin(x - 3 * y)
        sig = (G + G.transpose(0, 2, 1)) - np.exp(x * y)[:, None, None] * np.eye(2)
        exact = np.einsum("kab,kb->ka", sig, seg.normals)
        errs.append(np.max(np.abs(traction(StokesState(v, p), seg).values - exact)))
    assert _order(errs[0], errs[1]) >= 1.0 and _order(errs[1], errs[2]) >= 1.0


def test_oseen_residual_trivial(square8):
    zero = StokesState.zeros(square8)
    c = OseenCoefficients.stokes(square8)
    assert not np.any(oseen_residual(zero, c, VectorField.zeros(square8)).stack())
    assert not np.any(div_residual(zero, ScalarField.zeros(square8)).values)
    z1 = VectorField.from_function(square8, lambda x, y: (1.0 + 0 * x, 0 * y))
    coeffs = OseenCoefficients(1.0, z1, VectorField.zeros(square8))
    v = VectorField.from_function(square8, lambda x, y: (x, 0 * y))
    f = VectorField.from_function(square8, lambda x, y: (1.0 + 0 * x, 0 * y))
    r = oseen_residual(StokesState(v, ScalarField.zeros(square8)), coeffs, f)
    assert np.allclose(r.stack(), 0.0, atol=1e-12)


def test_oseen_constants(square8):
    c = OseenCoefficients.stokes(square8)
    assert c.m_const == 1.0 and c.log_K == pytest.approx(np.e)
    assert np.log(np.log(c.K_const)) == pytest.approx(c.m_const, rel=1e-12)
    with pytest.raises(ValueError):
        OseenCoefficients.stokes(square8, nu=0.0)


def test_norm_examples():
    g = build_grid(DomainKind.UNIT_SQUARE, 16)
    one = ScalarField(g, np.ones(g.num_nodes))
    assert norm_l2(one) == pytest.approx(1.0, abs=1e-12)
    u = ScalarField.from_function(g, lambda x, y: x)
    assert seminorm_h1(u) == pytest.approx(1.0, abs=1e-12)
    assert seminorm_h2(u) == pytest.approx(0.0, abs=1e-12)
    g64 = build_grid(DomainKind.UNIT_SQUARE, 64)
    s = ScalarField.from_function(g64, lambda x, y: np.sin(PI * x) * np.sin(PI * y))
    assert norm_l2(s) == pytest.approx(0.5, rel=0.01)
    assert norm_h1(u) ** 2 == pytest.approx(norm_l2(u) ** 2 + 1.0, rel=1e-12)
    assert norm_h2(u) == pytest.approx(norm_h1(u), rel=1e-12)


def test_norm_on_region(square16):
    from cauchy_stokes.mesh import window
    w = window(square16, (0.25, 0.75, 0.25, 0.75))
    one = ScalarField(square16, np.ones(square16.num_nodes))
    assert norm_l2(one, w) == pytest.approx(0.5, rel=1e-12)


def test_boundary_norm_examples(annulus16):
    rim = annulus16.segment("gamma_0")
    one = BoundaryField(rim, np.ones(len(rim)))
    assert boundary_norm(one, 0.0) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(NormError, match="order-not-supported"):
        boundary_norm(one, 2.0)
    op = FractionalNormOperator.for_segment(rim)
    m = len(rim)
    mu1 = 4 * np.sin(PI / m) ** 2 / rim.h**2
    assert op.mu[1] == pytest.approx(mu1, rel=1e-10)
    theta = 2 * PI * np.arange(m) / m
    mode = BoundaryField(rim, np.cos(theta))
    ratio = boundary_norm(mode, 0.5) / boundary_norm(mode, 0.0)
    assert ratio == pytest.approx((1 + mu1) ** 0.25, rel=1e-10)


def test_fractional_operator_invariants(annulus32):
    for seg in annulus32.boundary_segments.values():
        op = FractionalNormOperator.for_segment(seg)
        assert np.all(op.mu >= 0) and np.all(np.diff(op.mu) >= -1e-9)
        G = op.modes.T @ (op.weights[:, None] * op.modes)
        assert np.allclose(G, np.eye(len(op)), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_boundary_norm_monotone_in_order(seed):
    g = build_grid(DomainKind.SQUARE_ANNULUS, 16)
    seg = g.segment("gamma_obs")
    vals = np.random.default_rng(seed).standard_normal((len(seg), 2))
    bf = BoundaryField(seg, vals)
    norms = [boundary_norm(bf, s) for s in (0.0, 0.5, 1.0, 1.5)]
    assert norms[0] == pytest.approx(boundary_l2(vals, seg.weights), rel=1e-10)
    assert all(a <= b * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_operators_are_linear(seed, a, b):
    g = build_grid(DomainKind.SQUARE_ANNULUS, 16)
    rng = np.random.default_rng(seed)
    u, w = (VectorField(g, rng.standard_normal(g.num_nodes), rng.standard_normal(g.num_nodes))
            for _ in range(2))
    comb = u * a + w * b
    for op in (divergence, curl_vec):
        lhs = op(comb).values
        rhs = a * op(u).values + b * op(w).values
        assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))
    L = laplacian(comb).stack()
    assert np.allclose(L, a * laplacian(u).stack() + b * laplacian(w).stack(),
                       atol=1e-9 * (1 + np.abs(L).max()))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pressure_trace_identity_exact(seed):
    # p = 2 nu (dv/dn . n) - (sigma n) . n holds with the same stencils on both sides
    g = build_grid(DomainKind.SQUARE_ANNULUS, 16)
    rng = np.random.default_rng(seed)
    nu = float(rng.uniform(0.1, 3.0))
    st_ = StokesState(VectorField(g, rng.standard_normal(g.num_nodes), rng.standard_normal(g.num_nodes)),
                      ScalarField(g, rng.standard_normal(g.num_nodes)))
    seg = g.segment("gamma_obs")
    dn = normal_derivative(st_.v, seg).values
    sn = traction(st_, seg, nu).values
    n = seg.normals
    p = 2 * nu * np.einsum("ka,ka->k", dn, n) - np.einsum("ka,ka->k", sn, n)
    flat = np.isclose(np.abs(n).max(axis=1), 1.0)
    assert np.allclose(p[flat], st_.p.values[seg.node_ids][flat], atol=1e-10)


def test_state_norm_and_csv_roundtrip(tmp_path, annulus16):
    rng = np.random.default_rng(3)
    N = annulus16.num_nodes
    st_ = StokesState.from_vector(annulus16, rng.standard_normal(3 * N))
    assert state_norm(st_) ** 2 == pytest.approx(norm_h2(st_.v) ** 2 + norm_h1(st_.p) ** 2)
    path = tmp_path / "s.csv"
    write_field_csv(path, st_)
    back = read_field_csv(path, annulus16)
    assert np.array_equal(back.vector(), st_.vector())
    assert field_to_csv(st_).splitlines()[0] == "i,j,x,y,vx,vy,p"
    assert field_to_csv(st_.p).splitlines()[0] == "i,j,x,y,value"
    assert trace(st_.v, annulus16.segment("gamma_0")).values.shape == (len(annulus16.segment("gamma_0")), 2)
