import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cauchy_stokes.mesh import DomainKind, MeshError, boundary_run, build_grid, window


def test_unit_square_counts(square8):
    assert square8.num_nodes == 81
    assert int((~square8.interior_mask).sum()) == 32


def test_annulus_rim_counts():
    g = build_grid(DomainKind.SQUARE_ANNULUS, 8)
    assert len(g.segment("gamma_obs")) == 32
    # the hole (3/8, 5/8)^2 at h = 1/8 leaves a 3x3 block whose rim has 8 nodes
    assert len(g.segment("gamma_c")) == 8
    assert g.num_nodes == 81 - 1


@pytest.mark.parametrize("n", [12, 20])
def test_annulus_needs_divisible_n(n):
    with pytest.raises(MeshError, match="resolution-not-divisible"):
        build_grid(DomainKind.SQUARE_ANNULUS, n)


def test_n_too_small():
    with pytest.raises(MeshError, match="n-too-small"):
        build_grid(DomainKind.UNIT_SQUARE, 6)


def test_segment_assignment(square8, annulus16):
    west = square8.segment("gamma_obs")
    assert np.all(square8.xy[west.node_ids, 0] == 0.0)
    assert np.allclose(west.normals, [-1.0, 0.0])
    assert set(annulus16.boundary_segments) == {"gamma_obs", "gamma_c", "gamma_0"}
    assert np.array_equal(annulus16.segment("gamma_c").node_ids,
                          annulus16.segment("gamma_0").node_ids)
    assert annulus16.segment("gamma_obs").closed and not west.closed


def test_window_examples(square8, annulus16):
    assert len(window(square8, (0.25, 0.5, 0.25, 0.5))) == 9
    assert len(window(annulus16, (0.0625, 0.1875, 0.0625, 0.1875))) == 9
    with pytest.raises(MeshError, match="rect-touches-boundary"):
        window(square8, (0.0, 0.5, 0.0, 0.5))
    with pytest.raises(MeshError, match="rect-empty"):
        window(square8, (0.5, 0.25, 0.25, 0.5))


def test_window_weights_integrate_area(square16):
    w = window(square16, (0.25, 0.75, 0.125, 0.5))
    assert w.weights.sum() == pytest.approx(0.5 * 0.375, rel=1e-12)


def test_boundary_run_examples(annulus16):
    rim = annulus16.segment("gamma_0")
    whole = boundary_run(rim, 0.0, 1.0)
    assert np.array_equal(whole.node_ids, rim.node_ids)
    quarter = boundary_run(rim, 0.0, 0.25)
    assert abs(len(quarter) - len(rim) / 4) <= 1
    with pytest.raises(MeshError, match="empty-run"):
        boundary_run(rim, 0.5, 0.5)


@pytest.mark.parametrize("kind,n", [(DomainKind.UNIT_SQUARE, 8), (DomainKind.UNIT_SQUARE, 13),
                                    (DomainKind.SQUARE_ANNULUS, 8), (DomainKind.SQUARE_ANNULUS, 24)])
def test_grid_invariants(kind, n):
    g = build_grid(kind, n)
    assert g.h * n == 1.0
    on_seg = np.zeros(g.num_nodes, dtype=bool)
    for seg in g.boundary_segments.values():
        on_seg[seg.node_ids] = True
        assert np.allclose(np.linalg.norm(seg.normals, axis=1), 1.0)
    # interior xor boundary
    assert np.array_equal(on_seg, ~g.interior_mask)
    # stepping one h inward from a boundary node stays in the domain
    for seg in g.boundary_segments.values():
        for k, nrm in zip(seg.node_ids, seg.normals):
            i, j = g.ij[k]
            di, dj = -np.sign(nrm).astype(int)
            assert g.has_node(i + di, j + dj)
    lengths = {name: seg.length for name, seg in g.boundary_segments.items()}
    if kind is DomainKind.UNIT_SQUARE:
        assert lengths["gamma_obs"] + lengths["gamma_c"] == pytest.approx(4.0, rel=1e-12)
    else:
        assert lengths["gamma_obs"] == pytest.approx(4.0, rel=1e-12)
        assert lengths["gamma_c"] == pytest.approx(1.0, rel=1e-12)
        outer = g.xy[g.segment("gamma_obs").node_ids]
        inner = g.xy[g.segment("gamma_c").node_ids]
        gap = np.min(np.abs(outer[:, None, :] - inner[None, :, :]).max(axis=2))
        assert gap >= 3 * g.h - 1e-12


def test_non_corner_normals_axis_aligned(annulus16):
    for seg in annulus16.boundary_segments.values():
        axis = np.isclose(np.abs(seg.normals).max(axis=1), 1.0)
        i, j = annulus16.ij[seg.node_ids].T
        corner = np.isin(i, [0, 16, 6, 10]) & np.isin(j, [0, 16, 6, 10])
        assert np.all(axis | corner)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(list(DomainKind)), st.integers(1, 6))
def test_build_is_deterministic(kind, k):
    n = 8 * k
    a, b = build_grid(kind, n), build_grid(kind, n)
    assert np.array_equal(a.ij, b.ij)
    assert a == b and hash(a) == hash(b)
    for name in a.boundary_segments:
        assert np.array_equal(a.segment(name).node_ids, b.segment(name).node_ids)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.95), st.floats(0.02, 1.0))
def test_boundary_run_is_contiguous(start, width):
    g = build_grid(DomainKind.SQUARE_ANNULUS, 32)
    rim = g.segment("gamma_0")
    end = min(1.0, start + width)
    try:
        run = boundary_run(rim, start, end)
    except MeshError:
        return
    assert np.all(np.diff(run.positions) == 1)
    assert run.weights.sum() == pytest.approx((len(run) - 1) * g.h, rel=1e-12) or len(run) == len(rim)
