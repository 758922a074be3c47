import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poriferous.errors import DegenerateFit, DegenerateTransform, OutOfDomain
from poriferous.geometry import (
    Circle,
    MobiusParams,
    PlanarLocator,
    SimilarityParams,
    arc_polyline,
    fit_circle,
    line_circle_intersect,
    mobius_apply,
    point_locate,
    similarity_apply,
)
from poriferous.mesh import disk_grid_mesh

disk_params = st.tuples(
    st.floats(0, 2 * math.pi),
    st.floats(0, 0.95),
    st.floats(0, 2 * math.pi),
).map(lambda t: MobiusParams(t[0], t[1] * complex(math.cos(t[2]), math.sin(t[2]))))


def test_mobius_identity_and_origin():
    assert mobius_apply(0.3 + 0j, MobiusParams()) == pytest.approx(0.3)
    assert mobius_apply(0j, MobiusParams(0.0, 0.5)) == pytest.approx(-0.5)


def test_mobius_rejects_boundary_parameter():
    with pytest.raises(DegenerateTransform):
        MobiusParams(0.0, 1.0 + 0j)


@settings(max_examples=50, deadline=None)
@given(disk_params)
def test_mobius_keeps_unit_circle(m):
    z = np.exp(1j * np.linspace(0, 2 * np.pi, 100, endpoint=False))
    assert np.max(np.abs(np.abs(mobius_apply(z, m)) - 1)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(disk_params, disk_params)
def test_mobius_inverse_and_compose(m, n):
    z = 0.6 * np.exp(1j * np.linspace(0, 6, 17))
    back = mobius_apply(mobius_apply(z, m), m.inverse())
    assert np.allclose(back, z, atol=1e-9)
    both = mobius_apply(z, m.compose(n))
    assert np.allclose(both, mobius_apply(mobius_apply(z, n), m), atol=1e-9)


def test_similarity():
    z = np.array([0.1 + 0.2j, -0.7j])
    assert np.allclose(similarity_apply(z, SimilarityParams()), z)
    assert similarity_apply(1 + 0j, SimilarityParams(2j, 1)) == pytest.approx(1 + 2j)
    t = SimilarityParams(0.5 - 1.2j, 0.3 + 0.1j)
    ring = 0.1 + 0.4j + 0.25 * np.exp(1j * np.linspace(0, 2 * np.pi, 64, endpoint=False))
    c = fit_circle(similarity_apply(ring, t))
    assert c.radius == pytest.approx(abs(t.alpha) * 0.25, abs=1e-12)
    with pytest.raises(DegenerateTransform):
        SimilarityParams(0j)


def test_fit_circle_exact_and_noisy():
    c = fit_circle([1, 1j, -1])
    assert abs(c.center) < 1e-12 and c.radius == pytest.approx(1.0)
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 2 * np.pi, 100)
    pts = 0.2 + 0.1j + 0.3 * np.exp(1j * t) + 1e-6 * (rng.standard_normal(100) + 1j * rng.standard_normal(100))
    c = fit_circle(pts)
    assert abs(c.center - (0.2 + 0.1j)) < 1e-4
    assert abs(c.radius - 0.3) < 1e-4


@pytest.mark.parametrize("pts", [[0, 1], [0, 1, 2], [0.5j, 0.5j, 0.5j]])
def test_fit_circle_degenerate(pts):
    with pytest.raises(DegenerateFit):
        fit_circle(pts)


def test_line_circle_hand_solved():
    assert line_circle_intersect(1 + 0j, Circle(0.5, 0.1)) == pytest.approx((0.4, 0.6), abs=1e-10)
    assert line_circle_intersect(1 + 0j, Circle(0.5 + 0.2j, 0.1)) is None
    assert line_circle_intersect(1 + 0j, Circle(0.5 + 0.06j, 0.1)) == pytest.approx((0.42, 0.58), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.2, 0.7), st.floats(-0.09, 0.09), st.floats(0.1, 0.2))
def test_line_circle_points_lie_on_circle(theta, along, off, r):
    d = complex(math.cos(theta), math.sin(theta))
    c = Circle(d * complex(along, off), r)
    hit = line_circle_intersect(d, c)
    assert hit is not None
    for xi in hit:
        assert abs(abs(xi * d - c.center) - r) < 1e-10


def test_arc_polyline():
    unit = Circle(0j, 1.0)
    assert np.allclose(arc_polyline(unit, 0, math.pi / 2, 2), [1, 1j], atol=1e-15)
    same = arc_polyline(Circle(0.2, 0.3), 1.0, 1.0, 5)
    assert np.allclose(same, same[0])
    half = arc_polyline(unit, 0, math.pi, 3)
    assert abs(half[1] - 1j) < 1e-12
    pts = arc_polyline(unit, 0, math.pi, 9)
    chords = np.abs(pts - pts[0])
    assert np.all(np.diff(chords) > 0)
    # forced direction goes the long way round
    cw = arc_polyline(unit, 0, math.pi / 2, 3, ccw=False)
    assert cw[1].real < 0


def test_point_locate_on_disk():
    mesh = disk_grid_mesh(6, 24)
    pts = mesh.vertices[:, 0] + 1j * mesh.vertices[:, 1]
    f, bc = point_locate(pts, mesh.faces, pts[10])
    assert sorted(np.round(bc, 12)) == [0, 0, 1]
    cen = pts[mesh.faces[7]].mean()
    f, bc = point_locate(pts, mesh.faces, cen)
    assert f == 7 and np.allclose(bc, 1 / 3, atol=1e-12)
    rng = np.random.default_rng(0)
    q = 0.9 * np.sqrt(rng.uniform(size=200)) * np.exp(2j * np.pi * rng.uniform(size=200))
    loc = PlanarLocator(pts, mesh.faces)
    faces, bary = loc.locate_many(q)
    assert np.all(faces >= 0)
    back = np.einsum("ij,ij->i", bary, pts[mesh.faces[faces]])
    assert np.max(np.abs(back - q)) < 1e-10
    with pytest.raises(OutOfDomain):
        loc.locate(1.5)
