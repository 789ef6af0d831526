import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optcasimir.geometry import (GeometryError, Plane, PrecisionError, Sphere, SurfaceChart,
                                 chart_to_point, first_hit, point_to_chart, reflect, shape_at)

unit_vec = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.array(v) / np.linalg.norm(v))


def z_plane(z=0.0, up=True, extent=None):
    return Plane(point=(0, 0, z), normal=(0, 0, 1 if up else -1), extent=extent,
                 axes=np.array([[1.0, 0, 0], [0, 1.0 if up else -1.0, 0]]))


def test_plane_chart_examples():
    p = z_plane()
    assert np.allclose(chart_to_point(SurfaceChart(p, 0.0, 0.0)), [0, 0, 0])
    assert np.allclose(chart_to_point(SurfaceChart(p, 1.5, -2.0)), [1.5, -2.0, 0.0])


def test_sphere_pole():
    s = Sphere(center=(0, 0, 0), radius=1.0)
    assert np.allclose(chart_to_point(SurfaceChart(s, 0.0, 0.0)), [0, 0, 1], atol=1e-15)


def test_chart_out_of_range():
    s = Sphere(center=(0, 0, 0), radius=1.0)
    with pytest.raises(GeometryError):
        s.chart_to_point(4.0, 0.0)
    finite = z_plane(extent=(1.0, 1.0))
    with pytest.raises(GeometryError):
        finite.chart_to_point(0.8, 0.0)


@pytest.mark.parametrize("surface", [
    z_plane(),
    Sphere(center=(0.3, -0.2, 2.0), radius=1.7),
    Sphere(center=(0, 0, 0), radius=0.5, vacuum_outside=False, axis=(1, 1, 0)),
])
def test_chart_roundtrip(surface):
    rng = np.random.default_rng(1)
    if surface.kind == "plane":
        u, v = rng.uniform(-5, 5, 1000), rng.uniform(-5, 5, 1000)
    else:
        # stay off the poles where phi is undefined
        u, v = rng.uniform(0.01, np.pi - 0.01, 1000), rng.uniform(-np.pi, np.pi, 1000)
    p = surface.chart_to_point(u, v)
    assert np.max(np.abs(surface.signed_distance(p))) < 1e-12
    u2, v2 = surface.point_to_chart(p)
    assert np.max(np.abs(u2 - u)) < 1e-9
    dv = np.angle(np.exp(1j * (v2 - v)))
    assert np.max(np.abs(dv)) < 1e-9


def test_point_to_chart_object():
    s = Sphere(center=(0, 0, 0), radius=2.0)
    c = point_to_chart(s, [0.0, 2.0, 0.0])
    assert c.u == pytest.approx(np.pi / 2)
    assert np.allclose(c.point(), [0, 2, 0])


def test_shape_plane():
    d = shape_at(z_plane(), [3.0, -1.0, 0.0])
    assert np.allclose(d.normal, [0, 0, 1])
    assert np.allclose(d.shape, 0.0)


def test_shape_sphere():
    d = shape_at(Sphere(center=(0, 0, 0), radius=2.0), [0, 0, 2.0])
    assert np.allclose(d.normal, [0, 0, 1])
    assert np.allclose(d.shape, 0.5 * np.eye(2))
    d = shape_at(Sphere(center=(0, 0, 0), radius=1.0), [1.0, 0, 0])
    assert np.allclose(d.normal, [1, 0, 0])
    assert np.allclose(d.shape, np.eye(2))


def test_shape_cavity_sign():
    d = shape_at(Sphere(center=(0, 0, 0), radius=1.0, vacuum_outside=False), [0, 1.0, 0])
    assert np.allclose(d.normal, [0, -1, 0])
    assert np.allclose(d.shape, -np.eye(2))


def test_shape_off_surface():
    with pytest.raises(PrecisionError):
        shape_at(Sphere(center=(0, 0, 0), radius=1.0), [0, 0, 1.01])


def test_reflect_examples():
    s2 = np.sqrt(0.5)
    assert np.allclose(reflect([0, 0, -1], [0, 0, 1]), [0, 0, 1])
    assert np.allclose(reflect([s2, 0, -s2], [0, 0, 1]), [s2, 0, s2])
    assert np.allclose(reflect([1, 0, 0], [0, 0, 1]), [1, 0, 0])


@settings(max_examples=200, deadline=None)
@given(unit_vec, unit_vec)
def test_reflect_involution_and_angles(d, n):
    out = reflect(d, n)
    assert np.allclose(reflect(out, n), d, atol=1e-12)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
    assert -np.dot(d, n) == pytest.approx(np.dot(out, n), abs=1e-12)


def test_first_hit_between_plates():
    surfaces = [z_plane(0.0), z_plane(1.0, up=False)]
    idx, p, dist = first_hit([0, 0, 0.5], [0, 0, -1], surfaces)
    assert idx == 0 and dist == pytest.approx(0.5)
    assert np.allclose(p, [0, 0, 0])


def test_first_hit_sphere_axis():
    a, R, z0 = 0.3, 1.0, 0.1
    sphere = Sphere(center=(0, 0, a + R), radius=R)
    idx, p, dist = first_hit([0, 0, z0], [0, 0, 1], [z_plane(), sphere])
    assert idx == 1 and dist == pytest.approx(a - z0)


def test_first_hit_escapes_finite_plates():
    surfaces = [z_plane(0.0, extent=(1, 1)), z_plane(1.0, up=False, extent=(1, 1))]
    assert first_hit([0, 0, 0.5], [1, 0, 0], surfaces) is None
    # a steep ray still lands inside the extent
    assert first_hit([0, 0, 0.5], [0.2, 0, -1], surfaces)[0] == 0


@settings(max_examples=200, deadline=None)
@given(unit_vec)
def test_first_hit_on_surface(d):
    sphere = Sphere(center=(0, 0, 1.5), radius=1.0)
    surfaces = [z_plane(), sphere]
    hit = first_hit([0.2, 0.1, 0.25], d, surfaces)
    if hit is None:
        assert d[2] >= 0
        return
    idx, p, dist = hit
    assert dist > 0
    assert abs(surfaces[idx].signed_distance(p)) < 1e-9


def test_invalid_surfaces():
    with pytest.raises(GeometryError):
        Plane(point=(0, 0, 0), normal=(0, 0, 2))
    with pytest.raises(GeometryError):
        Sphere(center=(0, 0, 0), radius=0.0)
    with pytest.raises(GeometryError):
        z_plane(extent=(1.0, -1.0))
