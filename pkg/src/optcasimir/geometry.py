"""Rigid boundary surfaces: planes and spheres.

Every routine works on arrays of shape ``(..., 3)`` so that whole batches of
points or rays can be processed at once; a single point of shape ``(3,)`` is
just the degenerate batch.

Conventions
-----------
* The *normal* of a surface always points into the vacuum domain.
* The *curvature operator* ``K`` is the derivative of that normal along the
  surface, ``dn = K dy``, written as a 3x3 matrix acting on tangent vectors.
  It is positive for a surface that is convex toward the vacuum (outside of
  a sphere) and zero for a plane.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ON_SURFACE_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for invalid surface data or chart parameters out of range."""


class PrecisionError(GeometryError):
    """Raised when a point expected on a surface is too far from it."""


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def orthonormal_basis(n):
    """Two unit vectors completing ``n`` to a right-handed orthonormal frame.

    Works on batches; returns ``(e1, e2)`` with ``e1 x e2 = n``.
    """
    n = np.asarray(n, dtype=float)
    # pick the helper axis least aligned with n
    helper = np.zeros_like(n)
    idx = np.argmin(np.abs(n), axis=-1)
    np.put_along_axis(helper, idx[..., None], 1.0, axis=-1)
    e1 = _unit(np.cross(helper, n))
    e2 = np.cross(n, e1)
    return e1, e2


def reflect(d_in, normal):
    """Specular reflection ``d - 2 (n.d) n`` of a direction about a normal."""
    d_in = np.asarray(d_in, dtype=float)
    normal = np.asarray(normal, dtype=float)
    dn = np.sum(d_in * normal, axis=-1, keepdims=True)
    return d_in - 2.0 * dn * normal


@dataclass(frozen=True)
class ShapeData:
    """Differential data of a surface at one point.

    ``shape`` is the 2x2 shape operator expressed in the orthonormal tangent
    basis ``basis`` (columns ``e1, e2``), in units of 1/length.
    """

    point: np.ndarray
    normal: np.ndarray
    shape: np.ndarray
    basis: np.ndarray


class Surface:
    """Common interface of the boundary surfaces.

    Subclasses implement the batch primitives; the scalar conveniences below
    are shared.
    """

    kind = "surface"
    name: str

    # -- batch primitives (overridden) ------------------------------------
    def signed_distance(self, p):  # pragma: no cover - interface
        raise NotImplementedError

    def project(self, p):  # pragma: no cover - interface
        raise NotImplementedError

    def normal_at(self, y):  # pragma: no cover - interface
        raise NotImplementedError

    def curvature_operator(self, y):  # pragma: no cover - interface
        raise NotImplementedError

    def retract(self, y, v):  # pragma: no cover - interface
        raise NotImplementedError

    def intersect(self, origin, d, tmin=0.0):  # pragma: no cover - interface
        raise NotImplementedError

    def in_extent(self, y):
        return np.ones(np.shape(y)[:-1], dtype=bool)

    # -- shared -----------------------------------------------------------
    def contains(self, p, tol=ON_SURFACE_TOL):
        """True where ``p`` lies strictly inside the body bounded by the surface."""
        return self.signed_distance(p) < -tol

    def tangent_basis(self, y):
        return orthonormal_basis(self.normal_at(y))

    def shape_at(self, p, tol=ON_SURFACE_TOL) -> ShapeData:
        """Normal and 2x2 shape operator at a single surface point."""
        p = np.asarray(p, dtype=float)
        if abs(float(self.signed_distance(p))) > tol * max(1.0, self.scale):
            raise PrecisionError(f"point {p} is not on {self.name}")
        n = self.normal_at(p)
        e1, e2 = self.tangent_basis(p)
        basis = np.stack([e1, e2], axis=-1)
        k3 = self.curvature_operator(p)
        shape = basis.T @ k3 @ basis
        shape = 0.5 * (shape + shape.T)
        return ShapeData(point=p, normal=n, shape=shape, basis=basis)

    @property
    def scale(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Plane(Surface):
    """Plane through ``point`` whose ``normal`` faces the vacuum.

    The body bounded by the plane is the half-space behind it.  ``extent``
    optionally restricts reflections to a rectangle ``L1 x L2`` centred on
    ``point`` and aligned with the chart axes.
    """

    point: np.ndarray
    normal: np.ndarray
    extent: Optional[tuple] = None
    name: str = "plane"
    axes: np.ndarray = field(default=None, repr=False)

    kind = "plane"

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if not np.isclose(np.linalg.norm(n), 1.0, atol=1e-12):
            raise GeometryError("plane normal must be a unit vector")
        object.__setattr__(self, "normal", _frozen(n))
        object.__setattr__(self, "point", _frozen(self.point))
        if self.extent is not None:
            if len(self.extent) != 2 or min(self.extent) <= 0:
                raise GeometryError("extent needs two positive side lengths")
            object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        if self.axes is None:
            e1, e2 = orthonormal_basis(n)
            object.__setattr__(self, "axes", _frozen(np.stack([e1, e2])))

    def signed_distance(self, p):
        return np.sum((np.asarray(p, dtype=float) - self.point) * self.normal, axis=-1)

    def project(self, p):
        p = np.asarray(p, dtype=float)
        return p - self.signed_distance(p)[..., None] * self.normal

    def normal_at(self, y):
        return np.broadcast_to(self.normal, np.shape(y)).copy()

    def tangent_basis(self, y):
        shape = np.shape(y)
        return (np.broadcast_to(self.axes[0], shape).copy(),
                np.broadcast_to(self.axes[1], shape).copy())

    def curvature_operator(self, y):
        return np.zeros(np.shape(y)[:-1] + (3, 3))

    def retract(self, y, v):
        return self.project(np.asarray(y) + v)

    def in_extent(self, y):
        if self.extent is None:
            return np.ones(np.shape(y)[:-1], dtype=bool)
        rel = np.asarray(y, dtype=float) - self.point
        u = np.abs(rel @ self.axes[0])
        w = np.abs(rel @ self.axes[1])
        tol = ON_SURFACE_TOL * max(self.extent)
        return (u <= 0.5 * self.extent[0] + tol) & (w <= 0.5 * self.extent[1] + tol)

    def intersect(self, origin, d, tmin=0.0):
        origin = np.asarray(origin, dtype=float)
        d = np.asarray(d, dtype=float)
        denom = np.sum(d * self.normal, axis=-1)
        num = np.sum((self.point - origin) * self.normal, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = np.where(np.abs(denom) > 1e-300, num / denom, np.inf)
        t = np.where(t > tmin, t, np.inf)
        if self.extent is not None:
            hit = origin + np.where(np.isfinite(t), t, 0.0)[..., None] * d
            t = np.where(self.in_extent(hit), t, np.inf)
        return t

    # -- chart: Cartesian offsets along the two axes -----------------------
    def chart_range(self):
        if self.extent is None:
            return ((-np.inf, np.inf), (-np.inf, np.inf))
        return ((-0.5 * self.extent[0], 0.5 * self.extent[0]),
                (-0.5 * self.extent[1], 0.5 * self.extent[1]))

    def chart_to_point(self, u, v):
        (u0, u1), (v0, v1) = self.chart_range()
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.any((u < u0) | (u > u1) | (v < v0) | (v > v1)):
            raise GeometryError("chart parameters outside the plane extent")
        return self.point + u[..., None] * self.axes[0] + v[..., None] * self.axes[1]

    def point_to_chart(self, p):
        rel = np.asarray(p, dtype=float) - self.point
        return rel @ self.axes[0], rel @ self.axes[1]


@dataclass(frozen=True)
class Sphere(Surface):
    """Sphere of radius ``radius``.

    ``vacuum_outside`` selects which side is vacuum; the default describes a
    solid ball.  The chart uses polar angles ``(theta, phi)`` measured from
    ``axis`` (default ``+z``), ``theta`` in ``[0, pi]`` and ``phi`` in
    ``[-pi, pi]``.
    """

    center: np.ndarray
    radius: float
    vacuum_outside: bool = True
    name: str = "sphere"
    axis: np.ndarray = field(default=(0.0, 0.0, 1.0))

    kind = "sphere"

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("sphere radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "center", _frozen(self.center))
        object.__setattr__(self, "axis", _frozen(_unit(self.axis)))

    @property
    def scale(self) -> float:
        return self.radius

    @property
    def _sign(self):
        return 1.0 if self.vacuum_outside else -1.0

    def signed_distance(self, p):
        r = np.linalg.norm(np.asarray(p, dtype=float) - self.center, axis=-1)
        return self._sign * (r - self.radius)

    def project(self, p):
        rel = np.asarray(p, dtype=float) - self.center
        return self.center + self.radius * _unit(rel)

    def normal_at(self, y):
        return self._sign * _unit(np.asarray(y, dtype=float) - self.center)

    def curvature_operator(self, y):
        n = _unit(np.asarray(y, dtype=float) - self.center)
        proj = np.eye(3) - n[..., :, None] * n[..., None, :]
        return (self._sign / self.radius) * proj

    def retract(self, y, v):
        return self.project(np.asarray(y) + v)

    def intersect(self, origin, d, tmin=0.0):
        origin = np.asarray(origin, dtype=float)
        d = np.asarray(d, dtype=float)
        rel = origin - self.center
        b = np.sum(rel * d, axis=-1)
        c = np.sum(rel * rel, axis=-1) - self.radius ** 2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t1 = -b - root
        t2 = -b + root
        t = np.where(t1 > tmin, t1, np.where(t2 > tmin, t2, np.inf))
        return np.where(disc >= 0.0, t, np.inf)

    def _chart_axes(self):
        e1, e2 = orthonormal_basis(self.axis)
        return e1, e2, self.axis

    def chart_range(self):
        return ((0.0, np.pi), (-np.pi, np.pi))

    def chart_to_point(self, theta, phi):
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if np.any((theta < 0) | (theta > np.pi) | (phi < -np.pi) | (phi > np.pi)):
            raise GeometryError("sphere chart angles out of range")
        e1, e2, e3 = self._chart_axes()
        st = np.sin(theta)[..., None]
        direction = (st * np.cos(phi)[..., None] * e1 + st * np.sin(phi)[..., None] * e2
                     + np.cos(theta)[..., None] * e3)
        return self.center + self.radius * direction

    def point_to_chart(self, p):
        e1, e2, e3 = self._chart_axes()
        rel = _unit(np.asarray(p, dtype=float) - self.center)
        theta = np.arccos(np.clip(rel @ e3, -1.0, 1.0))
        phi = np.arctan2(rel @ e2, rel @ e1)
        return theta, phi


@dataclass(frozen=True)
class SurfaceChart:
    """Chart coordinates ``(u, v)`` on one surface of a scene."""

    surface: Surface
    u: float
    v: float

    def point(self):
        return chart_to_point(self)


def chart_to_point(chart: SurfaceChart):
    return chart.surface.chart_to_point(chart.u, chart.v)


def point_to_chart(surface: Surface, p) -> SurfaceChart:
    u, v = surface.point_to_chart(p)
    return SurfaceChart(surface, float(u), float(v))


def shape_at(surface: Surface, p) -> ShapeData:
    return surface.shape_at(p)


def hit_distances(origin, d, surfaces: Sequence[Surface], tmin=0.0):
    """Distances along ``d`` to every surface, shape ``(..., len(surfaces))``."""
    return np.stack([s.intersect(origin, d, tmin) for s in surfaces], axis=-1)


def first_hit_batch(origin, d, surfaces: Sequence[Surface], tmin=1e-12):
    """Nearest intersection for a batch of rays.

    Returns ``(index, distance)``; rays that escape get index -1 and distance
    ``inf``.
    """
    t = hit_distances(origin, d, surfaces, tmin)
    idx = np.argmin(t, axis=-1)
    dist = np.take_along_axis(t, idx[..., None], axis=-1)[..., 0]
    idx = np.where(np.isfinite(dist), idx, -1)
    return idx, dist


def first_hit(origin, d, surfaces: Sequence[Surface], tmin=1e-12):
    """Nearest surface hit by the ray ``origin + t d``, ``t > 0``.

    Returns ``(surface_index, point, distance)`` or ``None`` if the ray
    escapes.
    """
    origin = np.asarray(origin, dtype=float)
    d = _unit(d)
    idx, dist = first_hit_batch(origin, d, surfaces, tmin)
    if int(idx) < 0:
        return None
    return int(idx), origin + float(dist) * d, float(dist)


def segment_blocked(p, q, surfaces: Sequence[Surface], rel_tol=1e-9):
    """True where the open segment ``p -> q`` crosses any surface."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    delta = q - p
    length = np.linalg.norm(delta, axis=-1)
    d = delta / np.where(length > 0, length, 1.0)[..., None]
    margin = rel_tol * np.maximum(length, 1e-300)
    blocked = np.zeros(length.shape, dtype=bool)
    for s in surfaces:
        t = s.intersect(p, d, tmin=0.0)
        blocked |= (t > margin) & (t < length - margin)
    return blocked


def in_vacuum(p, surfaces: Sequence[Surface], tol=ON_SURFACE_TOL):
    """True where ``p`` lies strictly on the vacuum side of every surface."""
    ok = np.ones(np.shape(p)[:-1], dtype=bool)
    for s in surfaces:
        ok &= s.signed_distance(p) > tol
    return ok
