"""Enlargement factor of a ray pencil along a closed path.

A pencil launched from a point is described by two 3x2 matrices: ``X``, the
transverse displacement of neighbouring rays per unit launch angle, and
``P``, the matching direction change.  Both stay perpendicular to the current
ray.  Free flight adds ``s * P`` to ``X``; a mirror leaves the footprint in
place and bends ``P`` through the change of the local normal.  At the end the
spreading of the pencil is ``dA/dOmega = det X`` and the enlargement factor is
its inverse.  Starting from ``X = 0`` is the exact point-source limit, so no
small source radius enters the numerics.

The curvature matrix of the wavefront is ``Q = P X^-1``; its eigenvalues are
the reciprocal principal radii.  :func:`propagate_free` and
:func:`reflect_wavefront` expose that form directly.

:func:`finite_difference_enlargement` is an independent check: it retraces a
small fan of rays through the same reflections and differentiates where they
land.
"""
from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np

from .geometry import ShapeData, orthonormal_basis, reflect
from .optpath import OpticalPath, PathBatch, _segments, _surfaces

FD_STEP = 1e-5
# below this incidence cosine the oracle switches to arbitrary precision
FD_GRAZING_COS = 0.02


class GrazingError(ValueError):
    pass


@dataclass(frozen=True)
class WavefrontState:
    """Curvature matrix ``Q`` in the transverse frame ``frame`` (3x2 columns)."""

    Q: np.ndarray
    direction: np.ndarray
    frame: np.ndarray
    s: float = 0.0
    caustic: bool = False

    @property
    def radii(self):
        """Principal radii of curvature (``inf`` for a flat direction)."""
        k = np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))
        with np.errstate(divide="ignore"):
            return 1.0 / k


@dataclass(frozen=True)
class EnlargementResult:
    delta: float
    caustic: bool
    method: str


def point_source(direction, distance: float) -> WavefrontState:
    """Spherical wave of radius ``distance`` travelling along ``direction``."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    e1, e2 = orthonormal_basis(d)
    return WavefrontState(np.eye(2) / distance, d, np.stack([e1, e2], axis=-1), 0.0)


def propagate_free(state: WavefrontState, distance: float) -> WavefrontState:
    """Free flight over ``distance``: ``Q -> Q (I + distance Q)^-1``.

    A principal radius that passes through zero on the way marks a caustic.
    """
    if not distance > 0:
        raise ValueError("distance must be positive")
    Q = np.asarray(state.Q, float)
    k = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    crosses = bool(np.any((k < 0) & (-1.0 / np.where(k < 0, k, -1.0) <= distance)))
    M = np.eye(2) + distance * Q
    if crosses or abs(np.linalg.det(M)) < 1e-300:
        return WavefrontState(Q, state.direction, state.frame, state.s + distance, True)
    Qn = Q @ np.linalg.inv(M)
    return WavefrontState(0.5 * (Qn + Qn.T), state.direction, state.frame,
                          state.s + distance, state.caustic)


def _reflect_pencil(X, P, d, n, K):
    """Reflect a pencil (batch of 3x2 ``X``, ``P``) at a mirror.

    ``d`` incoming direction, ``n`` mirror normal facing the incoming ray,
    ``K`` the 3x3 normal-derivative operator.  Returns ``(X', P', d')``.
    """
    nd = np.sum(n * d, axis=-1)
    nX = np.einsum("bk,bkj->bj", n, X)
    dy = X - d[..., None] * (nX / nd[:, None])[:, None, :]
    dn = np.einsum("bkl,blj->bkj", K, dy)
    nP = np.einsum("bk,bkj->bj", n, P)
    dn_d = np.einsum("bkj,bk->bj", dn, d)
    dP = (P - 2.0 * n[..., None] * nP[:, None, :]
          - 2.0 * (n[..., None] * dn_d[:, None, :] + nd[:, None, None] * dn))
    d_out = d - 2.0 * nd[:, None] * n
    Xo = dy - d_out[..., None] * np.einsum("bk,bkj->bj", d_out, dy)[:, None, :]
    return Xo, dP, d_out


def reflect_wavefront(state: WavefrontState, mirror: ShapeData) -> WavefrontState:
    """Specular reflection of a wavefront at a curved mirror.

    The mirror normal in ``mirror`` must face the incoming ray.  At normal
    incidence on a mirror convex toward the ray, both curvatures grow by
    ``2/R``; a flat mirror leaves ``Q`` unchanged.  The outgoing frame is the
    mirror image of the incoming one.
    """
    d = np.asarray(state.direction, float)
    n = np.asarray(mirror.normal, float)
    cos_in = -float(d @ n)
    if cos_in < np.sin(1e-6):
        raise GrazingError("grazing or back-side incidence")
    E = np.asarray(state.frame, float)
    K = mirror.basis @ mirror.shape @ mirror.basis.T
    Xo, Po, d_out = _reflect_pencil(E[None], (E @ state.Q)[None], d[None], n[None], K[None])
    E_out = reflect(E.T, n).T
    A = E_out.T @ Xo[0]
    B = E_out.T @ Po[0]
    Qn = B @ np.linalg.inv(A)
    return WavefrontState(0.5 * (Qn + Qn.T), d_out[0], E_out, state.s, state.caustic)


def _det_along(X, P, d):
    """Coefficients of ``det(X + s P)`` (oriented by ``d``) as a quadratic in s."""
    x0, x1 = X[..., 0], X[..., 1]
    p0, p1 = P[..., 0], P[..., 1]
    a0 = np.sum(np.cross(x0, x1) * d, axis=-1)
    a1 = np.sum((np.cross(x0, p1) + np.cross(p0, x1)) * d, axis=-1)
    a2 = np.sum(np.cross(p0, p1) * d, axis=-1)
    return a0, a1, a2


def _has_zero(a0, a1, a2, L):
    """True where the quadratic changes sign or touches zero on ``(0, L]``."""
    fL = a0 + a1 * L + a2 * L * L
    out = np.sign(fL) != np.sign(a0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_star = -a1 / (2.0 * a2)
    inside = (a2 != 0) & (s_star > 0) & (s_star < L)
    f_star = a0 + a1 * s_star + a2 * s_star * s_star
    out |= inside & (np.sign(f_star) != np.sign(a0))
    return out | (fL == 0)


def pencil_determinant(x, y, seq, surfaces):
    """``det X`` at the return to ``x`` and a caustic flag, for a batch of paths."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    B, n, _ = y.shape
    length, u = _segments(x, y)
    e1, e2 = orthonormal_basis(u[:, 0])
    X = np.zeros((B, 3, 2))
    P = np.stack([e1, e2], axis=-1)
    caustic = np.zeros(B, dtype=bool)
    for k in range(n + 1):
        d = u[:, k]
        L = length[:, k]
        if k > 0:
            a0, a1, a2 = _det_along(X, P, d)
            caustic |= _has_zero(a0, a1, a2, L)
        X = X + L[:, None, None] * P
        if k < n:
            surf = surfaces[seq[k]]
            nrm = surf.normal_at(y[:, k])
            K = surf.curvature_operator(y[:, k])
            X, P, _ = _reflect_pencil(X, P, d, nrm, K)
            # keep the pencil exactly transverse to the outgoing ray
            d_out = u[:, k + 1]
            X = X - d_out[..., None] * np.einsum("bk,bkj->bj", d_out, X)[:, None, :]
            P = P - d_out[..., None] * np.einsum("bk,bkj->bj", d_out, P)[:, None, :]
    a0, _, _ = _det_along(X, P, u[:, n])
    return a0, caustic


def enlargement_batch(batch: PathBatch, scene):
    """Enlargement factor for every valid path of a batch.

    Returns ``(delta, caustic)``; ``delta`` is NaN for invalid paths and for
    caustics.
    """
    surfaces = _surfaces(scene)
    delta = np.full(len(batch), np.nan)
    caustic = np.zeros(len(batch), dtype=bool)
    ok = batch.valid
    if ok.any():
        det, c = pencil_determinant(batch.x[ok], batch.points[ok], batch.sequence.surfaces, surfaces)
        c |= ~(np.abs(det) > 0)
        with np.errstate(divide="ignore"):
            delta[ok] = np.where(c, np.nan, 1.0 / np.abs(det))
        caustic[ok] = c
    return delta, caustic


# ---------------------------------------------------------------------------
# finite-difference ray-bundle oracle
# ---------------------------------------------------------------------------

_XP = np.longdouble


def _xunit(v):
    return v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True))


def _xbasis(d):
    """Orthonormal transverse pair for directions ``d`` in extended precision."""
    helper = np.zeros_like(d)
    idx = np.argmin(np.abs(d), axis=-1)
    np.put_along_axis(helper, idx[..., None], _XP(1), axis=-1)
    e1 = _xunit(np.cross(helper, d))
    return e1, np.cross(d, e1)


def _xhit(surf, p, d):
    """Ray parameter and unit normal at the hit, in extended precision.

    Only planes and spheres occur.  The oracle carries its own intersection
    code so it shares nothing with the path solver beyond the surface data.
    """
    if hasattr(surf, "radius"):
        c = np.asarray(surf.center, float).astype(_XP)
        r = _XP(surf.radius)
        w = p - c
        b = np.sum(w * d, axis=-1)
        disc = b * b - (np.sum(w * w, axis=-1) - r * r)
        root = np.sqrt(np.where(disc >= 0, disc, np.nan))
        t = np.where(-b - root > 0, -b - root, -b + root)
        q = p + t[..., None] * d
        return t, q, (q - c) / r
    n = np.asarray(surf.normal, float).astype(_XP)
    n = n / np.sqrt(np.sum(n * n))
    p0 = np.asarray(surf.point, float).astype(_XP)
    t = np.sum((p0 - p) * n, axis=-1) / np.sum(d * n, axis=-1)
    q = p + t[..., None] * d
    return t, q, np.broadcast_to(n, q.shape)


def _trace_fan(x, d, seq, surfaces):
    """Trace rays from ``x`` along ``d`` through the reflection sequence."""
    p = np.array(x, _XP)
    d = np.array(d, _XP)
    for s in seq:
        _, p, n = _xhit(surfaces[s], p, d)
        d = d - 2 * np.sum(d * n, axis=-1, keepdims=True) * n
    return p, d


def _landing(x, y, seq, surfaces, alpha, beta):
    """Transverse landing coordinates near ``x`` for launch offsets ``(alpha, beta)``."""
    x = np.asarray(x, float).astype(_XP)
    pts = np.concatenate([x[:, None], np.asarray(y, float).astype(_XP), x[:, None]], axis=1)
    d0 = _xunit(pts[:, 1] - pts[:, 0])
    d_ref = _xunit(pts[:, -1] - pts[:, -2])
    e1, e2 = _xbasis(d0)
    f1, f2 = _xbasis(d_ref)
    d = d0 + alpha.astype(_XP)[..., None] * e1 + beta.astype(_XP)[..., None] * e2
    d = _xunit(d)
    p, dn = _trace_fan(x, d, seq, surfaces)
    t = np.sum((x - p) * d_ref, axis=-1) / np.sum(dn * d_ref, axis=-1)
    q = p + t[..., None] * dn - x
    return np.stack([np.sum(q * f1, axis=-1), np.sum(q * f2, axis=-1)], axis=-1)


def fd_step(x, y, seq, surfaces, h=FD_STEP):
    """Largest launch-angle step tried by the finite-difference oracle.

    The nominal step grows for short paths, where round-off in the landing
    point is set by the absolute coordinates, and shrinks near grazing
    incidence, where the landing map bends on an angular scale of the squared
    cosine of incidence.
    """
    length, u = _segments(x, y)
    total = length.sum(axis=1)
    reach = np.abs(x).max(axis=1) + total
    step = h * np.clip(reach / total, 1.0, 100.0)
    cmin = _min_cosine(x, y, seq, surfaces)
    return np.minimum(step, np.maximum(1e-2 * cmin ** 2, 1e-12))


def fd_jacobian(x, y, seq, surfaces, h=None, halvings=12):
    """Landing Jacobian ``d(q1, q2)/d(alpha, beta)``.

    Rays are traced in extended precision.  ``h`` may be a scalar or one
    step per path.  Central differences on a halving
    sequence of steps are Richardson extrapolated; per path the extrapolant
    whose neighbours agree best is kept, which balances truncation against
    round-off without tuning.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if h is None:
        h = fd_step(x, y, seq, surfaces)
    h = np.broadcast_to(np.asarray(h, float), (x.shape[0],)).astype(_XP)
    zero = np.zeros(x.shape[0], _XP)

    def central(step):
        cols = []
        for da, db in ((step, zero), (zero, step)):
            plus = _landing(x, y, seq, surfaces, da, db)
            minus = _landing(x, y, seq, surfaces, -da, -db)
            cols.append((plus - minus) / (2 * step[:, None]))
        return np.stack(cols, axis=-1)

    if halvings == 0:
        return ((4 * central(h / 2) - central(h)) / 3).astype(float)
    D = [central(h * _XP(0.5) ** k) for k in range(halvings + 3)]
    R = [(4 * D[k + 1] - D[k]) / 3 for k in range(halvings + 2)]
    best = R[0]
    best_err = np.full(x.shape[0], np.inf, dtype=_XP)
    for k in range(1, halvings + 1):
        scale = np.abs(R[k]).max(axis=(1, 2))
        err = np.maximum(np.abs(R[k] - R[k - 1]).max(axis=(1, 2)),
                         np.abs(R[k] - R[k + 1]).max(axis=(1, 2))) / scale
        better = err < best_err
        best = np.where(better[:, None, None], R[k], best)
        best_err = np.where(better, err, best_err)
    return best.astype(float)


def _mp_vec(v):
    return [mpmath.mpf(float(c)) for c in v]


def _mp_landing(x, y, seq, surfaces, alpha, beta):
    """Scalar version of :func:`_landing` in mpmath arithmetic."""
    dot = lambda a, b: a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    sub = lambda a, b: [a[i] - b[i] for i in range(3)]
    add = lambda a, b: [a[i] + b[i] for i in range(3)]
    mul = lambda t, a: [t * a[i] for i in range(3)]
    cross = lambda a, b: [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                          a[0] * b[1] - a[1] * b[0]]
    unit = lambda a: mul(1 / mpmath.sqrt(dot(a, a)), a)

    def basis(d):
        k = int(np.argmin([abs(float(c)) for c in d]))
        h = [mpmath.mpf(0)] * 3
        h[k] = mpmath.mpf(1)
        e1 = unit(cross(h, d))
        return e1, cross(d, e1)

    xm = _mp_vec(x)
    ys = [_mp_vec(v) for v in y]
    d0 = unit(sub(ys[0], xm))
    d_ref = unit(sub(xm, ys[-1]))
    e1, e2 = basis(d0)
    f1, f2 = basis(d_ref)
    d = unit(add(d0, add(mul(alpha, e1), mul(beta, e2))))
    p = xm
    for s in seq:
        surf = surfaces[s]
        if hasattr(surf, "radius"):
            c = _mp_vec(surf.center)
            r = mpmath.mpf(float(surf.radius))
            w = sub(p, c)
            b = dot(w, d)
            root = mpmath.sqrt(b * b - (dot(w, w) - r * r))
            t = -b - root if -b - root > 0 else -b + root
            p = add(p, mul(t, d))
            n = mul(1 / r, sub(p, c))
        else:
            n = unit(_mp_vec(surf.normal))
            t = dot(sub(_mp_vec(surf.point), p), n) / dot(d, n)
            p = add(p, mul(t, d))
        d = sub(d, mul(2 * dot(d, n), n))
    t = dot(sub(xm, p), d_ref) / dot(d, d_ref)
    q = sub(add(p, mul(t, d)), xm)
    return dot(q, f1), dot(q, f2)


def _mp_jacobian(x, y, seq, surfaces, cmin, dps=60):
    """Landing Jacobian of one nearly grazing path in high precision.

    The landing map is singular where perturbed rays start missing a mirror,
    an angular distance of order ``cmin**2`` away, so the step sits far below
    that scale and the working precision absorbs the cancellation.
    """
    with mpmath.workdps(dps):
        h = mpmath.mpf(1e-10) * mpmath.mpf(float(cmin)) ** 2
        zero = mpmath.mpf(0)
        J = np.empty((2, 2))
        for j, (da, db) in enumerate(((h, zero), (zero, h))):
            plus = _mp_landing(x, y, seq, surfaces, da, db)
            minus = _mp_landing(x, y, seq, surfaces, -da, -db)
            for i in range(2):
                J[i, j] = float((plus[i] - minus[i]) / (2 * h))
    return J


def _min_cosine(x, y, seq, surfaces):
    length, u = _segments(x, y)
    cmin = np.ones(len(x))
    for i, s in enumerate(seq):
        nrm = surfaces[s].normal_at(y[:, i])
        cmin = np.minimum(cmin, np.abs(np.sum(u[:, i] * nrm, axis=-1)))
    return cmin


def finite_difference_enlargement(batch: PathBatch, scene, h=None):
    """Enlargement factor from a differentiated ray fan, for every valid path.

    Paths with an incidence cosine below ``FD_GRAZING_COS`` are retraced in
    arbitrary precision; the rest use vectorised extended precision.
    """
    surfaces = _surfaces(scene)
    seq = batch.sequence.surfaces
    delta = np.full(len(batch), np.nan)
    idx = np.flatnonzero(batch.valid)
    if idx.size == 0:
        return delta
    cmin = _min_cosine(batch.x[idx], batch.points[idx], seq, surfaces)
    fast = cmin >= FD_GRAZING_COS
    if fast.any():
        i = idx[fast]
        J = fd_jacobian(batch.x[i], batch.points[i], seq, surfaces, h)
        delta[i] = 1.0 / np.abs(np.linalg.det(J))
    for i, c in zip(idx[~fast], cmin[~fast]):
        J = _mp_jacobian(batch.x[i], batch.points[i], seq, surfaces, c)
        delta[i] = 1.0 / abs(np.linalg.det(J))
    return delta


def enlargement_factor(path: OpticalPath, scene, method: str = "propagation") -> EnlargementResult:
    """Enlargement factor of one valid closed path."""
    batch = path.as_batch()
    if method == "propagation":
        delta, caustic = enlargement_batch(batch, scene)
        return EnlargementResult(float(delta[0]), bool(caustic[0]), method)
    if method == "finite-difference":
        delta = finite_difference_enlargement(batch, scene)
        return EnlargementResult(float(delta[0]), not np.isfinite(delta[0]), method)
    raise ValueError(f"unknown method {method!r}")
