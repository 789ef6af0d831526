"""Casimir energy as a sum over closed specular paths (hbar = c = 1).

Every reflection class contributes

    E_n = -(1 / 2 pi**2) s_n M_n  int_{D_n} sqrt(Delta) / l**3  d^3x,

with ``s_n = (-1)**n`` for a Dirichlet field, ``s_n = 1`` for Neumann and
``M_n`` the multiplicity of the class.  A massive field replaces the kernel by
``(m**2 / 2) (sqrt(Delta) / l) K2(m l)``, which reduces to the massless one as
``m -> 0``.

The one-reflection classes diverge at their own mirror.  They are regulated
by point splitting: the base point and its image are separated by ``eps``
across the ray, which turns ``1/l**4`` into ``1/(l**2 + eps**2)**2``.  The
separation-dependent remainder of such a class is what the other bodies take
away from the self-energy of a lone mirror; it is obtained directly as an
integral over that region, which lies away from the mirror and needs no
regulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, interpolate

from .geometry import in_vacuum
from .numerics import (AxisymmetricRegion, IntegralEstimate, IntegratorConfig, bessel_k2,
                       integrate_axisymmetric, integrate_volume)
from .optpath import OpticalPath, ReflectionSequence, enumerate_sequences, solve_paths
from .scenes import Scene, SceneConfig, build_scene
from .wavefront import enlargement_batch

BOUNDARY_CONDITIONS = ("dirichlet", "neumann", "conductor")
PFA_DENSITY = math.pi ** 2 / 1440.0


class ExcludedPoint(ValueError):
    """The base point has no usable path (outside the domain or on a caustic)."""


@dataclass(frozen=True)
class PhysicalParams:
    """Field mass ``m`` (1/length), boundary condition and point-splitting ``eps``.

    ``bc="conductor"`` keeps only even classes with twice the Dirichlet weight,
    which reproduces the electromagnetic result between parallel plates.
    """

    m: float = 0.0
    bc: str = "dirichlet"
    eps: float = 0.01

    def __post_init__(self):
        if not self.m >= 0:
            raise ValueError("mass must be non-negative")
        if self.bc not in BOUNDARY_CONDITIONS:
            raise ValueError(f"boundary condition must be one of {BOUNDARY_CONDITIONS}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class Contribution:
    """Signed energy of one reflection class.

    ``value`` is the full (for one reflection: regulated) class energy;
    ``finite`` is its separation-dependent part, equal to ``value`` for
    classes with two or more reflections.
    """

    sequence: ReflectionSequence
    label: str
    value: float
    error: float
    excluded: int
    tag: str
    finite: float
    finite_error: float
    converged: bool = True
    samples: int = 0

    @property
    def order(self) -> int:
        return self.sequence.order

    @property
    def divergent(self) -> float:
        return self.value - self.finite


@dataclass(frozen=True)
class EnergyResult:
    contributions: Tuple[Contribution, ...]
    finite_part: float
    finite_error: float
    divergent_constant: float
    divergent_error: float
    cumulative: Tuple[Tuple[int, float], ...]
    fractions: Dict[int, float]
    cumulative_fractions: Dict[int, float]
    converged: bool
    max_order: int
    samples: int = 0

    def by_order(self, n: int) -> List[Contribution]:
        return [c for c in self.contributions if c.order == n]


# ---------------------------------------------------------------------------
# integrands
# ---------------------------------------------------------------------------

def class_weight(seq: ReflectionSequence, params: PhysicalParams) -> float:
    n = seq.order
    if params.bc == "dirichlet":
        sign = (-1.0) ** n
    elif params.bc == "neumann":
        sign = 1.0
    else:
        sign = 0.0 if n % 2 else 2.0
    return -sign * seq.multiplicity / (2.0 * math.pi ** 2)


def kernel(length, delta, m: float = 0.0):
    """``sqrt(Delta)/l**3`` (massless) or ``(m**2/2) sqrt(Delta) K2(m l)/l``."""
    length = np.asarray(length, float)
    delta = np.asarray(delta, float)
    if m == 0:
        return np.sqrt(delta) / length ** 3
    out = np.full(np.broadcast(length, delta).shape, np.nan)
    ok = np.isfinite(length) & np.isfinite(delta) & (length > 0)
    if np.any(ok):
        ll = np.broadcast_to(length, out.shape)[ok]
        dd = np.broadcast_to(delta, out.shape)[ok]
        out[ok] = 0.5 * m ** 2 * np.sqrt(dd) * bessel_k2(m * ll) / ll
    return out


def split_factor(length, eps: float):
    """Point-splitting factor ``l**4 / (l**2 + eps**2)**2`` of the one-reflection kernel."""
    length = np.asarray(length, float)
    return length ** 4 / (length ** 2 + eps ** 2) ** 2


def class_integrand(x, seq: ReflectionSequence, scene, params: PhysicalParams,
                    regulate: bool = False):
    """Unweighted integrand of one class at many base points; NaN where excluded."""
    batch = solve_paths(x, seq, scene)
    delta, _ = enlargement_batch(batch, scene)
    vals = kernel(batch.length, delta, params.m)
    if regulate:
        vals = vals * split_factor(batch.length, params.eps)
    return vals


def pointwise_integrand(x, path: OpticalPath, params: PhysicalParams, scene,
                        regulate: bool = False) -> float:
    """Integrand of a single solved path at its base point.

    Raises
    ------
    ExcludedPoint
        If the path is invalid or the pencil passes through a caustic.
    """
    if not np.allclose(np.asarray(x, float), path.x):
        raise ValueError("x is not the base point of the path")
    if not path.valid:
        raise ExcludedPoint(f"path status {path.status.name}")
    delta, caustic = enlargement_batch(path.as_batch(), scene)
    if caustic[0] or not np.isfinite(delta[0]):
        raise ExcludedPoint("caustic along the path")
    val = kernel(path.length, delta[0], params.m)
    if regulate:
        val = val * split_factor(path.length, params.eps)
    return float(val)


def _axi_points(r, z):
    r = np.asarray(r, float)
    return np.stack([r, np.zeros_like(r), np.asarray(z, float)], axis=-1)


def _slab_area(scene: Scene) -> float:
    lo, hi = scene.box.lo, scene.box.hi
    return (hi[0] - lo[0]) * (hi[1] - lo[1])


def _default_method(scene: Scene) -> str:
    return "mc" if scene.symmetry == "slab" else "cubature"


def _integrate(f3, scene: Scene, cfg: IntegratorConfig, method: str, bounded: bool = False):
    """Integral of ``f3`` (a function of ``(N, 3)`` points) over the scene's vacuum."""
    if method == "mc":
        return integrate_volume(f3, scene.box, cfg, grading=scene.grading)
    if scene.symmetry != "axisymmetric":
        raise ValueError("cubature integration needs an axisymmetric scene")
    if bounded:
        pieces = scene.vacuum_pieces(r_max=scene.box.hi[0], z_max=scene.box.hi[2])
    else:
        pieces = scene.vacuum_pieces()
    regions = [_region(scene, p) for p in pieces]
    return integrate_axisymmetric(lambda r, z: f3(_axi_points(r, z)), regions, rtol=cfg.rtol)


def _region(scene: Scene, piece) -> AxisymmetricRegion:
    def bound(spec):
        if spec[0] == "const":
            return float(spec[1])
        return lambda r, spec=spec: scene.zbound(spec, r)
    return AxisymmetricRegion(piece.r0, piece.r1, bound(piece.zlo), bound(piece.zhi))


# ---------------------------------------------------------------------------
# self-energy deficit of the one-reflection classes
# ---------------------------------------------------------------------------

def self_energy_deficit(scene: Scene, surface: int, params: PhysicalParams,
                        rtol: float = 1e-8) -> IntegralEstimate:
    """Integral of the lone-mirror integrand over points the other bodies remove.

    A single reflection off ``surface`` exists wherever the mirror alone sees
    the base point.  In the scene, part of that region is occupied or shadowed
    by the other body (or lies beyond it); integrating the lone-mirror
    integrand there gives the separation-dependent part of the class.
    """
    alone = [scene.surfaces[surface]]
    seq = ReflectionSequence((0,), 1)

    def f3(p):
        return class_integrand(p, seq, alone, params)

    if scene.symmetry == "slab":
        normal = np.asarray(scene.surfaces[surface].normal, float)
        area = _slab_area(scene)
        if normal[2] > 0:
            lo, hi, sign = scene.box.hi[2], np.inf, 1.0
        else:
            lo, hi, sign = -scene.box.lo[2], np.inf, -1.0

        def g(z):
            z = np.asarray(z, float).reshape(-1)
            return f3(np.stack([np.zeros_like(z), np.zeros_like(z), sign * z], axis=-1))

        res = integrate.cubature(lambda t: g(t[:, 0]), [lo], [hi], rtol=rtol)
        return IntegralEstimate(area * float(res.estimate), area * float(res.error), 0, 0,
                                res.status == "converged")

    cfg = scene.config
    if surface == 0:
        # plate: the sphere and the shadow above it
        region = AxisymmetricRegion(0.0, cfg.R, scene.sphere_low, np.inf)
        return integrate_axisymmetric(lambda r, z: f3(_axi_points(r, z)), region, rtol=rtol)
    # sphere: the half-space behind the plate
    region = AxisymmetricRegion(0.0, np.inf, 0.0, np.inf)
    return integrate_axisymmetric(lambda r, z: f3(_axi_points(r, -z)), region, rtol=rtol)


# ---------------------------------------------------------------------------
# class contributions and totals
# ---------------------------------------------------------------------------

def class_contribution(scene: Scene, seq: ReflectionSequence, params: PhysicalParams,
                       cfg: IntegratorConfig, method: Optional[str] = None,
                       divergent: bool = True) -> Contribution:
    """Signed energy of one class.

    One-reflection classes carry the regulated value (over the bounding
    region) and their separation-dependent part separately; pass
    ``divergent=False`` to skip the regulated integral.
    """
    method = method or _default_method(scene)
    w = class_weight(seq, params)
    label = seq.label(scene.names)
    if w == 0.0:
        tag = "divergent" if seq.order == 1 else "finite"
        return Contribution(seq, label, 0.0, 0.0, 0, tag, 0.0, 0.0)
    if seq.order == 1:
        deficit = self_energy_deficit(scene, seq.surfaces[0], params)
        finite = -w * deficit.value
        finite_err = abs(w) * deficit.error
        if divergent:
            est = _integrate(lambda p: class_integrand(p, seq, scene, params, regulate=True),
                             scene, cfg, method, bounded=True)
            value, err = w * est.value, abs(w) * est.error
        else:
            est = IntegralEstimate(float("nan"), float("nan"), 0, 0, True)
            value, err = float("nan"), float("nan")
        return Contribution(seq, label, value, err, est.excluded, "divergent", finite,
                            finite_err, est.converged and deficit.converged, est.sampled)
    est = _integrate(lambda p: class_integrand(p, seq, scene, params), scene, cfg, method)
    return Contribution(seq, label, w * est.value, abs(w) * est.error, est.excluded, "finite",
                        w * est.value, abs(w) * est.error, est.converged, est.sampled)


def total_energy(scene: Scene, params: PhysicalParams, max_reflections: int,
                 cfg: IntegratorConfig, method: Optional[str] = None,
                 divergent: bool = True) -> EnergyResult:
    """Sum of all classes up to ``max_reflections`` bounces."""
    if max_reflections < 2:
        raise ValueError("max_reflections must be >= 2")
    contribs = tuple(class_contribution(scene, seq, params, cfg, method, divergent)
                     for seq in enumerate_sequences(scene, max_reflections))
    return assemble(contribs, max_reflections)


def assemble(contribs: Sequence[Contribution], max_order: int) -> EnergyResult:
    finite = math.fsum(c.finite for c in contribs)
    finite_err = math.sqrt(math.fsum(c.finite_error ** 2 for c in contribs))
    ones = [c for c in contribs if c.order == 1]
    div = math.fsum(c.divergent for c in ones)
    div_err = math.sqrt(math.fsum(c.error ** 2 + c.finite_error ** 2 for c in ones))
    per_order = {n: math.fsum(c.finite for c in contribs if c.order == n)
                 for n in range(1, max_order + 1)}
    cumulative = []
    running = []
    for n in range(1, max_order + 1):
        running.append(per_order[n])
        cumulative.append((n, math.fsum(running)))
    fractions = {n: (v / finite if finite else float("nan")) for n, v in per_order.items()}
    cum_frac = {n: (v / finite if finite else float("nan")) for n, v in cumulative}
    return EnergyResult(tuple(contribs), finite, finite_err, div, div_err, tuple(cumulative),
                        fractions, cum_frac, all(c.converged for c in contribs), max_order,
                        sum(c.samples for c in contribs))


def finite_energy(config: SceneConfig, params: PhysicalParams, max_reflections: int,
                  cfg: IntegratorConfig, method: Optional[str] = None) -> EnergyResult:
    return total_energy(build_scene(config), params, max_reflections, cfg, method,
                        divergent=False)


def force(config: SceneConfig, params: PhysicalParams, max_reflections: int,
          cfg: IntegratorConfig, h: Optional[float] = None, method: Optional[str] = None):
    """``-dE/da`` of the finite part by a centred difference; returns ``(F, error)``."""
    h = 1e-3 * config.a if h is None else h
    up = finite_energy(replace(config, a=config.a + h), params, max_reflections, cfg, method)
    dn = finite_energy(replace(config, a=config.a - h), params, max_reflections, cfg, method)
    return (-(up.finite_part - dn.finite_part) / (2 * h),
            math.hypot(up.finite_error, dn.finite_error) / (2 * h))


# ---------------------------------------------------------------------------
# spectral form
# ---------------------------------------------------------------------------

def spectral_kernel(length: float, m: float = 0.0, eta: float = 0.0,
                    k_max: Optional[float] = None) -> float:
    """``int_0^K k omega(k) sin(k l) exp(-eta k) dk`` with ``omega = sqrt(k**2 + m**2)``."""
    upper = np.inf if k_max is None else k_max

    def amp(k):
        return k * math.sqrt(k * k + m * m) * math.exp(-eta * k)

    if math.isinf(upper):
        return integrate.quad(amp, 0.0, np.inf, weight="sin", wvar=length, limlst=200)[0]
    return integrate.quad(amp, 0.0, upper, weight="sin", wvar=length, limit=2000)[0]


def damped_limit(length: float, m: float = 0.0, k_max: Optional[float] = None,
                 eta0: float = 0.2, levels: int = 5):
    """``eta -> 0`` limit of :func:`spectral_kernel` by polynomial extrapolation.

    The damping ``exp(-eta k)`` makes the oscillatory k-integral converge;
    values at ``eta = eta0 l / 2**j`` are extrapolated to ``eta = 0`` with
    Neville's scheme.  Returns ``(value, spread)`` where ``spread`` is the
    change made by the last extrapolation level.
    """
    etas = [eta0 * length / 2.0 ** j for j in range(levels)]
    table = [spectral_kernel(length, m, e, k_max) for e in etas]
    prev = table[-1]
    for step in range(1, levels):
        table = [(etas[i + step] * table[i] - etas[i] * table[i + 1]) / (etas[i + step] - etas[i])
                 for i in range(levels - step)]
        if step == levels - 2:
            prev = table[-1]
    return table[0], abs(table[0] - prev)


class SpectralTable:
    """``l**3 e^{m l} F(l)`` tabulated on a log grid and interpolated."""

    def __init__(self, lmin: float, lmax: float, m: float = 0.0, k_max=None, points: int = 96):
        self.m = m
        self.grid = np.geomspace(lmin, lmax, points)
        vals = []
        spread = 0.0
        for ell in self.grid:
            v, s = damped_limit(float(ell), m, k_max)
            scale = ell ** 3 * math.exp(m * ell)
            vals.append(v * scale)
            spread = max(spread, s * scale)
        self.spread = spread
        self.values = np.array(vals)
        self._spline = interpolate.CubicSpline(np.log(self.grid), self.values)

    def __call__(self, length):
        length = np.asarray(length, float)
        inside = (length >= self.grid[0]) & (length <= self.grid[-1])
        out = np.full(length.shape, np.nan)
        ll = length[inside]
        out[inside] = self._spline(np.log(ll)) / (ll ** 3 * np.exp(self.m * ll))
        return out


def spectral_contribution(scene: Scene, seq: ReflectionSequence, params: PhysicalParams,
                          k_max: Optional[float] = None, cfg: Optional[IntegratorConfig] = None,
                          method: Optional[str] = None) -> Contribution:
    """Class energy with the k-integral done numerically instead of in closed form.

    ``E_n = (s_n M_n / 4 pi**2) int d^3x sqrt(Delta) int dk k omega sin(k l)``;
    only meaningful for classes with two or more reflections.
    """
    if seq.order < 2:
        raise ValueError("the spectral form is only used for finite classes")
    cfg = cfg or IntegratorConfig()
    method = method or _default_method(scene)
    a = scene.config.a
    reach = 8.0 * (a + (scene.config.R if scene.symmetry == "axisymmetric" else 0.0))
    table = SpectralTable(1.0 * a, reach * seq.order, params.m, k_max)
    w = class_weight(seq, params)  # equals -(s M)/(2 pi**2)

    def f3(p):
        batch = solve_paths(p, seq, scene)
        delta, _ = enlargement_batch(batch, scene)
        return np.sqrt(delta) * table(batch.length)

    est = _integrate(f3, scene, cfg, method)
    # (s M / 4 pi**2) = -w / 2
    value = -0.5 * w * est.value
    err = abs(0.5 * w) * est.error + abs(0.5 * w * est.value) * table.spread
    return Contribution(seq, seq.label(scene.names), value, err, est.excluded, "finite",
                        value, err, est.converged and table.spread < 1e-2, est.sampled)


# ---------------------------------------------------------------------------
# proximity-force comparators
# ---------------------------------------------------------------------------

def pfa_energy(scene: Scene, base_surface: int = 0, cfg: Optional[IntegratorConfig] = None) -> float:
    """``-(pi**2/1440) int_{S_base} dS / d**3`` with ``d`` measured along the base normal.

    Surface elements whose normal ray misses the other body contribute 0.
    """
    cfg_s = scene.config
    if scene.symmetry == "slab":
        return -PFA_DENSITY * _slab_area(scene) / cfg_s.a ** 3
    base = scene.surfaces[base_surface]
    other = scene.surfaces[1 - base_surface]
    R = cfg_s.R

    def normal_distance(p):
        n = base.normal_at(p)
        t = other.intersect(p, n)
        return np.where(np.isfinite(t) & (t > 0), t, np.inf)

    if base_surface == 0:
        # plate element at radius r; only r < R can see the sphere
        def integrand(r):
            d = normal_distance(np.array([[r, 0.0, 0.0]]))[0]
            return 2.0 * math.pi * r / d ** 3
        pts = [min(math.sqrt(cfg_s.a * R) * k, 0.99 * R) for k in (1.0, 4.0)]
        val = integrate.quad(integrand, 0.0, R, points=pts, limit=400, epsrel=1e-11)[0]
    else:
        # sphere element at polar angle theta from the bottom point
        center = np.asarray(base.center, float)

        def integrand(theta):
            p = center + R * np.array([[math.sin(theta), 0.0, -math.cos(theta)]])
            d = normal_distance(p)[0]
            return 2.0 * math.pi * R ** 2 * math.sin(theta) / d ** 3
        t0 = math.sqrt(cfg_s.a / R)
        pts = [min(t0 * k, 1.5) for k in (1.0, 4.0)]
        val = integrate.quad(integrand, 0.0, 0.5 * math.pi, points=pts, limit=400,
                             epsrel=1e-11)[0]
    return -PFA_DENSITY * val


def chord_length_meridian(r, z, scene: Scene, samples: int = 64, iters: int = 60):
    """Shortest straight segment through ``(r, 0, z)`` joining plate and sphere.

    The search runs over line directions in the meridian plane: a coarse scan
    followed by golden-section refinement.  Points through which no such
    segment passes get ``inf``.
    """
    r = np.atleast_1d(np.asarray(r, float))
    z = np.atleast_1d(np.asarray(z, float))
    cfg = scene.config
    cz = cfg.a + cfg.R
    R = cfg.R

    def length(phi):
        ux, uz = np.cos(phi), np.sin(phi)
        with np.errstate(divide="ignore", invalid="ignore"):
            tp = np.where(uz != 0, -z / uz, np.nan)
            b = r * ux + (z - cz) * uz
            c = r * r + (z - cz) ** 2 - R * R
            disc = b * b - c
            root = np.sqrt(np.where(disc > 0, disc, np.nan))
            t1, t2 = -b - root, -b + root
            # plate behind (tp < 0): need the whole sphere chord ahead
            ahead = np.where((tp < 0) & (t1 > 0), t1 - tp, np.inf)
            behind = np.where((tp > 0) & (t2 < 0), tp - t2, np.inf)
        out = np.fmin(ahead, behind)
        return np.where(np.isfinite(out), out, np.inf)

    phis = np.linspace(0.0, np.pi, samples, endpoint=False) + 0.5 * np.pi / samples
    L = np.stack([length(np.full_like(r, p)) for p in phis], axis=0)
    k = np.argmin(L, axis=0)
    best = L[k, np.arange(len(r))]
    step = np.pi / samples
    lo = phis[k] - step
    hi = phis[k] + step
    g = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - g * (hi - lo)
    x2 = lo + g * (hi - lo)
    f1, f2 = length(x1), length(x2)
    for _ in range(iters):
        left = f1 <= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        n1 = hi - g * (hi - lo)
        n2 = lo + g * (hi - lo)
        fe = length(np.where(left, n1, n2))
        f1, f2 = np.where(left, fe, f2), np.where(left, f1, fe)
        x1, x2 = n1, n2
    best = np.fmin(best, np.fmin(f1, f2))
    inside = in_vacuum(_axi_points(r, z), scene.surfaces)
    return np.where(inside, best, np.inf)


def pfa_star_energy(scene: Scene, cfg: Optional[IntegratorConfig] = None,
                    method: Optional[str] = None) -> float:
    """``-(pi**2/1440) int d^3x / l12(x)**4`` over points on a joining segment."""
    if scene.symmetry == "slab":
        cfg_s = scene.config
        if method == "mc":
            est = integrate_volume(lambda p: np.full(len(p), cfg_s.a ** -4.0), scene.box,
                                   cfg or IntegratorConfig())
            return -PFA_DENSITY * est.value
        return -PFA_DENSITY * _slab_area(scene) * cfg_s.a / cfg_s.a ** 4
    rtol = cfg.rtol if cfg is not None else 1e-6

    def f(r, z):
        ell = chord_length_meridian(r, z, scene)
        return np.where(np.isfinite(ell), ell ** -4.0, 0.0)

    regions = [_region(scene, p) for p in scene.vacuum_pieces()]
    est = integrate_axisymmetric(f, regions, rtol=rtol)
    return -PFA_DENSITY * est.value


# ---------------------------------------------------------------------------
# integrand map
# ---------------------------------------------------------------------------

def integrand_map(scene: Scene, params: PhysicalParams, max_reflections: int, points):
    """Weighted sum of the class integrands at ``points``, one-reflection classes left out.

    NaN marks points outside the vacuum or on a caustic of some class.
    """
    points = np.atleast_2d(np.asarray(points, float))
    total = np.zeros(len(points))
    blank = ~in_vacuum(points, scene.surfaces)
    for seq in enumerate_sequences(scene, max_reflections):
        if seq.order < 2:
            continue
        w = class_weight(seq, params)
        if w == 0.0:
            continue
        batch = solve_paths(points, seq, scene)
        delta, caustic = enlargement_batch(batch, scene)
        blank |= caustic
        vals = kernel(batch.length, delta, params.m)
        total += np.where(np.isfinite(vals), w * vals, 0.0)
    return np.where(blank, np.nan, total)
