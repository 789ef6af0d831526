"""Domain integration and special functions.

Two integrators are provided.  :func:`integrate_volume` is a stratified Monte
Carlo rule over a box: the box is cut into a tensor grid of cells (optionally
refined geometrically toward given planes), a pilot pass estimates the spread
in every cell, and the remaining budget is shared out in proportion to cell
volume times spread.  Every cell draws from its own random substream, so the
estimate does not depend on how the work is split between threads.

:func:`integrate_axisymmetric` reduces a rotationally symmetric integrand to
``2 pi r dr dz`` and hands the pieces to adaptive cubature.
"""
from __future__ import annotations

import contextlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

WORKERS_ENV = "OPTCASIMIR_WORKERS"
CHUNK = 20000
# pilot points per cell; grading is coarsened until the pilot fits in half the budget
MIN_PILOT = 8
# share of every allocation spread by volume, so no cell is starved by a bad pilot
DEFENSIVE = 0.1

_fault: Optional[str] = None


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    """Settings shared by both integrators.

    Attributes
    ----------
    samples : int
        Total Monte Carlo budget per integral (at least 1000).
    seed : int
        Root seed; every cell and pass derives its own substream from it.
    strata : tuple of int
        Base number of cells along x, y and z.
    rtol : float
        Relative standard error at which refinement stops.
    max_passes : int
        Number of refinement passes after the first allocation; each pass
        doubles the budget.
    pilot_fraction : float
        Share of the budget spent on the pilot pass.
    grading_depth : int
        Number of geometric refinement levels toward each grading plane.
    """

    samples: int = 200_000
    seed: int = 12345
    strata: Tuple[int, int, int] = (4, 4, 4)
    rtol: float = 1e-3
    max_passes: int = 0
    pilot_fraction: float = 0.1
    grading_depth: int = 14

    def __post_init__(self):
        if self.samples < 1000:
            raise ValueError("sample count must be at least 1000")
        if not self.rtol > 0:
            raise ValueError("tolerance must be positive")
        if len(self.strata) != 3 or min(self.strata) < 1:
            raise ValueError("strata must be three positive integers")
        if not 0 < self.pilot_fraction < 1:
            raise ValueError("pilot_fraction must lie in (0, 1)")
        if self.max_passes < 0 or self.grading_depth < 0:
            raise ValueError("max_passes and grading_depth must be non-negative")


@dataclass(frozen=True)
class IntegralEstimate:
    value: float
    error: float
    excluded: int
    evaluated: int
    converged: bool = True

    @property
    def sampled(self) -> int:
        return self.excluded + self.evaluated

    def __add__(self, other: "IntegralEstimate") -> "IntegralEstimate":
        return IntegralEstimate(self.value + other.value, math.hypot(self.error, other.error),
                                self.excluded + other.excluded, self.evaluated + other.evaluated,
                                self.converged and other.converged)

    def scaled(self, c: float) -> "IntegralEstimate":
        return IntegralEstimate(c * self.value, abs(c) * self.error, self.excluded,
                                self.evaluated, self.converged)


def worker_count() -> int:
    """Thread count for integrand evaluation (``OPTCASIMIR_WORKERS`` overrides)."""
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return 1


# ---------------------------------------------------------------------------
# stratified Monte Carlo
# ---------------------------------------------------------------------------

def axis_edges(lo: float, hi: float, n: int, foci: Sequence[float] = (), depth: int = 14):
    """Cell edges along one axis: ``n`` uniform cells plus geometric refinement.

    Around every focus inside ``[lo, hi]`` edges are added at distances
    ``(hi - lo) / 2**k`` for ``k = 1..depth``.
    """
    edges = set(np.linspace(lo, hi, n + 1).tolist())
    width = hi - lo
    for f in foci:
        for k in range(1, depth + 1):
            for e in (f - width * 0.5 ** k, f + width * 0.5 ** k):
                if lo < e < hi:
                    edges.add(float(e))
    return np.array(sorted(edges))


def _cells(lo, hi, cfg: IntegratorConfig, grading):
    depth = cfg.grading_depth
    while True:
        axes = [axis_edges(lo[i], hi[i], cfg.strata[i], grading[i] if grading else (), depth)
                for i in range(3)]
        ncell = int(np.prod([len(e) - 1 for e in axes]))
        if depth == 0 or ncell * MIN_PILOT <= cfg.samples // 2:
            break
        depth -= 1
    grids = np.meshgrid(*[np.arange(len(e) - 1) for e in axes], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=-1)
    clo = np.stack([axes[i][idx[:, i]] for i in range(3)], axis=-1)
    chi = np.stack([axes[i][idx[:, i] + 1] for i in range(3)], axis=-1)
    return clo, chi


def _draw(seed, pass_no, cells, counts, clo, chi):
    """Uniform points in each cell from per-cell substreams."""
    out = []
    for c, m in zip(cells, counts):
        if m == 0:
            continue
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(pass_no, int(c)))
        u = np.random.default_rng(ss).random((int(m), 3))
        out.append(clo[c] + u * (chi[c] - clo[c]))
    return np.concatenate(out) if out else np.empty((0, 3))


def _evaluate(f, pts):
    """Integrand values in fixed-size chunks; chunks may run on worker threads."""
    chunks = [pts[i:i + CHUNK] for i in range(0, len(pts), CHUNK)]
    workers = worker_count()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            vals = list(pool.map(f, chunks))
    else:
        vals = [f(c) for c in chunks]
    return np.concatenate([np.asarray(v, float).reshape(-1) for v in vals]) if vals else np.empty(0)


class _CellStats:
    def __init__(self, ncell):
        self.n = np.zeros(ncell, dtype=np.int64)
        self.s1 = [[] for _ in range(ncell)]
        self.excluded = 0
        self.evaluated = 0

    def add(self, cells, counts, vals):
        bad = ~np.isfinite(vals)
        self.excluded += int(bad.sum())
        self.evaluated += int((~bad).sum())
        vals = np.where(bad, 0.0, vals)
        pos = 0
        for c, m in zip(cells, counts):
            if m == 0:
                continue
            self.s1[c].append(vals[pos:pos + m])
            self.n[c] += m
            pos += m

    def moments(self):
        mean = np.zeros(len(self.n))
        var = np.zeros(len(self.n))
        for c, chunks in enumerate(self.s1):
            if not chunks:
                continue
            v = np.concatenate(chunks)
            mean[c] = math.fsum(v) / len(v)
            var[c] = float(np.var(v, ddof=1)) if len(v) > 1 else 0.0
        return mean, var


def _allocate(vol, var, budget):
    """Neyman allocation mixed with a volume share; at least two points per cell."""
    share = vol / vol.sum()
    weight = vol * np.sqrt(var)
    if weight.sum() > 0:
        share = DEFENSIVE * share + (1.0 - DEFENSIVE) * weight / weight.sum()
    return np.maximum(np.floor(budget * share), 2).astype(np.int64)


def _combine(passes):
    """Inverse-variance combination of independent pass estimates."""
    exact = [v for v, var in passes if var == 0.0]
    if exact:
        return exact[-1], 0.0
    w = np.array([1.0 / var for _, var in passes])
    vals = np.array([v for v, _ in passes])
    return math.fsum(w * vals) / math.fsum(w), math.sqrt(1.0 / math.fsum(w))


def integrate_volume(f: Callable[[np.ndarray], np.ndarray], box, cfg: IntegratorConfig,
                     grading=None) -> IntegralEstimate:
    """Stratified Monte Carlo estimate of the integral of ``f`` over ``box``.

    Parameters
    ----------
    f : callable
        Maps an ``(N, 3)`` array of points to ``N`` values.  Points outside
        the integration domain return NaN; they count as zero and are tallied
        as excluded.
    box : object with ``lo`` and ``hi``
        Bounding box enclosing the domain.
    cfg : IntegratorConfig
    grading : sequence of three tuples, optional
        Coordinates per axis toward which cells are refined geometrically
        (useful where the integrand peaks, e.g. next to a wall).
    """
    lo = np.asarray(box.lo, float)
    hi = np.asarray(box.hi, float)
    clo, chi = _cells(lo, hi, cfg, grading)
    vol = np.prod(chi - clo, axis=1)
    ncell = len(vol)
    stats = _CellStats(ncell)
    all_cells = np.arange(ncell)

    # pilot pass: equal share per cell; it only sets the allocation, so the
    # estimate below never reuses the points that chose the sample counts
    pilot = max(MIN_PILOT, int(cfg.samples * cfg.pilot_fraction) // ncell)
    counts = np.full(ncell, pilot, dtype=np.int64)
    pts = _draw(cfg.seed, 0, all_cells, counts, clo, chi)
    stats.add(all_cells, counts, _evaluate(f, pts))

    budget = max(cfg.samples - int(counts.sum()), 2 * ncell)
    passes = []
    value = error = 0.0
    for pass_no in range(1, cfg.max_passes + 2):
        _, var = stats.moments()
        counts = _allocate(vol, var, budget)
        vals = _evaluate(f, _draw(cfg.seed, pass_no, all_cells, counts, clo, chi))
        stats.add(all_cells, counts, vals)
        this = _CellStats(ncell)
        this.add(all_cells, counts, vals)
        mean, pvar = this.moments()
        passes.append((math.fsum(vol * mean), math.fsum(vol ** 2 * pvar / counts)))
        value, error = _combine(passes)
        if error <= cfg.rtol * abs(value):
            break
        budget = int(stats.n.sum())
    converged = error <= cfg.rtol * abs(value) or error == 0.0
    return IntegralEstimate(value, error, stats.excluded, stats.evaluated, converged)


# ---------------------------------------------------------------------------
# axisymmetric cubature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AxisymmetricRegion:
    """Region ``r0 <= r <= r1``, ``zlo(r) <= z <= zhi(r)``.

    ``zlo`` and ``zhi`` are callables of ``r`` (vectorised) or constants;
    ``zhi`` may be ``inf`` and ``r1`` may be ``inf``.
    """

    r0: float
    r1: float
    zlo: object = 0.0
    zhi: object = 1.0

    def bound(self, which, r):
        b = self.zlo if which == "lo" else self.zhi
        if callable(b):
            return np.asarray(b(r), float)
        return np.full(np.shape(r), float(b))


def integrate_axisymmetric(f: Callable[[np.ndarray, np.ndarray], np.ndarray], regions,
                           cfg: Optional[IntegratorConfig] = None, rtol: Optional[float] = None,
                           atol: float = 0.0, max_subdivisions: int = 4000) -> IntegralEstimate:
    """``2 pi * integral of r f(r, z)`` over a union of axisymmetric regions.

    Each region is mapped to a rectangle (``z = zlo + t (zhi - zlo)``, or
    ``z = zlo + u`` with ``u >= 0`` when the upper bound is infinite) and
    integrated by adaptive Gauss-Kronrod cubature.  NaN values of ``f`` count
    as zero and are tallied as excluded.
    """
    if rtol is None:
        rtol = cfg.rtol if cfg is not None else 1e-6
    if isinstance(regions, AxisymmetricRegion):
        regions = [regions]
    tally = {"excluded": 0, "evaluated": 0}

    def wrapped(r, z):
        v = np.asarray(f(r, z), float)
        bad = ~np.isfinite(v)
        tally["excluded"] += int(bad.sum())
        tally["evaluated"] += int((~bad).sum())
        return np.where(bad, 0.0, v)

    total = []
    errors = []
    converged = True
    for reg in regions:
        open_top = not callable(reg.zhi) and math.isinf(float(reg.zhi))

        def g(p, reg=reg, open_top=open_top):
            r, t = p[:, 0], p[:, 1]
            zlo = reg.bound("lo", r)
            if open_top:
                z, jac = zlo + t, 1.0
            else:
                h = reg.bound("hi", r) - zlo
                z, jac = zlo + t * h, h
            return 2.0 * np.pi * r * jac * wrapped(r, z)

        upper_t = np.inf if open_top else 1.0
        res = integrate.cubature(g, [reg.r0, 0.0], [reg.r1, upper_t], rtol=rtol, atol=atol,
                                 max_subdivisions=max_subdivisions)
        total.append(float(res.estimate))
        errors.append(float(res.error))
        converged &= res.status == "converged"
    return IntegralEstimate(math.fsum(total), math.sqrt(math.fsum(e * e for e in errors)),
                            tally["excluded"], tally["evaluated"], bool(converged))


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

@contextlib.contextmanager
def injected_fault(name: Optional[str]):
    """Temporarily corrupt a special function (used to prove checks can fail)."""
    global _fault
    previous = _fault
    _fault = name
    try:
        yield
    finally:
        _fault = previous


def bessel_k2(z):
    """Modified Bessel function of the second kind of order 2.

    Raises
    ------
    DomainError
        If any argument is not strictly positive.
    """
    z = np.asarray(z, float)
    if np.any(~(z > 0)):
        raise DomainError("bessel_k2 needs z > 0")
    out = special.kv(2, z)
    if _fault == "k2":
        out = out * (1.0 + 1e-6)
    return out if out.ndim else float(out)


def bessel_k0(z):
    return special.k0(np.asarray(z, float))


def bessel_k1(z):
    return special.k1(np.asarray(z, float))
