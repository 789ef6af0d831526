"""Self-checks against closed forms and independent oracles.

Each check returns a :class:`CheckResult`; :func:`run_validation` prints one
line per check and reports whether all passed.  The same functions back the
acceptance tests, which call them with larger budgets.
"""
from __future__ import annotations

import functools
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy import integrate

from . import analytic, numerics
from .energy import (PhysicalParams, class_contribution, pfa_energy, spectral_contribution,
                     total_energy)
from .geometry import in_vacuum
from .numerics import IntegratorConfig, bessel_k2
from .optpath import ReflectionSequence, enumerate_sequences, solve_paths
from .scenes import SceneConfig, build_scene
from .wavefront import _min_cosine, enlargement_batch, finite_difference_enlargement

MC_RTOL = 2e-3
GRAZING_COS = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _mc(samples: int, seed: int = 2024) -> IntegratorConfig:
    return IntegratorConfig(samples=samples, seed=seed, strata=(2, 2, 8), rtol=MC_RTOL)


def plates_scene(a: float = 1.0, L: float = 1.0):
    return build_scene(SceneConfig("parallel_plates", a=a, L=L))


@functools.lru_cache(maxsize=8)
def plates_pipeline(samples: int, max_order: int = 10, seed: int = 2024, bc: str = "dirichlet",
                    eps: float = 0.01, a: float = 1.0):
    return total_energy(plates_scene(a), PhysicalParams(bc=bc, eps=eps), max_order,
                        _mc(samples, seed), method="mc")


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------

def check_k2_recurrence() -> CheckResult:
    z = np.geomspace(1e-3, 50.0, 400)
    k2 = bessel_k2(z)
    resid = np.abs(k2 - numerics.bessel_k0(z) - 2.0 / z * numerics.bessel_k1(z)) / k2
    worst = float(resid.max())
    return CheckResult("K2 recurrence", worst <= 1e-10, f"max relative residual {worst:.2e}")


def check_plates_finite(samples: int, min_samples: int = 0) -> CheckResult:
    res = plates_pipeline(samples)
    exact = analytic.plates_even_closed_form(analytic.PlateSpec(1.0))
    rel = abs(res.finite_part / exact - 1.0)
    ok = rel <= 5e-3 and res.converged and res.samples >= min_samples
    return CheckResult("1 parallel-plate finite part", ok,
                       f"{res.finite_part:.6e} vs {exact:.6e} (rel {rel:.1e}, "
                       f"{res.samples} samples, converged={res.converged})")


def check_fractions(samples: int) -> CheckResult:
    res = plates_pipeline(samples)
    f2 = res.fractions[2]
    f24 = res.fractions[2] + res.fractions[4]
    ok = abs(f2 - 0.9239) <= 2e-3 and abs(f24 - 0.9817) <= 2e-3 and res.converged
    return CheckResult("2 convergence fractions", ok, f"n=2 {f2:.5f}, n=2+4 {f24:.5f}")


def odd_sums(samples: int, a: float, eps_values: Sequence[float], max_order: int = 9):
    """Regulated odd-class sums for several cutoffs, with their errors and divergent parts."""
    scene = plates_scene(a)
    cfg = _mc(samples)
    higher = [class_contribution(scene, s, PhysicalParams(), cfg, "mc")
              for s in enumerate_sequences(scene, max_order) if s.order % 2 and s.order > 1]
    rest = math.fsum(c.value for c in higher)
    rest_err = math.sqrt(math.fsum(c.error ** 2 for c in higher))
    out = []
    for eps in eps_values:
        ones = [class_contribution(scene, s, PhysicalParams(eps=eps), cfg, "mc")
                for s in enumerate_sequences(scene, 1)]
        value = rest + math.fsum(c.value for c in ones)
        err = math.hypot(rest_err, math.sqrt(math.fsum(c.error ** 2 for c in ones)))
        div = math.fsum(c.divergent for c in ones)
        div_err = math.sqrt(math.fsum(c.error ** 2 for c in ones))
        conv = all(c.converged for c in ones + higher)
        out.append((eps, value, err, div, div_err, conv))
    return out


def check_odd_divergence(samples: int, eps_values=(0.02, 0.01, 0.005),
                         a_values=(0.5, 1.0, 2.0)) -> CheckResult:
    rows = odd_sums(samples, 1.0, eps_values)
    eps = np.array([r[0] for r in rows])
    val = np.array([r[1] for r in rows])
    err = np.array([r[2] for r in rows])
    # weighted least squares for value = c / eps**3 + d
    A = np.stack([eps ** -3.0, np.ones_like(eps)], axis=-1) / err[:, None]
    c, d = np.linalg.lstsq(A, val / err, rcond=None)[0]
    target = 1.0 / (8.0 * math.pi)
    rel = abs(c / target - 1.0)
    divs = []
    for a in a_values:
        (_, _, _, div, div_err, conv), = odd_sums(samples, a, [0.01])
        divs.append((a, div, div_err, conv))
    ref = divs[len(divs) // 2]
    spread = max(abs(dv - ref[1]) / math.hypot(de, ref[2]) for _, dv, de, _ in divs if de > 0)
    conv = all(r[5] for r in rows) and all(d[3] for d in divs)
    ok = rel <= 1e-2 and spread <= 3.0 and conv
    return CheckResult("3 odd-class divergence", ok,
                       f"c = {c:.6e} vs S/(8 pi) = {target:.6e} (rel {rel:.1e}); "
                       f"divergent part across a {[f'{d[1]:.5e}' for d in divs]} "
                       f"spread {spread:.2f} sigma; converged={conv}")


def random_sphere_plate_paths(n_paths: int, xi: float = 0.25, seed: int = 7, max_order: int = 4):
    """Valid sphere-plate paths at random base points, spread evenly over the classes.

    Base points are uniform in a box around the gap.  Paths with an incidence
    cosine below ``GRAZING_COS`` are set aside (returned as a count): there the
    enlargement factor is ill-conditioned in double precision.
    """
    scene = build_scene(SceneConfig("sphere_plate", a=xi, R=1.0))
    seqs = enumerate_sequences(scene, max_order)
    rng = np.random.default_rng(seed)
    per = int(math.ceil(n_paths / len(seqs)))
    batches = []
    grazing = 0
    for seq in seqs:
        got = 0
        while got < per:
            x = np.column_stack([rng.uniform(-2, 2, 4 * per), rng.uniform(-2, 2, 4 * per),
                                 rng.uniform(0, 3, 4 * per)])
            x = x[in_vacuum(x, scene.surfaces)]
            b = solve_paths(x, seq, scene)
            delta, _ = enlargement_batch(b, scene)
            keep = np.flatnonzero(np.isfinite(delta))
            cmin = _min_cosine(b.x[keep], b.points[keep], seq.surfaces, scene.surfaces)
            grazing += int((cmin < GRAZING_COS).sum())
            keep = keep[cmin >= GRAZING_COS][: per - got]
            got += len(keep)
            batches.append((b, keep))
    return scene, batches, grazing


def check_enlargement(n_paths: int = 1000) -> CheckResult:
    scene, batches, grazing = random_sphere_plate_paths(n_paths)
    worst = 0.0
    count = 0
    for b, keep in batches:
        if len(keep) == 0:
            continue
        d_prop, _ = enlargement_batch(b, scene)
        d_fd = finite_difference_enlargement(b, scene)
        rel = np.abs(d_prop[keep] - d_fd[keep]) / d_prop[keep]
        worst = max(worst, float(np.max(rel)))
        count += len(keep)
    ok = worst <= 1e-6 and count >= n_paths
    return CheckResult("4 enlargement cross-validation", ok,
                       f"{count} paths, max relative difference {worst:.2e} "
                       f"({grazing} near-grazing paths set aside)")


@functools.lru_cache(maxsize=16)
def sphere_plate_point(xi: float, rtol: float = 1e-4, max_order: int = 4):
    scene = build_scene(SceneConfig("sphere_plate", a=xi, R=1.0))
    cfg = IntegratorConfig(rtol=rtol)
    res = total_energy(scene, PhysicalParams(), max_order, cfg, divergent=False)
    return res, pfa_energy(scene, 0), pfa_energy(scene, 1)


def odd_share(res) -> float:
    e2 = sum(c.finite for c in res.contributions if c.order == 2)
    odd = sum(c.finite for c in res.contributions if c.order in (1, 3))
    return abs(odd / e2)


def check_sphere_plate(xis=(0.05, 0.1, 0.25, 0.5, 1.0), xi_small: float = 0.01,
                       rtol: float = 1e-4) -> List[CheckResult]:
    shares = []
    order_ok = True
    order_txt = []
    for xi in xis:
        res, pp, ps = sphere_plate_point(xi, rtol)
        shares.append(odd_share(res))
        e = res.finite_part
        order_ok &= abs(e) >= abs(pp) and abs(e) >= abs(ps)
        order_txt.append(f"{xi:g}: {e / pp:.4f}/{e / ps:.4f}")
    res, pp, _ = sphere_plate_point(xi_small, rtol)
    ratio = res.finite_part / pp
    return [
        CheckResult("5a odd classes below 2% of two-reflection class", max(shares) < 0.02,
                    ", ".join(f"xi={x:g}: {s * 100:.2f}%" for x, s in zip(xis, shares))),
        CheckResult("5b optical exceeds both PFA variants", bool(order_ok),
                    "E_opt/E_pfa plate/sphere at xi " + "; ".join(order_txt)),
        CheckResult("5c optical/plate-PFA near 1 at small xi", abs(ratio - 1.0) <= 0.02,
                    f"xi={xi_small:g}: ratio {ratio:.4f}"),
    ]


def check_conductor(samples: int, h: float = 0.1) -> CheckResult:
    dir_res = plates_pipeline(samples)
    cond = plates_pipeline(samples, bc="conductor")
    even_dir = math.fsum(c.finite for c in dir_res.contributions if c.order % 2 == 0)
    exact = cond.finite_part == 2.0 * even_dir
    # a-derivative of the regulated odd sum, same random numbers at a +- h
    (_, up, up_err, *_), = odd_sums(samples, 1.0 + h, [0.01])
    (_, dn, dn_err, *_), = odd_sums(samples, 1.0 - h, [0.01])
    deriv = (up - dn) / (2 * h)
    deriv_err = math.hypot(up_err, dn_err) / (2 * h)
    exact_odd = [analytic.plates_odd_regulated(analytic.PlateSpec(a), 0.01, exact=True)
                 for a in (1.0 - h, 1.0 + h)]
    analytic_deriv = (exact_odd[1] - exact_odd[0]) / (2 * h)
    ok = exact and abs(deriv) <= 3.0 * deriv_err and abs(analytic_deriv) <= 1e-9 * exact_odd[0]
    return CheckResult("6 conductor identity", ok,
                       f"E_cond {cond.finite_part:.10e} = 2 x {even_dir:.10e}: {exact}; "
                       f"odd dE/da {deriv:.3e} +- {deriv_err:.1e} (closed form {analytic_deriv:.1e})")


def check_massive(samples: int, ma_values=(0.1, 1.0, 5.0)) -> CheckResult:
    scene = plates_scene(1.0)
    seq = ReflectionSequence((0, 1), 2)
    cfg = _mc(samples)
    worst = 0.0
    parts = []
    for ma in ma_values:
        c = class_contribution(scene, seq, PhysicalParams(m=ma), cfg, "mc")
        ref = analytic.plates_massive_two_reflection(analytic.PlateSpec(1.0), ma)
        rel = abs(c.value / ref - 1.0)
        worst = max(worst, rel)
        parts.append(f"ma={ma:g}: rel {rel:.1e}")
    c0 = class_contribution(scene, seq, PhysicalParams(m=1e-5), cfg, "mc")
    c_massless = class_contribution(scene, seq, PhysicalParams(), cfg, "mc")
    lim = abs(c0.value / c_massless.value - 1.0)
    ok = worst <= 5e-3 and lim <= 1e-6
    return CheckResult("7 massive two-reflection term", ok,
                       ", ".join(parts) + f"; m->0 rel {lim:.1e}")


def check_spectral(samples: int) -> CheckResult:
    scene = plates_scene(1.0)
    seq = ReflectionSequence((0, 1), 2)
    c = spectral_contribution(scene, seq, PhysicalParams(), cfg=_mc(samples), method="mc")
    ref = analytic.plates_class_energy(analytic.PlateSpec(1.0), 2)
    rel = abs(c.value / ref - 1.0)
    return CheckResult("8 spectral cross-check", rel <= 1e-2,
                       f"{c.value:.6e} vs {ref:.6e} (rel {rel:.1e})")


SWEEP_CONFIG = """\
[geometry]
kind = sphere_plate
a = 0.25
R = 1.0

[physics]
max_reflections = 2

[integration]
method = mc
samples = {samples}
seed = 99
strata = 4,4,4
rtol = 0.5
"""


def sweep_csv(samples: int, workers: int, points: int = 2) -> str:
    from .cli import cmd_sweep, parse_config
    run = parse_config(SWEEP_CONFIG.format(samples=samples))
    old = os.environ.get(numerics.WORKERS_ENV)
    with tempfile.TemporaryDirectory() as tmp:
        run.path = str(Path(tmp) / "sweep.csv")
        os.environ[numerics.WORKERS_ENV] = str(workers)
        try:
            cmd_sweep(run, 0.25, 1.0, points)
        finally:
            if old is None:
                os.environ.pop(numerics.WORKERS_ENV, None)
            else:
                os.environ[numerics.WORKERS_ENV] = old
        return Path(run.path).read_text()


def check_determinism(samples: int = 20000) -> CheckResult:
    first = sweep_csv(samples, 1)
    second = sweep_csv(samples, 1)
    threaded = sweep_csv(samples, 3)
    ok = first == second == threaded
    return CheckResult("9 sweep determinism", ok,
                       f"{len(first)} bytes, repeat identical={first == second}, "
                       f"3 workers identical={first == threaded}")


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_validation(samples: Optional[int] = None, fault: Optional[str] = None,
                   full: bool = False, out=print) -> bool:
    """Run the quick check set; returns True when every check passes."""
    samples = 60_000 if samples is None else samples
    results: List[CheckResult] = []
    with numerics.injected_fault(fault):
        results.append(check_k2_recurrence())
        plates_pipeline.cache_clear()
        for check in (check_plates_finite, check_fractions, check_conductor, check_massive,
                      check_spectral):
            try:
                results.append(check(samples))
            except ValueError as exc:
                results.append(CheckResult(check.__name__, False, str(exc)))
        results.append(check_odd_divergence(samples))
        results.append(check_enlargement(200))
        results.append(check_determinism(max(samples // 4, 1000)))
        if full:
            results.extend(check_sphere_plate())
    for r in results:
        out(r.line())
    return all(r.passed for r in results)
