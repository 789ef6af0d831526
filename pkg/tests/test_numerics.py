import math

import numpy as np
import pytest
from scipy import integrate

from optcasimir import numerics
from optcasimir.numerics import (AxisymmetricRegion, DomainError, IntegratorConfig, bessel_k0,
                                 bessel_k1, bessel_k2, injected_fault, integrate_axisymmetric,
                                 integrate_volume)
from optcasimir.scenes import Box


UNIT = Box((0, 0, 0), (1, 1, 1))


def poly(p):
    return p[:, 0] * p[:, 1] * p[:, 2] ** 2


def test_unit_cube_volume():
    est = integrate_volume(lambda p: np.ones(len(p)), UNIT, IntegratorConfig(samples=5000))
    assert est.value == pytest.approx(1.0, abs=1e-12)
    assert est.error >= 0
    assert est.sampled == est.evaluated + est.excluded


def test_constant_over_gap():
    gap = Box((-0.5, -0.5, 0.0), (0.5, 0.5, 1.0))
    est = integrate_volume(lambda p: np.full(len(p), 1 / 16), gap, IntegratorConfig(samples=5000))
    assert est.value == pytest.approx(0.0625, abs=1e-12)


def test_polynomial_within_error():
    est = integrate_volume(poly, UNIT, IntegratorConfig(samples=50000, seed=3))
    assert abs(est.value - 1 / 12) <= 3 * est.error
    assert est.error > 0


def test_excluded_points_count_as_zero():
    def half(p):
        return np.where(p[:, 0] < 0.5, 1.0, np.nan)

    est = integrate_volume(half, UNIT, IntegratorConfig(samples=20000, strata=(4, 1, 1)))
    assert est.value == pytest.approx(0.5, abs=1e-12)
    assert est.excluded > 0
    assert est.excluded + est.evaluated == est.sampled


def test_seed_determinism_and_workers(monkeypatch):
    cfg = IntegratorConfig(samples=60000, seed=9)
    monkeypatch.setenv(numerics.WORKERS_ENV, "1")
    one = integrate_volume(poly, UNIT, cfg)
    again = integrate_volume(poly, UNIT, cfg)
    monkeypatch.setenv(numerics.WORKERS_ENV, "4")
    four = integrate_volume(poly, UNIT, cfg)
    assert one == again == four
    other = integrate_volume(poly, UNIT, IntegratorConfig(samples=60000, seed=10))
    assert other.value != one.value


def test_bad_worker_env(monkeypatch):
    monkeypatch.setenv(numerics.WORKERS_ENV, "many")
    with pytest.raises(ValueError):
        numerics.worker_count()


def test_error_calibration():
    hits = 0
    for seed in range(100):
        est = integrate_volume(poly, UNIT, IntegratorConfig(samples=2000, seed=seed, strata=(2, 2, 2)))
        hits += abs(est.value - 1 / 12) <= 2 * est.error
    assert hits >= 90


def test_not_converged_flag():
    est = integrate_volume(poly, UNIT, IntegratorConfig(samples=1000, rtol=1e-9))
    assert not est.converged
    assert np.isfinite(est.value)


def test_refinement_passes_grow_budget():
    base = integrate_volume(poly, UNIT, IntegratorConfig(samples=2000, rtol=1e-9))
    more = integrate_volume(poly, UNIT, IntegratorConfig(samples=2000, rtol=1e-9, max_passes=2))
    assert more.sampled > 2 * base.sampled


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(samples=10)
    with pytest.raises(ValueError):
        IntegratorConfig(rtol=0)
    with pytest.raises(ValueError):
        IntegratorConfig(strata=(1, 0, 1))


def test_axis_edges_refine_toward_focus():
    edges = numerics.axis_edges(0.0, 1.0, 2, foci=(0.0,), depth=5)
    assert edges[0] == 0.0 and edges[-1] == 1.0
    assert edges[1] == pytest.approx(1 / 32)


def test_cylinder():
    est = integrate_axisymmetric(lambda r, z: np.ones_like(r), AxisymmetricRegion(0.0, 1.0, 0.0, 1.0))
    assert est.value == pytest.approx(math.pi, rel=1e-10)
    est = integrate_axisymmetric(lambda r, z: r, AxisymmetricRegion(0.0, 1.0, 0.0, 1.0))
    assert est.value == pytest.approx(2 * math.pi / 3, rel=1e-10)


def test_axisymmetric_curved_and_open_bounds():
    # unit ball as the region between -sqrt(1-r^2) and +sqrt(1-r^2)
    ball = AxisymmetricRegion(0.0, 1.0, lambda r: -np.sqrt(1 - r * r), lambda r: np.sqrt(1 - r * r))
    est = integrate_axisymmetric(lambda r, z: np.ones_like(r), ball, rtol=1e-9)
    assert est.value == pytest.approx(4 * math.pi / 3, rel=1e-8)
    tail = AxisymmetricRegion(0.0, 1.0, 0.0, math.inf)
    est = integrate_axisymmetric(lambda r, z: np.exp(-z), tail, rtol=1e-9)
    assert est.value == pytest.approx(math.pi, rel=1e-8)


def test_axisymmetric_agrees_with_volume():
    def f3(p):
        return np.exp(-(p[:, 0] ** 2 + p[:, 1] ** 2)) * p[:, 2]

    cube = Box((-1, -1, 0), (1, 1, 1))

    def inside(p):
        return np.where(p[:, 0] ** 2 + p[:, 1] ** 2 <= 1.0, f3(p), np.nan)

    mc = integrate_volume(inside, cube, IntegratorConfig(samples=100000, seed=1))
    cub = integrate_axisymmetric(lambda r, z: np.exp(-r * r) * z, AxisymmetricRegion(0.0, 1.0, 0.0, 1.0))
    assert abs(mc.value - cub.value) <= 3 * math.hypot(mc.error, cub.error)
    assert cub.value == pytest.approx(0.5 * math.pi * (1 - math.exp(-1)), rel=1e-9)


def k2_integral(z):
    # the integrand is below 1e-300 well before t = 30 for z >= 0.3
    return integrate.quad(lambda t: math.exp(-z * math.cosh(t)) * math.cosh(2 * t), 0, 30.0,
                          epsabs=0, epsrel=1e-13, limit=400)[0]


def test_k2_small_argument():
    assert 1e-12 * bessel_k2(1e-6) == pytest.approx(2.0, rel=1e-6)


def test_k2_quadrature_oracle():
    for z in (0.3, 1.0, 4.0):
        assert bessel_k2(z) == pytest.approx(k2_integral(z), rel=1e-10)


def test_k2_asymptotic_series():
    z = 20.0
    mu = 16.0
    term, series = 1.0, 1.0
    for k in range(1, 8):
        term *= (mu - (2 * k - 1) ** 2) / (k * 8 * z)
        series += term
    assert bessel_k2(z) == pytest.approx(math.sqrt(math.pi / (2 * z)) * math.exp(-z) * series, rel=1e-8)


def test_k2_recurrence():
    z = np.geomspace(1e-3, 50, 500)
    k2 = bessel_k2(z)
    assert np.max(np.abs(k2 - bessel_k0(z) - 2 / z * bessel_k1(z)) / k2) <= 1e-10


def test_k2_domain():
    with pytest.raises(DomainError):
        bessel_k2(0.0)
    with pytest.raises(DomainError):
        bessel_k2(np.array([1.0, -2.0]))
    assert bessel_k2(1e4) == 0.0


def test_fault_injection_is_scoped():
    clean = bessel_k2(1.0)
    with injected_fault("k2"):
        assert bessel_k2(1.0) == pytest.approx(clean * (1 + 1e-6), rel=1e-12)
    assert bessel_k2(1.0) == clean
