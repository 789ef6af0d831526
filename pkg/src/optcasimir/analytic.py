"""Closed-form reference values (hbar = c = 1).

Parallel plates at separation ``a`` with area ``S``: every closed path has
``Delta = 1/l**2``, the even paths have length ``2 n a`` and the odd ones
``2 (n - 1) a + 2 z`` (or ``2 (n - 1) a + 2 (a - z)``), so each reflection
class reduces to an elementary integral over the gap.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

from scipy import integrate

from .numerics import bessel_k2

ZETA4 = math.pi ** 4 / 90.0


class PrecisionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PlateSpec:
    a: float
    S: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("separation a must be positive")
        if not self.S > 0:
            raise ValueError("area S must be positive")


def plates_even_closed_form(spec: PlateSpec) -> float:
    """Sum of all even classes: ``-pi**2 S / (1440 a**3)``."""
    return -math.pi ** 2 * spec.S / (1440.0 * spec.a ** 3)


def plates_even_term(spec: PlateSpec, k: int) -> float:
    """Class with ``2k`` reflections: ``-(S / pi**2) a / (2 k a)**4``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return -spec.S * spec.a / (math.pi ** 2 * (2.0 * k * spec.a) ** 4)


def plates_even_partial(spec: PlateSpec, n_terms: int) -> float:
    """Partial sum of the first ``n_terms`` even classes."""
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    return math.fsum(plates_even_term(spec, k) for k in range(1, n_terms + 1))


def plates_even_fraction(n_terms: int) -> float:
    """Share of the even sum carried by the first ``n_terms`` classes."""
    return math.fsum(k ** -4.0 for k in range(1, n_terms + 1)) / ZETA4


def plates_odd_finite_term(spec: PlateSpec, k: int) -> float:
    """Separation-dependent part of the two classes with ``2k+1`` reflections.

    ``(S / 6 pi**2) [(2 k a)**-3 - (2 (k+1) a)**-3]``; for ``k = 0`` the
    first bracket term is the separation-independent self-energy and is
    dropped.  The terms telescope, so the full odd sum has no dependence on
    ``a``.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    a = spec.a
    head = (2.0 * k * a) ** -3 if k > 0 else 0.0
    return spec.S / (6.0 * math.pi ** 2) * (head - (2.0 * (k + 1) * a) ** -3)


def plates_class_energy(spec: PlateSpec, n: int, bc: str = "dirichlet") -> float:
    """Closed form of the order-``n`` contribution (finite part for odd ``n``)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n % 2 == 0:
        value = plates_even_term(spec, n // 2)
        return 2.0 * value if bc == "conductor" else value
    if bc == "conductor":
        return 0.0
    value = plates_odd_finite_term(spec, (n - 1) // 2)
    return -value if bc == "neumann" else value


def plates_odd_regulated(spec: PlateSpec, eps: float, exact: bool = False,
                         max_order: Optional[int] = None) -> float:
    """Regulated sum of the odd classes.

    The leading form is ``S / (8 pi eps**3)``.  With ``exact=True`` the sum
    ``(S / 2 pi**2) sum_classes int dz (eps**2 + l(z)**2)**-2`` is evaluated
    by quadrature, over all odd orders (``max_order=None``) or up to
    ``max_order``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps >= spec.a:
        warnings.warn("eps >= a: the leading eps**-3 form is not accurate", PrecisionWarning,
                      stacklevel=2)
    if not exact:
        return spec.S / (8.0 * math.pi * eps ** 3)
    a = spec.a

    def f(zeta):
        return 1.0 / (eps ** 2 + 4.0 * zeta ** 2) ** 2

    # both odd classes of order 2k+1 together cover zeta in [k a, (k+1) a] twice
    if max_order is None:
        upper = math.inf
    else:
        upper = a * ((max_order + 1) // 2)
    pts = [p for p in (eps, 5 * eps, 25 * eps) if p < min(upper, a)]
    head = integrate.quad(f, 0.0, min(a, upper), points=pts or None, limit=200)[0]
    tail = integrate.quad(f, a, upper, limit=200)[0] if upper > a else 0.0
    return spec.S / (2.0 * math.pi ** 2) * 2.0 * (head + tail)


def plates_massive_two_reflection(spec: PlateSpec, m: float) -> float:
    """Two-reflection term for a scalar of mass ``m``: ``-S m**2 K2(2 m a) / (8 pi**2 a)``."""
    if m < 0:
        raise ValueError("mass must be non-negative")
    a = spec.a
    if m == 0:
        return -spec.S / (16.0 * math.pi ** 2 * a ** 3)
    return -spec.S * m ** 2 * bessel_k2(2.0 * m * a) / (8.0 * math.pi ** 2 * a)


def sphere_plate_pfa_plate(a: float, R: float) -> float:
    """Plate-based proximity estimate for a sphere above a plate.

    ``-(pi**2/1440) 2 pi int_0^R u du / (a + R - u)**3`` in closed form.
    """
    c = a + R
    inner = 0.5 * c * (a ** -2 - c ** -2) - (1.0 / a - 1.0 / c)
    return -math.pi ** 2 / 1440.0 * 2.0 * math.pi * inner
