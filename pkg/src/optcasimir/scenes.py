"""Scene construction for the two geometries: parallel plates and sphere + plate."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .geometry import Plane, Sphere, Surface


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    """Declarative description of a scene.

    ``kind`` is ``"parallel_plates"`` (uses ``a`` and side length ``L``) or
    ``"sphere_plate"`` (uses ``a`` and ``R``).
    """

    kind: str
    a: float
    L: float = 1.0
    R: float = 1.0

    def __post_init__(self):
        if self.kind not in ("parallel_plates", "sphere_plate"):
            raise ConfigError(f"unknown scene kind {self.kind!r}")
        if not self.a > 0:
            raise ConfigError("separation a must be positive")
        if not self.L > 0:
            raise ConfigError("side length L must be positive")
        if not self.R > 0:
            raise ConfigError("radius R must be positive")

    @property
    def xi(self) -> float:
        return self.a / self.R

    @property
    def area(self) -> float:
        return self.L ** 2

    def with_xi(self, xi: float) -> "SceneConfig":
        return SceneConfig(self.kind, a=xi * self.R, L=self.L, R=self.R)


@dataclass(frozen=True)
class Box:
    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))


@dataclass(frozen=True)
class AxiPiece:
    """Piece of an axisymmetric region: ``r0 <= r <= r1``, ``zlo(r) <= z <= zhi(r)``.

    ``zlo``/``zhi`` are ``("const", c)`` or ``("sphere_low"|"sphere_high", offset)``
    descriptors so the piece stays picklable and hashable.
    """

    r0: float
    r1: float
    zlo: tuple
    zhi: tuple


@dataclass(frozen=True)
class Scene:
    """Surfaces plus integration regions for one configuration."""

    config: SceneConfig
    surfaces: Tuple[Surface, ...]
    box: Box
    symmetry: str                      # "slab" | "axisymmetric"
    names: Tuple[str, ...]
    grading: Tuple[Tuple[float, ...], ...] = field(default=((), (), ()))

    @property
    def scale(self) -> float:
        return self.config.a

    # -- helpers for the sphere-plate geometry ------------------------------
    def sphere_low(self, r):
        """Height of the lower sphere surface above the plate (r <= R)."""
        cfg = self.config
        r = np.asarray(r, float)
        return cfg.a + cfg.R - np.sqrt(np.maximum(cfg.R ** 2 - r ** 2, 0.0))

    def sphere_high(self, r):
        cfg = self.config
        r = np.asarray(r, float)
        return cfg.a + cfg.R + np.sqrt(np.maximum(cfg.R ** 2 - r ** 2, 0.0))

    def zbound(self, spec, r):
        kind, val = spec
        if kind == "const":
            return np.full(np.shape(r), float(val))
        if kind == "sphere_low":
            return self.sphere_low(r) + val
        if kind == "sphere_high":
            return self.sphere_high(r) + val
        raise ValueError(spec)

    def vacuum_pieces(self, r_max: float = np.inf, z_max: float = np.inf) -> List[AxiPiece]:
        """Axisymmetric decomposition of the vacuum region.

        Pieces are aligned with the sphere so integrands stay smooth across
        each piece apart from shadow boundaries.
        """
        cfg = self.config
        if self.symmetry != "axisymmetric":
            raise ValueError("vacuum_pieces needs an axisymmetric scene")
        R = cfg.R
        rmid = min(R, r_max)
        knots = [0.0]
        s = np.sqrt(cfg.a * R)
        for k in (1.0, 2.0, 4.0, 8.0):
            if k * s < 0.5 * rmid:
                knots.append(k * s)
        knots.append(rmid)
        pieces = [AxiPiece(r0, r1, ("const", 0.0), ("sphere_low", 0.0))
                  for r0, r1 in zip(knots[:-1], knots[1:])]
        pieces.append(AxiPiece(0.0, rmid, ("sphere_high", 0.0), ("const", z_max)))
        if r_max > R:
            pieces.append(AxiPiece(R, r_max, ("const", 0.0), ("const", z_max)))
        return pieces


def build_scene(cfg: SceneConfig) -> Scene:
    """Surfaces and bounding regions for a configuration."""
    if cfg.kind == "parallel_plates":
        bottom = Plane(point=(0, 0, 0), normal=(0, 0, 1), name="bottom",
                       axes=np.array([[1.0, 0, 0], [0, 1.0, 0]]))
        top = Plane(point=(0, 0, cfg.a), normal=(0, 0, -1), name="top",
                    axes=np.array([[1.0, 0, 0], [0, -1.0, 0]]))
        h = 0.5 * cfg.L
        box = Box((-h, -h, 0.0), (h, h, cfg.a))
        return Scene(cfg, (bottom, top), box, "slab", ("P1", "P2"),
                     grading=((), (), (0.0, cfg.a)))
    plate = Plane(point=(0, 0, 0), normal=(0, 0, 1), name="plate",
                  axes=np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    sphere = Sphere(center=(0, 0, cfg.a + cfg.R), radius=cfg.R, name="sphere")
    r_max = 3 * cfg.R + cfg.a
    z_max = cfg.a + 2 * cfg.R + r_max
    box = Box((-r_max, -r_max, 0.0), (r_max, r_max, z_max))
    return Scene(cfg, (plate, sphere), box, "axisymmetric", ("P", "S"),
                 grading=((0.0,), (0.0,), (0.0, cfg.a)))


def bounding_radius(scene: Scene) -> float:
    return scene.box.hi[0]
