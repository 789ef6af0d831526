"""Casimir energies from closed specular ray paths between rigid bodies."""

__version__ = "0.1.0"

from .scenes import SceneConfig, build_scene  # noqa: E402
from .energy import PhysicalParams, total_energy  # noqa: E402
from .numerics import IntegratorConfig  # noqa: E402

__all__ = ["SceneConfig", "build_scene", "PhysicalParams", "total_energy", "IntegratorConfig",
           "__version__"]
