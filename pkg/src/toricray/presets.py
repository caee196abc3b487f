"""Registry of closed-form Cauchy data used by the CLI, the tests and the docs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import xlogy

from toricray.core.grid import Polytope
from toricray.core.toric import CauchyData
from toricray.errors import ConfigError


def _quadratic_u0(y: np.ndarray) -> np.ndarray:
    return y**2


def _quadratic_udot0(y: np.ndarray) -> np.ndarray:
    return -(y**2)


def _drift_u0(y: np.ndarray) -> np.ndarray:
    return 0.5 * y**2


def _drift_udot0(y: np.ndarray) -> np.ndarray:
    return -np.ones_like(y)


def _quartic_u0(y: np.ndarray) -> np.ndarray:
    return 0.5 * y**2 + y**4 / 12.0


def _quartic_udot0(y: np.ndarray) -> np.ndarray:
    return -0.5 * y**2


def _logistic_u0(y: np.ndarray) -> np.ndarray:
    return xlogy(y, y) + xlogy(1.0 - y, 1.0 - y)


def _logistic_udot0(y: np.ndarray) -> np.ndarray:
    return -2.0 * (y - 0.5) ** 2


def _quadratic2d_u0(y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    return y1**2 + y2**2


def _quadratic2d_udot0(y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    return -(y1**2) - 0.5 * y2**2


@dataclass(frozen=True)
class Preset:
    """Closed-form symplectic data (u0, udot0) on a box polytope, with its known lifespan."""

    name: str
    description: str
    u0: Callable[..., np.ndarray]
    udot0: Callable[..., np.ndarray]
    bounds: tuple[tuple[float, float], ...]
    lifespan: float
    default_shape: tuple[int, ...] = (401,)
    # Distance kept from the polytope boundary when sampling (u0 blows up there).
    inset: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def polytope(self) -> Polytope:
        return Polytope.box(self.bounds)

    def build(
        self, shape: int | Sequence[int] | None = None, polytope: Polytope | None = None
    ) -> CauchyData:
        """
        Sample the preset on a grid.

        Args:
            shape: Grid shape; defaults to ``default_shape``.
            polytope: Replacement moment polytope (e.g. a translate); the grid covers its
                bounding box shrunk by ``inset``.

        Returns:
            CauchyData named after the preset.
        """
        poly = polytope if polytope is not None else self.polytope()
        if poly.dim != self.dim:
            raise ConfigError(
                f"preset {self.name!r} is {self.dim}-dimensional, polytope is {poly.dim}"
            )
        box = [(lo + self.inset, hi - self.inset) for lo, hi in poly.bounding_box]
        shape = self.default_shape if shape is None else shape
        return CauchyData.from_functions(poly, self.u0, self.udot0, box, shape, name=self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "dim": self.dim,
            "polytope": [list(b) for b in self.bounds],
            "lifespan": self.lifespan if np.isfinite(self.lifespan) else "inf",
            "default_shape": list(self.default_shape),
        }


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset(
            "quadratic",
            "u0 = y^2, udot0 = -y^2; caustic, lifespan and invertibility all end at s = 1",
            _quadratic_u0,
            _quadratic_udot0,
            ((0.0, 1.0),),
            1.0,
        ),
        Preset(
            "drift",
            "u0 = y^2/2, udot0 = -1; a pure drift that stays smooth for all time",
            _drift_u0,
            _drift_udot0,
            ((-1.0, 1.0),),
            np.inf,
        ),
        Preset(
            "quartic",
            "u0 = y^2/2 + y^4/12, udot0 = -y^2/2; convexity first fails at y = 0, s = 1",
            _quartic_u0,
            _quartic_udot0,
            ((-1.0, 1.0),),
            1.0,
        ),
        Preset(
            "logistic",
            "u0 = y log y + (1-y) log(1-y) (psi0 = log(1 + e^x)), udot0 = -2 (y - 1/2)^2",
            _logistic_u0,
            _logistic_udot0,
            ((0.0, 1.0),),
            1.0,
            inset=0.02,
        ),
        Preset(
            "quadratic2d",
            "u0 = |y|^2, udot0 = -y1^2 - y2^2/2 on the unit square",
            _quadratic2d_u0,
            _quadratic2d_udot0,
            ((0.0, 1.0), (0.0, 1.0)),
            1.0,
            default_shape=(41, 41),
        ),
    )
}


def get_preset(name: str) -> Preset:
    """Look up a preset by id."""
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r} (known: {known})") from None


def list_presets() -> list[Preset]:
    return [PRESETS[name] for name in sorted(PRESETS)]
