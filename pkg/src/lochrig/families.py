"""Named analytic families for initial data.

Fields are configured as closed-form profiles (never free per-node data) so
they can be evaluated both on the grid and at arbitrary quadrature points.
Every family is multiplied by a smooth bump mask vanishing at |x| = r_V,
which makes the deviation from u = dt compactly supported in V.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

FAMILIES = ("none", "gaussian", "bump", "plane_modulated_bump")


def bump_profile(s: np.ndarray) -> np.ndarray:
    """Standard smooth bump exp(1 - 1/(1 - s^2)) on |s| < 1, zero outside, value 1 at s = 0."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    s2 = np.where(inside, s * s, 0.0)
    with np.errstate(divide="ignore", over="ignore"):
        val = np.exp(1.0 - 1.0 / (1.0 - s2))
    return np.where(inside, val, 0.0)


@dataclass(frozen=True)
class ScalarFamily:
    """Scalar profile: amplitude * shape(x - center) * mask(|x|/r_V)."""

    family: str
    amplitude: float = 1.0
    sigma: float = 0.3
    center: tuple = (0.0, 0.0, 0.0)
    wavevector: tuple = (0.0, 0.0, 0.0)
    phase: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.family != "none" and self.sigma <= 0:
            raise ConfigError("family width must be positive")

    def __call__(self, x: np.ndarray, y: np.ndarray, z: np.ndarray, r_V: float) -> np.ndarray:
        x, y, z = np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)
        if self.family == "none":
            return np.zeros(np.broadcast(x, y, z).shape)
        cx, cy, cz = self.center
        dx, dy, dz = x - cx, y - cy, z - cz
        q2 = dx * dx + dy * dy + dz * dz
        if self.family == "gaussian":
            shape = np.exp(-0.5 * q2 / self.sigma**2)
        elif self.family == "bump":
            shape = bump_profile(np.sqrt(q2) / self.sigma)
        else:  # plane_modulated_bump
            kx, ky, kz = self.wavevector
            shape = np.cos(kx * x + ky * y + kz * z + self.phase) * bump_profile(
                np.sqrt(q2) / self.sigma
            )
        r = np.sqrt(x * x + y * y + z * z)
        return self.amplitude * shape * bump_profile(r / r_V)


@dataclass(frozen=True)
class VectorFamily:
    """Vector profile: scalar family times a fixed direction."""

    scalar: ScalarFamily
    direction: tuple = (1.0, 0.0, 0.0)

    def __call__(self, x, y, z, r_V: float) -> np.ndarray:
        base = self.scalar(x, y, z, r_V)
        d = np.asarray(self.direction, dtype=float)
        return np.stack([d[0] * base, d[1] * base, d[2] * base], axis=0)
