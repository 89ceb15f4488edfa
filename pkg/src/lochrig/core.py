"""Minkowski linear algebra, the Dirac-representation gamma matrices, spatial
grids and global physical parameters.

Conventions: metric signature (+,-,-,-), natural units (c = hbar = 1).
Four-vectors are length-4 numpy arrays [t, x, y, z]; spinor matrices are
4x4 complex numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

ETA = np.diag([1.0, -1.0, -1.0, -1.0])

_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def four_vector(t, x, y, z) -> np.ndarray:
    return np.array([t, x, y, z], dtype=float)


def minkowski_dot(v: np.ndarray, w: np.ndarray) -> float:
    """g(v, w) = v0 w0 - v1 w1 - v2 w2 - v3 w3."""
    return float(v[0] * w[0] - v[1] * w[1] - v[2] * w[2] - v[3] * w[3])


def classify(v: np.ndarray) -> str:
    """'timelike' / 'null' / 'spacelike' by the sign of g(v, v)."""
    s = minkowski_dot(v, v)
    if s > 0:
        return "timelike"
    if s < 0:
        return "spacelike"
    return "null"


def is_timelike_future(v: np.ndarray) -> bool:
    return minkowski_dot(v, v) > 0 and v[0] > 0


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """{a, b} = a b + b a."""
    return a @ b + b @ a


@dataclass(frozen=True)
class GammaSet:
    """Dirac-representation Clifford matrices.

    gamma[j] carries the upper index (gamma^j); lower(j) = eta_{jk} gamma^k.
    """

    gammas: tuple

    def __getitem__(self, j: int) -> np.ndarray:
        return self.gammas[j]

    @property
    def g0(self) -> np.ndarray:
        return self.gammas[0]

    def lower(self, j: int) -> np.ndarray:
        return self.gammas[j] if j == 0 else -self.gammas[j]

    def spin_adjoint(self, a: np.ndarray) -> np.ndarray:
        """Adjoint with respect to the spin inner product <g0 . | .>."""
        return self.g0 @ a.conj().T @ self.g0


def build_gamma_set() -> GammaSet:
    """Dirac representation: gamma^0 = diag(I, -I), gamma^mu = offdiag(sigma, -sigma)."""
    z = np.zeros((2, 2), dtype=complex)
    i2 = np.eye(2, dtype=complex)
    g0 = np.block([[i2, z], [z, -i2]])
    spatial = tuple(np.block([[z, s], [-s, z]]) for s in _PAULI)
    return GammaSet((g0,) + spatial)


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform cubic grid on [-L, L)^3 with N nodes per axis.

    The compact set V is the closed ball of radius r_V centered at the origin;
    initial data deviates from u = dt only inside V.
    """

    L: float
    N: int
    r_V: float

    def __post_init__(self):
        if self.N < 4:
            raise ConfigError("grid.N must be at least 4")
        if not 0 < self.r_V < self.L:
            raise ConfigError("grid.r_V must satisfy 0 < r_V < L")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    def meshgrid(self):
        ax = self.axis()
        return np.meshgrid(ax, ax, ax, indexing="ij")

    def radius(self) -> np.ndarray:
        X, Y, Z = self.meshgrid()
        return np.sqrt(X**2 + Y**2 + Z**2)

    def v_mask(self) -> np.ndarray:
        return self.radius() <= self.r_V


@dataclass(frozen=True)
class PhysicalParams:
    """Global physical parameters with the scale hierarchy m << Lambda << 1/eps.

    The hierarchy is enforced via m <= Lambda/ratio_mass and
    Lambda <= 1/(eps*ratio_cutoff); both ratios must be >= 10.
    """

    m: float
    eps: float
    Lambda: float
    lam: float = 0.0
    ratio_mass: float = 10.0
    ratio_cutoff: float = 10.0

    def __post_init__(self):
        if self.m <= 0 or self.eps <= 0 or self.Lambda <= 0:
            raise ConfigError("m, eps, Lambda must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.ratio_mass < 10 or self.ratio_cutoff < 10:
            raise ConfigError("scale ratios must be >= 10")
        if self.m > self.Lambda / self.ratio_mass:
            raise ConfigError(
                f"mass hierarchy violated: m = {self.m} > Lambda/{self.ratio_mass}"
            )
        if self.Lambda > 1.0 / (self.eps * self.ratio_cutoff):
            raise ConfigError(
                f"cutoff hierarchy violated: Lambda = {self.Lambda} > 1/(eps*{self.ratio_cutoff})"
            )
