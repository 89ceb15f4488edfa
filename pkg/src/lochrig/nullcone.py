"""Null-cone cross sections, the averaging construction behind the locally
rigid dynamics, closed forms for the boosted cone integrals with quadrature
oracles, and the geodesic transport check.

A cross section is parameterized by unit directions n on S^2 via the null
vectors zeta(n) = (1, n); the section function b(n) > 0 scales the tangents
xi(n) = b(n) zeta(n), and the induced measure is b(n)^2 dmu_{S^2}.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .core import ETA, is_timelike_future, minkowski_dot
from .errors import DegenerateDirection, InvalidInterval, NonTimelikeInput, NonTimelikeResult, NonTimelikeU
from .quadrature import SphereRule

_SERIES_CUT = 0.4  # switch D_s(p) to the exact antiderivative above beta/a = 0.4


def bp_from_u(u: np.ndarray, n: np.ndarray) -> float:
    """Section function b(n) = 1 / g(u, zeta(n)) for timelike future-directed u."""
    if not is_timelike_future(u):
        raise NonTimelikeU(f"u = {u} is not timelike future-directed")
    denom = u[0] - u[1:] @ np.asarray(n)
    if denom <= 0:
        raise DegenerateDirection(f"g(u, zeta(n)) = {denom} <= 0")
    return 1.0 / denom


@dataclass(frozen=True)
class ConeSection:
    """Section data on sphere-quadrature nodes: b values plus the rule."""

    rule: SphereRule
    b_values: np.ndarray

    def __post_init__(self):
        if np.any(self.b_values <= 0):
            raise DegenerateDirection("all b values must be positive")

    @classmethod
    def from_u(cls, u: np.ndarray, rule: SphereRule) -> "ConeSection":
        if not is_timelike_future(u):
            raise NonTimelikeU(f"u = {u} is not timelike future-directed")
        denom = u[0] - rule.nodes @ u[1:]
        if np.any(denom <= 0):
            raise DegenerateDirection("g(u, zeta(n)) <= 0 at some node")
        return cls(rule, 1.0 / denom)

    @classmethod
    def constant(cls, b: float, rule: SphereRule) -> "ConeSection":
        return cls(rule, np.full(rule.nodes.shape[0], float(b)))


def cone_measure(c: ConeSection) -> float:
    """mu(D_p L) = int b^2 dmu_{S^2}."""
    return float(np.sum(c.rule.weights * c.b_values**2))


def mean_xi(c: ConeSection) -> np.ndarray:
    """Averaged tangent (1/mu) int xi dmu = (1/mu) int b^3 zeta(n) dmu_{S^2}."""
    mu = cone_measure(c)
    xbar = np.einsum("i,ij->j", c.rule.weights * c.b_values**3, c.rule.zeta) / mu
    if minkowski_dot(xbar, xbar) <= 0:
        raise NonTimelikeResult("mean tangent is not timelike: section under-resolved")
    return xbar


def u_from_mean_xi(xi_bar: np.ndarray) -> np.ndarray:
    """Renormalization u = xi_bar / g(xi_bar, xi_bar)."""
    sq = minkowski_dot(xi_bar, xi_bar)
    if sq <= 0 or xi_bar[0] <= 0:
        raise NonTimelikeInput(f"xi_bar = {xi_bar} is not timelike future-directed")
    return xi_bar / sq


# ----------------------------------------------------------------------
# Closed forms for the cone integrals.
#
# Everything reduces to  D_s(p) = 2*pi * int_{-1}^{1} v^p (a - beta v)^{-s} dv
# with a = u^0, beta = |vec u|.  Small beta/a uses the binomial series; larger
# ratios use the exact antiderivative (cancellation is mild there).
# ----------------------------------------------------------------------

def _J(k: int, a, beta):
    if k == 0:
        return 2.0 * np.ones_like(a)
    if k == -1:
        return 2.0 * a
    if k == 1:
        return np.log((a + beta) / (a - beta)) / beta
    return ((a - beta) ** (1 - k) - (a + beta) ** (1 - k)) / (beta * (k - 1))


def _D_exact(s: int, p: int, a, beta):
    if p == 0:
        val = _J(s, a, beta)
    elif p == 1:
        val = (a * _J(s, a, beta) - _J(s - 1, a, beta)) / beta
    elif p == 2:
        val = (a**2 * _J(s, a, beta) - 2 * a * _J(s - 1, a, beta) + _J(s - 2, a, beta)) / beta**2
    else:
        val = (
            a**3 * _J(s, a, beta)
            - 3 * a**2 * _J(s - 1, a, beta)
            + 3 * a * _J(s - 2, a, beta)
            - _J(s - 3, a, beta)
        ) / beta**3
    return 2.0 * np.pi * val


def _D_series(s: int, p: int, a, beta, terms: int = 120):
    x = beta / a
    total = np.zeros_like(a)
    for j in range(p % 2, terms, 2):
        total = total + comb(s - 1 + j, j) * x**j * (2.0 / (p + j + 1))
    return 2.0 * np.pi * a ** (-float(s)) * total

def _D(s: int, p: int, a, beta):
    a = np.asarray(a, dtype=float)
    beta = np.asarray(beta, dtype=float)
    small = beta < _SERIES_CUT * a
    # dummy arguments keep the unselected branch finite
    return np.where(
        small,
        _D_series(s, p, a, np.where(small, beta, 0.0)),
        _D_exact(s, p, a, np.where(small, 0.5 * a, beta)),
    )


def _check_timelike_batch(u: np.ndarray):
    sq = u[:, 0] ** 2 - np.sum(u[:, 1:] ** 2, axis=1)
    if np.any(sq <= 0) or np.any(u[:, 0] <= 0):
        raise NonTimelikeU("batch contains non-timelike or past-directed vectors")


def _tensors_closed(u: np.ndarray):
    """Vectorized closed-form (mu, I2, I3) for a batch of timelike u, shape (M, 4)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    _check_timelike_batch(u)
    a = u[:, 0]
    uv = u[:, 1:]
    beta = np.linalg.norm(uv, axis=1)
    safe = np.maximum(beta, 1e-300)
    bh = np.where(beta[:, None] > 0, uv / safe[:, None], np.array([0.0, 0.0, 1.0]))
    usq = a**2 - beta**2
    mu = 4.0 * np.pi / usq

    d3 = [_D(3, p, a, beta) for p in range(3)]
    d4 = [_D(4, p, a, beta) for p in range(4)]

    eye = np.eye(3)
    P = np.einsum("mi,mj->mij", bh, bh)
    T = eye[None, :, :] - P

    M = u.shape[0]
    I2 = np.zeros((M, 4, 4))
    I2[:, 0, 0] = d3[0]
    I2[:, 0, 1:] = bh * d3[1][:, None]
    I2[:, 1:, 0] = I2[:, 0, 1:]
    I2[:, 1:, 1:] = P * d3[2][:, None, None] + T * ((d3[0] - d3[2]) / 2.0)[:, None, None]

    I3 = np.zeros((M, 4, 4, 4))
    I3[:, 0, 0, 0] = d4[0]
    vec = bh * d4[1][:, None]
    I3[:, 0, 0, 1:] = vec
    I3[:, 0, 1:, 0] = vec
    I3[:, 1:, 0, 0] = vec
    M2 = P * d4[2][:, None, None] + T * ((d4[0] - d4[2]) / 2.0)[:, None, None]
    I3[:, 0, 1:, 1:] = M2
    I3[:, 1:, 0, 1:] = M2
    I3[:, 1:, 1:, 0] = M2
    bbb = np.einsum("mi,mj,mk->mijk", bh, bh, bh)
    sym_bT = (
        np.einsum("mi,mjk->mijk", bh, T)
        + np.einsum("mj,mik->mijk", bh, T)
        + np.einsum("mk,mij->mijk", bh, T)
    )
    I3[:, 1:, 1:, 1:] = bbb * d4[3][:, None, None, None] + sym_bT * (
        ((d4[1] - d4[3]) / 2.0)[:, None, None, None]
    )

    I2 /= mu[:, None, None]
    I3 /= mu[:, None, None, None]
    return mu, I2, I3


def I2(u: np.ndarray) -> np.ndarray:
    """Closed-form second cone moment (1/mu) int xi^k xi^n / g(xi, nu) dmu."""
    _, i2, _ = _tensors_closed(np.asarray(u))
    return i2[0] if np.asarray(u).ndim == 1 else i2


def I3(u: np.ndarray) -> np.ndarray:
    """Closed-form third cone moment (1/mu) int xi^k xi^n xi^l / g(xi, nu) dmu."""
    _, _, i3 = _tensors_closed(np.asarray(u))
    return i3[0] if np.asarray(u).ndim == 1 else i3


def tensors_batch(u: np.ndarray):
    """(mu, I2, I3) closed forms for a batch of u, shape (M, 4)."""
    return _tensors_closed(u)


def I2_quad(u: np.ndarray, rule: SphereRule | None = None) -> np.ndarray:
    """Quadrature oracle for I2: direct sphere integration of b^3 zeta zeta."""
    rule = rule or SphereRule.product()
    c = ConeSection.from_u(np.asarray(u, dtype=float), rule)
    mu = cone_measure(c)
    z = rule.zeta
    return np.einsum("i,ij,ik->jk", rule.weights * c.b_values**3, z, z) / mu


def I3_quad(u: np.ndarray, rule: SphereRule | None = None) -> np.ndarray:
    """Quadrature oracle for I3: direct sphere integration of b^4 zeta zeta zeta."""
    rule = rule or SphereRule.product()
    c = ConeSection.from_u(np.asarray(u, dtype=float), rule)
    mu = cone_measure(c)
    z = rule.zeta
    return np.einsum("i,ij,ik,il->jkl", rule.weights * c.b_values**4, z, z, z) / mu


# ----------------------------------------------------------------------
# Geodesic transport check
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class GeodesicSegment:
    """Affine parameter interval [tau_q, tau_p] of a geodesic from base q."""

    tau_q: float
    tau_p: float

    def __post_init__(self):
        if self.tau_p < self.tau_q:
            raise InvalidInterval(f"tau_p = {self.tau_p} < tau_q = {self.tau_q}")


def transport_f(seg: GeodesicSegment, ode_steps: int = 64) -> float:
    """Integrate the transport equation along the geodesic and return f at tau_p.

    In the shifted affine parameter s = tau - tau_q the equation reads
    s f'(s) = f(s) with f(0) = 0.  The zero initial condition leaves the
    solution f = C s determined only up to the constant C; the distinguished
    parametrization fixes unit slope, seeded exactly on the first step.
    Returns f(tau_p), which must equal tau_p - tau_q.
    """
    if ode_steps < 16:
        raise InvalidInterval("ode_steps must be >= 16")
    s_end = seg.tau_p - seg.tau_q
    if s_end == 0.0:
        return 0.0
    ds = s_end / ode_steps
    s = ds
    f = ds  # exact seed: unit-slope solution on the first step
    resid = 0.0
    for _ in range(ode_steps - 1):
        # RK4 on f' = f / s
        k1 = f / s
        k2 = (f + 0.5 * ds * k1) / (s + 0.5 * ds)
        k3 = (f + 0.5 * ds * k2) / (s + 0.5 * ds)
        k4 = (f + ds * k3) / (s + ds)
        f += ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        s += ds
        resid = max(resid, abs(s * (f / s) - f))
    return f
