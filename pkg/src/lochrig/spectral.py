"""Spectral kernels of the Dirac Hamiltonian on equal-time slices.

F(omega) is the frequency density of the projection-valued measure of the
Hamiltonian restricted by the hard frequency cut-off Theta(1 + eps*omega).
Kernels are functions of the spatial displacement r = y - x (second argument
minus first); the Fourier phase convention is e^{-i k (x - y)} with the
Minkowski product, which on equal-time slices reduces to e^{-i kvec.r}.

All kernels vanish identically on the mass gap |omega| < m and when the
cut-off gate Theta(1 + eps*omega) is closed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PhysicalParams, build_gamma_set
from .quadrature import SphereRule

_G = build_gamma_set()
_EYE4 = np.eye(4, dtype=complex)
_G0 = _G.g0
_G_LOW = [_G.lower(j) for j in range(4)]  # gamma_j (lower index)
_G_UP = [_G[j] for j in range(4)]

_SERIES_Z = 1e-3  # switch the radial helpers to series below kappa*r = 1e-3


@dataclass(frozen=True)
class SpectralKernelParams:
    """Spectral sector parameters: mass, regularization length, frequency."""

    m: float
    eps: float

    @classmethod
    def from_params(cls, p: PhysicalParams) -> "SpectralKernelParams":
        return cls(m=p.m, eps=p.eps)

    def gate_open(self, omega: float) -> bool:
        """Hard cut-off Theta(1 + eps*omega), evaluated exactly."""
        return 1.0 + self.eps * omega > 0.0

    def kappa_sq(self, omega: float) -> float:
        return omega * omega - self.m * self.m

    def active(self, omega: float) -> bool:
        """True when the shell is populated: gate open and |omega| > m."""
        return self.gate_open(omega) and self.kappa_sq(omega) > 0.0


def _branch_sign(omega: float) -> float:
    """Sign eps(omega) inherited from the functional calculus: the projection
    valued measure density is positive on both branches, which reproduces the
    printed closed forms on omega <= -m and flips their sign on omega >= m."""
    return -1.0 if omega < 0 else 1.0


# radial helpers: A(z) = sin z / z and derivatives, series-stabilized near 0
def _A(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_Z
    zs = np.where(small, 0.0, z)
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = np.where(small, 1.0, np.sin(zs) / np.where(small, 1.0, zs))
    z2 = z * z
    series = 1.0 - z2 / 6.0 + z2 * z2 / 120.0
    return np.where(small, series, direct)


def _Ap(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_Z
    zs = np.where(small, 1.0, z)
    direct = (zs * np.cos(zs) - np.sin(zs)) / zs**2
    z2 = z * z
    series = -z / 3.0 + z * z2 / 30.0 - z * z2 * z2 / 840.0
    return np.where(small, series, direct)


def _Ap_over_z(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_Z
    zs = np.where(small, 1.0, z)
    direct = (zs * np.cos(zs) - np.sin(zs)) / zs**3
    z2 = z * z
    series = -1.0 / 3.0 + z2 / 30.0 - z2 * z2 / 840.0
    return np.where(small, series, direct)


def _App(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_Z
    zs = np.where(small, 1.0, z)
    direct = ((2.0 - zs**2) * np.sin(zs) - 2.0 * zs * np.cos(zs)) / zs**3
    z2 = z * z
    series = -1.0 / 3.0 + z2 / 10.0 - z2 * z2 / 168.0
    return np.where(small, series, direct)


def F_diag(omega: float, params: SpectralKernelParams) -> np.ndarray:
    """On-diagonal kernel -(1/(2pi)^2) (omega + gamma_0 m) sqrt(omega^2 - m^2) Theta."""
    if not params.active(omega):
        return np.zeros((4, 4), dtype=complex)
    kappa = np.sqrt(params.kappa_sq(omega))
    return _branch_sign(omega) * (1.0 / (2.0 * np.pi) ** 2) * (
        omega * _EYE4 + params.m * _G0
    ) * kappa


def F_grad_diag(omega: float, mu: int, params: SpectralKernelParams) -> np.ndarray:
    """Coincidence limit of the spatial gradient, mu in {1,2,3}:
    (i/(3 (2pi)^2)) gamma_mu gamma_0 (omega^2 - m^2)^{3/2} Theta.
    """
    if mu not in (1, 2, 3):
        raise ValueError("mu must be a spatial index 1..3")
    if not params.active(omega):
        return np.zeros((4, 4), dtype=complex)
    k32 = params.kappa_sq(omega) ** 1.5
    return -_branch_sign(omega) * (1j / (3.0 * (2.0 * np.pi) ** 2)) * (_G_LOW[mu] @ _G0) * k32


def _scalar_parts(omega: float, r: np.ndarray, params: SpectralKernelParams):
    kappa = np.sqrt(params.kappa_sq(omega))
    z = kappa * r
    S = 2.0 * np.pi * kappa * _A(z)
    Sp = 2.0 * np.pi * kappa**2 * _Ap(z)
    return kappa, S, Sp


def F_kernel(omega: float, r_vec: np.ndarray, params: SpectralKernelParams) -> np.ndarray:
    """Equal-time kernel at displacement r = y - x (closed radial form)."""
    if not params.active(omega):
        return np.zeros((4, 4), dtype=complex)
    r_vec = np.asarray(r_vec, dtype=float)
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        return F_diag(omega, params)
    _, S, Sp = _scalar_parts(omega, np.array(r), params)
    rh = r_vec / r
    M = (omega * _G0 + params.m * _EYE4) * float(S) + 1j * float(Sp) * sum(
        _G_LOW[1 + mu] * rh[mu] for mu in range(3)
    )
    return _branch_sign(omega) * (1.0 / (2.0 * np.pi) ** 3) * M @ _G0


def F_kernel_grad(omega: float, r_vec: np.ndarray, params: SpectralKernelParams) -> np.ndarray:
    """d/dr^alpha of F_kernel, shape (3, 4, 4); gradient in the displacement r."""
    if not params.active(omega):
        return np.zeros((3, 4, 4), dtype=complex)
    r_vec = np.asarray(r_vec, dtype=float)
    r = float(np.linalg.norm(r_vec))
    kappa = np.sqrt(params.kappa_sq(omega))
    if r == 0.0:
        g = np.empty((3, 4, 4), dtype=complex)
        for mu in range(3):
            g[mu] = F_grad_diag(omega, 1 + mu, params)
        return g
    z = kappa * r
    Sp = 2.0 * np.pi * kappa**2 * float(_Ap(z))
    Spp = 2.0 * np.pi * kappa**3 * float(_App(z))
    Sp_r = 2.0 * np.pi * kappa**3 * float(_Ap_over_z(z))
    rh = r_vec / r
    base = omega * _G0 + params.m * _EYE4
    out = np.empty((3, 4, 4), dtype=complex)
    for a in range(3):
        M = base * (rh[a] * Sp)
        for mu in range(3):
            dd = rh[a] * rh[mu] * Spp + (float(a == mu) - rh[a] * rh[mu]) * Sp_r
            M = M + 1j * dd * _G_LOW[1 + mu]
        out[a] = _branch_sign(omega) * (1.0 / (2.0 * np.pi) ** 3) * M @ _G0
    return out


def F_kernel_quad(
    omega: float,
    r_vec: np.ndarray,
    params: SpectralKernelParams,
    rule: SphereRule | None = None,
) -> np.ndarray:
    """Quadrature oracle: direct mass-shell integral over S^2 with the phase factor."""
    if not params.active(omega):
        return np.zeros((4, 4), dtype=complex)
    rule = rule or SphereRule.product()
    r_vec = np.asarray(r_vec, dtype=float)
    kappa = np.sqrt(params.kappa_sq(omega))
    phase = np.exp(-1j * kappa * (rule.nodes @ r_vec))
    w = rule.weights
    acc = np.sum(w * phase) * (omega * _G0 + params.m * _EYE4)
    for mu in range(3):
        acc = acc + kappa * np.sum(w * phase * rule.nodes[:, mu]) * _G_LOW[1 + mu]
    return _branch_sign(omega) * (1.0 / (2.0 * np.pi) ** 3) * (kappa / 2.0) * acc @ _G0


def radial_scalars(omega: float, r: np.ndarray, params: SpectralKernelParams):
    """Vectorized radial pieces of the kernel at distances r (any shape):
    S, S', S'' and S'/r, with the coincidence limit built in (use rhat = 0 there).

    Single fused evaluation: the trig factors and small-z masks are shared.
    """
    kappa = np.sqrt(params.kappa_sq(omega))
    z = kappa * np.asarray(r, dtype=float)
    small = np.abs(z) < _SERIES_Z
    zs = np.where(small, 1.0, z)
    sin_z = np.sin(zs)
    cos_z = np.cos(zs)
    inv = 1.0 / zs
    inv2 = inv * inv
    inv3 = inv2 * inv
    z2 = z * z
    A = np.where(small, 1.0 - z2 / 6.0 + z2 * z2 / 120.0, sin_z * inv)
    Ap = np.where(small, -z / 3.0 + z * z2 / 30.0, (zs * cos_z - sin_z) * inv2)
    App = np.where(
        small, -1.0 / 3.0 + z2 / 10.0, ((2.0 - zs * zs) * sin_z - 2.0 * zs * cos_z) * inv3
    )
    Ap_z = np.where(small, -1.0 / 3.0 + z2 / 30.0, (zs * cos_z - sin_z) * inv3)
    tp = 2.0 * np.pi
    return tp * kappa * A, tp * kappa**2 * Ap, tp * kappa**3 * App, tp * kappa**3 * Ap_z


def kernel_matrices(omega: float, params: SpectralKernelParams):
    """Constant matrices M0, M1[mu] with F(r) = S M0 + rhat^mu S' M1[mu]."""
    c = _branch_sign(omega) * (1.0 / (2.0 * np.pi) ** 3)
    M0 = c * (omega * _G0 + params.m * _EYE4) @ _G0
    M1 = np.stack([c * 1j * _G_LOW[1 + mu] @ _G0 for mu in range(3)])
    return M0, M1


def F_time_offset(
    omega: float, r_vec: np.ndarray, dt: float, params: SpectralKernelParams
) -> np.ndarray:
    """Time-offset kernel: equal-time kernel times the phase e^{-i omega dt}."""
    return np.exp(-1j * omega * dt) * F_kernel(omega, r_vec, params)


class ClosedFKernel:
    """F_omega as a kernel object with analytic gradients in both slots.

    value(x, y) = F(omega, y - x); grad_y is the displacement gradient,
    grad_x its negative.  Suitable for operator-kernel composition.
    """

    def __init__(self, omega: float, params: SpectralKernelParams):
        self.omega = float(omega)
        self.params = params

    def value(self, x, y):
        return F_kernel(self.omega, np.asarray(y, float) - np.asarray(x, float), self.params)

    def grad_y(self, x, y):
        return F_kernel_grad(self.omega, np.asarray(y, float) - np.asarray(x, float), self.params)

    def grad_x(self, x, y):
        return -self.grad_y(x, y)


# ----------------------------------------------------------------------
# Momentum-space functional calculus on the mass shell
# ----------------------------------------------------------------------

def energy(k_spatial: np.ndarray, m: float) -> float:
    k_spatial = np.asarray(k_spatial, dtype=float)
    return float(np.sqrt(k_spatial @ k_spatial + m * m))


def hamiltonian_symbol(k_spatial: np.ndarray, params: SpectralKernelParams) -> np.ndarray:
    """Momentum-space Dirac Hamiltonian gamma^0 (gamma^mu k^mu + m): hermitian, eigenvalues +-E_k."""
    k_spatial = np.asarray(k_spatial, dtype=float)
    acc = params.m * _EYE4 + sum(_G_UP[1 + mu] * k_spatial[mu] for mu in range(3))
    return _G0 @ acc


def shell_symbol(g, k_spatial: np.ndarray, branch: int, params: SpectralKernelParams) -> np.ndarray:
    """On-shell symbol eps(k0) (gamma_j k^j + m) g(k0) / (2 E_k) on branch k0 = branch*E_k."""
    if branch not in (-1, 1):
        raise ValueError("branch must be +-1")
    k_spatial = np.asarray(k_spatial, dtype=float)
    E = energy(k_spatial, params.m)
    k0 = branch * E
    slash = k0 * _G_LOW[0] + sum(_G_LOW[1 + mu] * k_spatial[mu] for mu in range(3))
    return float(branch) * (slash + params.m * _EYE4) * g(k0) / (2.0 * E)


def symbol_multiply_check(g, h, k_samples, params: SpectralKernelParams) -> float:
    """Max residual of sigma_g gamma^0 sigma_h = sigma_{gh} over on-shell samples.

    k_samples: iterable of (k_spatial, branch) pairs.
    """
    worst = 0.0
    gh = lambda x: g(x) * h(x)
    for k_spatial, branch in k_samples:
        sg = shell_symbol(g, k_spatial, branch, params)
        sh = shell_symbol(h, k_spatial, branch, params)
        sgh = shell_symbol(gh, k_spatial, branch, params)
        worst = max(worst, float(np.max(np.abs(sg @ _G0 @ sh - sgh))))
    return worst


def symbol_conjugate_check(g, k_samples, params: SpectralKernelParams) -> float:
    """Max residual of sigma_{conj g} = gamma^0 sigma_g^dagger gamma^0 over samples."""
    worst = 0.0
    gbar = lambda x: np.conj(g(x))
    for k_spatial, branch in k_samples:
        sg = shell_symbol(g, k_spatial, branch, params)
        sgb = shell_symbol(gbar, k_spatial, branch, params)
        worst = max(worst, float(np.max(np.abs(sgb - _G0 @ sg.conj().T @ _G0))))
    return worst


def identity_symbol_check(k_spatial: np.ndarray, params: SpectralKernelParams) -> float:
    """Residual of sum over branches of sigma_id gamma^0 against the Hamiltonian symbol."""
    tot = sum(shell_symbol(lambda x: x, k_spatial, s, params) @ _G0 for s in (-1, 1))
    return float(np.max(np.abs(tot - hamiltonian_symbol(k_spatial, params))))
