"""Trace evaluation of kernel products, the distributional boundary-value
identity used in the second-order rate, and the rate formulas B1 and B2.

Traces of the compactly supported kernel products are double integrals over
V x V evaluated on the grid nodes inside V (tensor-product rule, two-level
stride refinement as the error indicator).  The frequency integrals run in
the shell momentum kappa = sqrt(omega^2 - m^2), in which every integrand is
analytic; the frequency derivative is spectral differentiation of the node
interpolant.  The difference quotient of the window function g is evaluated
in its symmetric well-defined form, never as a principal value.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .core import SpatialGrid
from .errors import ConfigError, GridTooCoarse
from .operators import FirstOrderOperator
from .quadrature import differentiation_matrix, gauss_legendre, gauss_panels, graded_panels
from .spectral import (
    F_diag,
    F_grad_diag,
    SpectralKernelParams,
    kernel_matrices,
    radial_scalars,
)

_CHUNK = 96


@dataclass(frozen=True)
class CutoffFunction:
    """Smooth nonnegative cutoff supported in (-Lambda, Lambda), normalized to 1 at -m.

    Shape: exp(-x^p/(1 - x^2)) (1 + skew (omega/w_s) exp(-(omega/w_s)^2 / 2))
    with x = omega/Lambda, an even plateau power p and a fixed
    (Lambda-independent) asymmetry scale w_s = omega_skew.

    The traces of the assembled operator class obey an exact mirror symmetry
    Re tr dQ/dt(w, w') = Re tr dQ/dt(-w', -w); only the odd part of the
    window contributes to the second-order rate, and an even cutoff cancels
    it identically.  The odd component is therefore localized at
    |omega| ~ w_s (keeping the rate concentrated near the gap) and the even
    envelope is plateau-flat so that the rate does not track the cutoff
    scale.  skew = 0 with plateau = 2-behavior... plateau_power = 2 and
    skew = 0 recover a standard symmetric bump profile.
    """

    Lambda: float
    m: float
    skew: float = 0.8
    omega_skew: float = 0.0  # 0 -> defaults to 2 m
    plateau_power: int = 12

    def __post_init__(self):
        if not 0 < self.m < self.Lambda:
            raise ConfigError("cutoff requires 0 < m < Lambda")
        if not abs(self.skew) < np.sqrt(np.e):
            raise ConfigError("cutoff skew too large: window would go negative")
        if self.plateau_power < 2 or self.plateau_power % 2:
            raise ConfigError("plateau_power must be an even integer >= 2")

    @property
    def _wskew(self) -> float:
        return self.omega_skew if self.omega_skew > 0 else 2.0 * self.m

    def _raw(self, omega):
        omega = np.asarray(omega, dtype=float)
        x = omega / self.Lambda
        inside = np.abs(x) < 1.0
        x2 = np.where(inside, x * x, 0.0)
        y = omega / self._wskew
        with np.errstate(divide="ignore", over="ignore"):
            val = np.exp(-(x2 ** (self.plateau_power // 2)) / (1.0 - x2)) * (
                1.0 + self.skew * y * np.exp(-0.5 * y * y)
            )
        return np.where(inside, val, 0.0)

    def __call__(self, omega):
        return self._raw(omega) / self._raw(-self.m)


class TraceGeometry:
    """Quadrature nodes for V x V integrals: grid nodes inside the support ball.

    stride > 1 subsamples the grid; comparing strides gives the two-level
    refinement error indicator.  Pair distance/direction fields are cached.
    """

    def __init__(self, grid: SpatialGrid, stride: int = 1):
        self.grid = grid
        self.stride = int(stride)
        ax = grid.axis()[:: self.stride]
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        mask = np.sqrt(X**2 + Y**2 + Z**2) <= grid.r_V
        self.points = np.stack([X[mask], Y[mask], Z[mask]], axis=1)
        self.weight = (grid.h * self.stride) ** 3
        self._r = None
        self._rhat = None

    @property
    def n_nodes(self) -> int:
        return int(self.points.shape[0])

    def pair_fields(self):
        if self._r is None:
            d = self.points[None, :, :] - self.points[:, None, :]  # x_j - x_i
            r = np.linalg.norm(d, axis=2)
            pos = r[:, :, None] > 0
            self._rhat = np.where(pos, d / np.where(pos, r[:, :, None], 1.0), 0.0)
            self._r = r
        return self._r, self._rhat


def trace_diag(kernel, geometry: TraceGeometry) -> complex:
    """Integral over V of Tr K(x, x) d^3x on the geometry nodes."""
    total = 0.0 + 0.0j
    for p in geometry.points:
        total += np.trace(kernel(p, p))
    return complex(total * geometry.weight)


# ----------------------------------------------------------------------
# first-order rate
# ----------------------------------------------------------------------

def dotA_F_diagonal(
    dotA: FirstOrderOperator,
    omega: float,
    geometry: TraceGeometry,
    params: SpectralKernelParams,
) -> complex:
    """Integral over V of Tr[(dA/dt . F_omega)(x, x)] d^3x.

    On the diagonal (op F)(x,x) = C(x) F(x,x) + D^a(x) d_{x^a}F(x,y)|_{y=x};
    the x-gradient at coincidence is minus the printed y-gradient form.
    """
    Fd = F_diag(omega, params)
    Fg = np.stack([F_grad_diag(omega, 1 + a, params) for a in range(3)])
    C = dotA.C_at(geometry.points)
    D = dotA.D_at(geometry.points)
    val = np.einsum("mab,ba->", C, Fd) - np.einsum("mcab,cba->", D, Fg)
    return complex(val * geometry.weight)


def B1(
    dotA: FirstOrderOperator, geometry: TraceGeometry, params: SpectralKernelParams
) -> float:
    """First-order rate -int_V Tr[(dA/dt) F_{-m}](x,x) d^3x.

    Analytically zero: both coincidence kernels carry sqrt(omega^2 - m^2)
    factors that vanish at omega = -m.
    """
    return float(-dotA_F_diagonal(dotA, -params.m, geometry, params).real)


# ----------------------------------------------------------------------
# kernel-product traces over V x V
# ----------------------------------------------------------------------

def _dressed(op: FirstOrderOperator, points: np.ndarray, M0: np.ndarray, M1: np.ndarray):
    """Node matrices of the composition (F o op):
    P0 = M0 (C - div D), P1[u] = M1[u] (C - div D),
    Q0[c] = M0 D^c,      Q1[u, c] = M1[u] D^c.
    """
    Ct = op.C_at(points) - op.div_D_at(points)
    D = op.D_at(points)  # (M, 3, 4, 4)
    P0 = np.einsum("ab,mbc->mac", M0, Ct)
    P1 = np.einsum("uab,mbc->muac", M1, Ct)
    Q0 = np.einsum("ab,mcbd->mcad", M0, D)
    Q1 = np.einsum("uab,mcbd->mucad", M1, D)
    return P0, P1, Q0, Q1


def _pair_scalars(omega: float, r, rhat, params: SpectralKernelParams):
    """Pair fields of F at displacement x_j - x_i and of its y-gradient:
    s0 = S, s1[mu] = rhat^mu S', t1[mu, c] = rhat^mu rhat^c (S'' - S'/r)
    + delta^{mu c} S'/r.  (The rhat = 0 convention at r = 0 reproduces the
    coincidence limits exactly.)
    """
    S, Sp, Spp, Sp_r = radial_scalars(omega, r, params)
    s1 = rhat * Sp[..., None]
    t1 = (Spp - Sp_r)[..., None, None] * rhat[..., :, None] * rhat[..., None, :]
    t1 = t1 + Sp_r[..., None, None] * np.eye(3)
    return S, s1, t1


def _channel_scalars(
    omega: float, r, rhat, params: SpectralKernelParams, dtype=np.float64
) -> np.ndarray:
    """The 16 pair-scalar channels [S, s1(3), s1(3), t1(9)] -> (..., 16),
    written into one buffer (this array dominates the trace cost)."""
    S, Sp, Spp, Sp_r = radial_scalars(omega, r, params)
    out = np.empty(r.shape + (16,), dtype=dtype)
    out[..., 0] = S
    np.multiply(rhat, Sp[..., None], out=out[..., 1:4], casting="unsafe")
    out[..., 4:7] = out[..., 1:4]
    d = Spp - Sp_r
    for u in range(3):
        du = d * rhat[..., u]
        for c in range(3):
            np.multiply(du, rhat[..., c], out=out[..., 7 + 3 * u + c], casting="unsafe")
        out[..., 7 + 4 * u] += Sp_r.astype(dtype)
    return out


def _channel_matrices(P0, P1, Q0, Q1, flipped: bool, transposed: bool) -> np.ndarray:
    """Node matrices matching the 16 scalar channels, flattened to (M, 16, 16).

    Channel signs: K = S P0 + s1.P1 - s1.Q0 - t1.Q1 for the (x_i, x_j) slot;
    the (x_j, x_i) slot flips the displacement, negating the odd channels
    (s1 ones), equivalent to K = S P0 - s1.P1 + s1.Q0 - t1.Q1.
    """
    sign = -1.0 if flipped else 1.0
    M = P0.shape[0]
    parts = [
        P0[:, None],
        sign * P1,
        -sign * Q0,
        -Q1.reshape(M, 9, 4, 4),
    ]
    R = np.concatenate(parts, axis=1)  # (M, 16, 4, 4)
    if transposed:
        R = np.swapaxes(R, 2, 3)
    return np.ascontiguousarray(R.reshape(M, 16, 16))


def _contract(Phi_a, Phi_b, Ra, Sb, M: int) -> complex:
    """sum_{ije} Phi_a[i,j,X] Ra[j,X,e] Phi_b[i,j,Y] Sb[i,Y,e] via real-split
    batched matrix products.  Runs in the dtype of the Phi arrays."""
    dt = Phi_a.dtype
    Ra_re, Ra_im = np.ascontiguousarray(Ra.real, dt), np.ascontiguousarray(Ra.imag, dt)
    Sb_re, Sb_im = np.ascontiguousarray(Sb.real, dt), np.ascontiguousarray(Sb.imag, dt)
    tot_re = 0.0
    tot_im = 0.0
    for lo in range(0, M, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, M))
        # (j-batched) K1[j, i, e] = Phi_a[i, j, X] Ra[j, X, e]
        Pa = np.ascontiguousarray(Phi_a[sl].transpose(1, 0, 2))  # (M, chunk, 16)
        K1r = np.matmul(Pa, Ra_re)
        K1i = np.matmul(Pa, Ra_im)
        # (i-batched) K2t[i, j, e] = Phi_b[i, j, X] Sb[i, X, e] (entry-transposed)
        Pb = Phi_b[sl]  # (chunk, M, 16)
        K2r = np.matmul(Pb, Sb_re[sl])
        K2i = np.matmul(Pb, Sb_im[sl])
        tot_re += float(np.einsum("jie,ije->", K1r, K2r)) - float(np.einsum("jie,ije->", K1i, K2i))
        tot_im += float(np.einsum("jie,ije->", K1r, K2i)) + float(np.einsum("jie,ije->", K1i, K2r))
    return tot_re + 1j * tot_im


def trace_pair(
    omega: float,
    op1: FirstOrderOperator,
    omega_p: float,
    op2: FirstOrderOperator,
    geometry: TraceGeometry,
    params: SpectralKernelParams,
    scalars: tuple | None = None,
) -> complex:
    """tr[(F_omega o op1)(F_omega' o op2)] as a double integral over V x V.

    (F o op)(x, y) = F(x, y)(C - div D)(y) - d_{y^a}F(x, y) D^a(y);
    tr = sum_{ij} w^2 Tr[K1(x_i, x_j) K2(x_j, x_i)].  Kernels decompose into
    16 scalar pair channels times constant node matrices, so the assembly is
    a batched matrix product.  `scalars` optionally passes precomputed
    (Phi_omega, Phi_omega') channel arrays.
    """
    if not (params.active(omega) and params.active(omega_p)):
        return 0.0 + 0.0j
    r, rhat = geometry.pair_fields()
    pts = geometry.points
    M0a, M1a = kernel_matrices(omega, params)
    M0b, M1b = kernel_matrices(omega_p, params)
    # K1 carries coefficients of op1 at the second slot x_j (unflipped channels);
    # K2 = kernel at (x_j, x_i) carries op2 at x_i with flipped odd channels and
    # is stored entry-transposed so the spinor trace is a flat dot product.
    Ra = _channel_matrices(*_dressed(op1, pts, M0a, M1a), flipped=False, transposed=False)
    Sb = _channel_matrices(*_dressed(op2, pts, M0b, M1b), flipped=True, transposed=True)
    if scalars is None:
        Phi_a = _channel_scalars(omega, r, rhat, params)
        Phi_b = _channel_scalars(omega_p, r, rhat, params)
    else:
        Phi_a, Phi_b = scalars
    total = _contract(Phi_a, Phi_b, Ra, Sb, geometry.n_nodes)
    return complex(total * geometry.weight**2)


def trace_pair_both(
    omega: float,
    omega_p: float,
    opA: FirstOrderOperator,
    opB: FirstOrderOperator,
    geometry: TraceGeometry,
    params: SpectralKernelParams,
    scalars: tuple | None = None,
) -> tuple:
    """Both product-rule slots with shared pair scalars:
    (tr[(F_w o opA)(F_w' o opB)], tr[(F_w o opB)(F_w' o opA)])."""
    if not (params.active(omega) and params.active(omega_p)):
        return 0.0 + 0.0j, 0.0 + 0.0j
    r, rhat = geometry.pair_fields()
    pts = geometry.points
    M0a, M1a = kernel_matrices(omega, params)
    M0b, M1b = kernel_matrices(omega_p, params)
    if scalars is None:
        Phi_a = _channel_scalars(omega, r, rhat, params)
        Phi_b = _channel_scalars(omega_p, r, rhat, params)
    else:
        Phi_a, Phi_b = scalars
    RaA = _channel_matrices(*_dressed(opA, pts, M0a, M1a), flipped=False, transposed=False)
    RaB = _channel_matrices(*_dressed(opB, pts, M0a, M1a), flipped=False, transposed=False)
    SbA = _channel_matrices(*_dressed(opA, pts, M0b, M1b), flipped=True, transposed=True)
    SbB = _channel_matrices(*_dressed(opB, pts, M0b, M1b), flipped=True, transposed=True)
    M = geometry.n_nodes
    w2 = geometry.weight**2
    first = _contract(Phi_a, Phi_b, RaA, SbB, M) * w2
    second = _contract(Phi_a, Phi_b, RaB, SbA, M) * w2
    return complex(first), complex(second)


def kernel_of_composition(
    omega: float,
    op: FirstOrderOperator,
    x_points: np.ndarray,
    y_points: np.ndarray,
    params: SpectralKernelParams,
) -> np.ndarray:
    """Kernel of (F_omega o op) at point pairs, vectorized: (M, 4, 4)."""
    if not params.active(omega):
        return np.zeros((x_points.shape[0], 4, 4), dtype=complex)
    d = np.asarray(y_points, float) - np.asarray(x_points, float)
    r = np.linalg.norm(d, axis=1)
    pos = r[:, None] > 0
    rhat = np.where(pos, d / np.where(pos, r[:, None], 1.0), 0.0)
    M0, M1 = kernel_matrices(omega, params)
    P0, P1, Q0, Q1 = _dressed(op, np.asarray(y_points, float), M0, M1)
    S, s1, t1 = _pair_scalars(omega, r, rhat, params)
    K = np.einsum("m,mab->mab", S, P0)
    K += np.einsum("mu,muab->mab", s1, P1)
    K -= np.einsum("mc,mcab->mab", s1, Q0)
    K -= np.einsum("muc,mucab->mab", t1, Q1)
    return K


def trace_pair_qmc(
    omega: float,
    op1: FirstOrderOperator,
    omega_p: float,
    op2: FirstOrderOperator,
    grid: SpatialGrid,
    params: SpectralKernelParams,
    m_pow2: int = 15,
    seed: int = 0,
) -> complex:
    """Quasi-Monte-Carlo oracle for trace_pair: Sobol points on the 6D box
    [-r_V, r_V]^6 (integrand supported in the ball in each factor).
    """
    if not (params.active(omega) and params.active(omega_p)):
        return 0.0 + 0.0j
    sob = qmc.Sobol(d=6, scramble=True, seed=seed)
    pts = sob.random_base2(m_pow2)
    box = 2.0 * grid.r_V
    pts = box * pts - grid.r_V
    x, y = pts[:, :3], pts[:, 3:]
    K1 = kernel_of_composition(omega, op1, x, y, params)
    K2 = kernel_of_composition(omega_p, op2, y, x, params)
    vals = np.einsum("mab,mba->m", K1, K2)
    return complex(np.mean(vals) * box**6)


def trace_Q(
    omega: float,
    omega_prime: float,
    deltaA: FirstOrderOperator,
    geometry: TraceGeometry,
    params: SpectralKernelParams,
    dotA: FirstOrderOperator | None = None,
    mode: str = "static",
    use_symmetry: bool = False,
) -> complex:
    """tr Q(omega, omega') with Q = F_omega DeltaA F_omega' DeltaA.

    mode='time-derivative' applies the product rule d/dt Q, replacing one
    DeltaA by dA/dt in each of the two slots (requires dotA).  Returns exact
    0 when either frequency is outside the populated, gated shell.
    """
    if mode not in ("static", "time-derivative"):
        raise ConfigError("mode must be 'static' or 'time-derivative'")
    if not (params.active(omega) and params.active(omega_prime)):
        return 0.0 + 0.0j
    if mode == "static":
        return trace_pair(omega, deltaA, omega_prime, deltaA, geometry, params)
    if dotA is None:
        raise ConfigError("time-derivative mode requires the dA/dt operator")
    first = trace_pair(omega, dotA, omega_prime, deltaA, geometry, params)
    if use_symmetry:
        # the two product-rule terms are complex conjugates for symmetric operators
        return complex(2.0 * first.real)
    second = trace_pair(omega, deltaA, omega_prime, dotA, geometry, params)
    return first + second


# ----------------------------------------------------------------------
# Sokhotski-Plemelj boundary values
# ----------------------------------------------------------------------

def _partial_first(f, a, b, step: float = 1e-4):
    """Richardson central difference of f in its first argument at (a, b)."""
    d1 = (f(a + step, b) - f(a - step, b)) / (2.0 * step)
    d2 = (f(a + step / 2.0, b) - f(a - step / 2.0, b)) / step
    return (4.0 * d2 - d1) / 3.0


def sokhotski_lhs(f, omega: float, delta: float, bounds, n: int = 12) -> complex:
    """Finite-delta double integral
    int f(w1, w2) [d_{w1}((w1 - omega - i s delta)^{-1}) (w2 - omega - i s delta)^{-1}]_{s=-1}^{s=1}.

    Graded tensor panels refine toward the lines w1 = omega, w2 = omega down
    to a fraction of delta.
    """
    a1, b1, a2, b2 = bounds
    finest = delta / 8.0

    def nodes(a, b):
        if a < omega < b:
            return graded_panels(a, b, omega, finest, n)
        return gauss_panels(np.linspace(a, b, 9), n)

    x1, w1 = nodes(a1, b1)
    x2, w2 = nodes(a2, b2)
    W1, W2 = np.meshgrid(x1, x2, indexing="ij")
    fv = f(W1, W2)

    def bracket(s):
        z1 = W1 - omega - 1j * s * delta
        z2 = W2 - omega - 1j * s * delta
        return -1.0 / z1**2 / z2

    integrand = fv * (bracket(1.0) - bracket(-1.0))
    return complex(np.einsum("i,j,ij->", w1, w2, integrand))


def _pv_quad(g, lo: float, hi: float, omega: float, n: int = 16, panels: int = 16) -> complex:
    """PV int_lo^hi g(w)/(w - omega) dw via the symmetric difference-quotient rule."""
    if not lo < omega < hi:
        x, w = gauss_panels(np.linspace(lo, hi, panels + 1), n)
        return complex(np.sum(w * g(x) / (x - omega)))
    R = min(omega - lo, hi - omega)
    x, w = gauss_panels(np.linspace(omega - R, omega + R, 2 * panels + 1), n)
    g0 = g(np.array([omega]))[0]
    val = np.sum(w * (g(x) - g0) / (x - omega))
    for a, b in ((lo, omega - R), (omega + R, hi)):
        if b > a:
            x, w = gauss_panels(np.linspace(a, b, panels + 1), n)
            val += np.sum(w * g(x) / (x - omega))
    return complex(val)


def sokhotski_rhs(f, omega: float, bounds) -> complex:
    """Boundary-value limit of sokhotski_lhs:
    -2 pi i PV int (d_1 f(omega, w') + d_1 f(w', omega)) / (w' - omega) dw'.
    """
    a1, b1, a2, b2 = bounds
    lo, hi = min(a1, a2), max(b1, b2)

    def g(wp):
        wp = np.asarray(wp, dtype=float)
        return _partial_first(f, omega, wp) + _partial_first(f, wp, omega)

    return -2j * np.pi * _pv_quad(g, lo, hi, omega)


def sokhotski_rhs_oracle(f, omega: float, bounds) -> complex:
    """Independent adaptive-quadrature oracle for sokhotski_rhs (QUADPACK Cauchy weight)."""
    a1, b1, a2, b2 = bounds
    lo, hi = min(a1, a2), max(b1, b2)

    def g(wp):
        arr = np.asarray(wp, dtype=float)
        scalar = arr.ndim == 0
        arr = np.atleast_1d(arr)
        val = _partial_first(f, omega, arr) + _partial_first(f, arr, omega)
        return val[0] if scalar else val

    if not lo < omega < hi:
        re = integrate.quad(lambda w: (g(w) / (w - omega)).real, lo, hi, limit=200)[0]
        im = integrate.quad(lambda w: (g(w) / (w - omega)).imag, lo, hi, limit=200)[0]
        return -2j * np.pi * (re + 1j * im)
    re = integrate.quad(lambda w: g(w).real, lo, hi, weight="cauchy", wvar=omega, limit=200)[0]
    im = integrate.quad(lambda w: g(w).imag, lo, hi, weight="cauchy", wvar=omega, limit=200)[0]
    return -2j * np.pi * (re + 1j * im)


# ----------------------------------------------------------------------
# frequency grid and the second-order rate
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class OmegaGrid:
    """Gauss-Legendre nodes in the shell momentum kappa on (0, kappa(omega_max)].

    omega(kappa) = branch * sqrt(m^2 + kappa^2) covers (m, omega_max) resp.
    (-omega_max, -m); the boundaries at +-m map to kappa = 0 (integrands
    vanish there) and the hard-gate discontinuity at -1/eps is never reached
    since the frequency ranges stay well below 1/eps.
    """

    m: float
    omega_max: float
    n: int

    def __post_init__(self):
        if self.n < 4:
            raise ConfigError("omega grid needs at least 4 nodes")
        if self.omega_max <= self.m:
            raise ConfigError("omega grid requires omega_max > m")

    @property
    def kappa_max(self) -> float:
        return float(np.sqrt(self.omega_max**2 - self.m**2))

    def nodes(self):
        return gauss_legendre(0.0, self.kappa_max, self.n)

    def omega(self, branch: int) -> np.ndarray:
        k, _ = self.nodes()
        return branch * np.sqrt(self.m**2 + k**2)

    def diff_matrix(self) -> np.ndarray:
        k, _ = self.nodes()
        return differentiation_matrix(k)


def _deriv_estimate(values: np.ndarray, kappa: np.ndarray, Dmat: np.ndarray) -> float:
    """Relative distance between the spectral derivative and the derivative of
    the half-resolution (every other node) interpolant."""
    from .quadrature import barycentric_weights

    sub = slice(0, len(kappa), 2)
    ks, vs = kappa[sub], values[sub]
    w = barycentric_weights(ks)
    # barycentric interpolation of the subset back onto all nodes
    P = np.zeros((len(kappa), len(ks)))
    for i, x in enumerate(kappa):
        dx = x - ks
        hit = np.where(np.abs(dx) < 1e-14)[0]
        if hit.size:
            P[i, hit[0]] = 1.0
        else:
            c = w / dx
            P[i] = c / np.sum(c)
    coarse = Dmat @ (P @ vs)
    fine = Dmat @ values
    scale = float(np.max(np.abs(fine))) or 1.0
    return float(np.max(np.abs(fine - coarse)) / scale)


_B2_CTX = {}


def _b2_init(ctx):
    _B2_CTX.update(ctx)


def _b2_row(i: int):
    """One row of the trace table: fixed omega_- node, omega_+ nodes j >= j0.

    The omega_- channel scalars are built once per row; each cell computes
    both product-rule slots with shared scalars.  With the mirror symmetry
    of the assembled class enabled, only the upper triangle is computed.
    """
    c = _B2_CTX
    geometry = c["geometry"]
    params = c["params"]
    r, rhat = geometry.pair_fields()
    om = c["om_minus"][i]
    dt = np.float32 if c["single_precision"] else np.float64
    phi_a = _channel_scalars(om, r, rhat, params, dtype=dt)
    j0 = i if c["mirror"] else 0
    row = np.zeros(len(c["om_plus"]) - j0, dtype=complex)
    for k, omp in enumerate(c["om_plus"][j0:]):
        phi_b = _channel_scalars(omp, r, rhat, params, dtype=dt)
        first, second = trace_pair_both(
            om, omp, c["dotA"], c["deltaA"], geometry, params, scalars=(phi_a, phi_b)
        )
        row[k] = complex(2.0 * first.real) if c["use_symmetry"] else first + second
    return i, j0, row


def trace_table(
    deltaA: FirstOrderOperator,
    dotA: FirstOrderOperator,
    grid_w: OmegaGrid,
    grid_wp: OmegaGrid,
    geometry: TraceGeometry,
    params: SpectralKernelParams,
    workers: int = 1,
    use_symmetry: bool = False,
    single_precision: bool = True,
) -> np.ndarray:
    """T[i, j] = tr dQ/dt(omega_-(kappa_i), omega_+(kappa'_j)) on the node grids.

    grid_w parameterizes the window variable (negative branch), grid_wp the
    free variable (positive branch, domain fixed by trace decay).  Work items
    are rows in fixed order; results are deterministic and independent of the
    worker count.
    """
    om_minus = grid_w.omega(-1)
    om_plus = grid_wp.omega(+1)
    if not callable(deltaA.C) and deltaA.is_zero():
        return np.zeros((grid_w.n, grid_wp.n), dtype=complex)
    ctx = {
        "om_minus": om_minus,
        "om_plus": om_plus,
        "deltaA": deltaA,
        "dotA": dotA,
        "geometry": geometry,
        "params": params,
        "use_symmetry": use_symmetry,
        "mirror": False,
        "single_precision": single_precision,
    }
    T = np.zeros((grid_w.n, grid_wp.n), dtype=complex)
    parallel = workers > 1 and not callable(deltaA.C) and not callable(dotA.C)
    if parallel:
        with ProcessPoolExecutor(max_workers=workers, initializer=_b2_init, initargs=(ctx,)) as ex:
            for i, j0, row in ex.map(_b2_row, range(grid_w.n)):
                T[i, j0:] = row
    else:
        _b2_init(ctx)
        for i in range(grid_w.n):
            _, j0, row = _b2_row(i)
            T[i, j0:] = row
    return T


def B2(
    deltaA: FirstOrderOperator,
    dotA: FirstOrderOperator,
    eta: CutoffFunction,
    grid_w: OmegaGrid,
    grid_wp: OmegaGrid,
    geometry: TraceGeometry,
    params: SpectralKernelParams,
    workers: int = 1,
    deriv_budget: float = 0.5,
    use_symmetry: bool = False,
    table: np.ndarray | None = None,
):
    """Second-order rate
    B2 = -II dw dw' d_w(eta(w) tr dQ/dt(w, w')) (g(w') - g(w))/(w' - w)
    with g the window on (-1/eps, -m).  Only the two rectangles where g
    differs contribute: w in the eta-supported window with w' on the opposite
    branch.  The free variable w' runs over grid_wp, whose reach is fixed by
    the decay of the traces (not by the cutoff); everything is evaluated in
    the kappa parametrization, where the chain rule cancels the Jacobian of
    the derivative factor exactly, and d/dkappa is spectral differentiation.
    The second rectangle is filled via the exact conjugate-mirror symmetry
    tr dQ/dt(w, w') = conj tr dQ/dt(-w, -w') of the assembled class.

    Returns (value, diagnostics) with the trace table, the derivative
    resolution estimate and the imaginary residue.
    """
    kap_w, w_w = grid_w.nodes()
    kap_p, w_p = grid_wp.nodes()
    om_m = grid_w.omega(-1)  # window variable, negative branch (R1)
    om_pw = grid_w.omega(+1)  # window variable, positive branch (R2)
    om_pr = grid_wp.omega(+1)  # free variable, positive branch (R1)
    om_mr = grid_wp.omega(-1)  # free variable, negative branch (R2)
    if table is None:
        table = trace_table(
            deltaA, dotA, grid_w, grid_wp, geometry, params, workers, use_symmetry
        )
    T1 = table
    T2 = np.conj(T1)
    Dmat = grid_w.diff_matrix()

    # R1: the omega(kappa) map on the negative branch decreases, flipping the
    # orientation of the derivative integral; R2 is orientation-preserving.
    G1 = Dmat @ (eta(om_m)[:, None] * T1)
    G2 = Dmat @ (eta(om_pw)[:, None] * T2)
    DQ1 = -1.0 / (om_pr[None, :] - om_m[:, None])
    DQ2 = 1.0 / (om_mr[None, :] - om_pw[:, None])
    jac1 = kap_p / om_pr
    jac2 = kap_p / np.abs(om_mr)
    R1 = -np.einsum("i,j,ij,ij,j->", w_w, w_p, G1, DQ1, jac1)
    R2 = np.einsum("i,j,ij,ij,j->", w_w, w_p, G2, DQ2, jac2)
    value = -(R1 + R2)

    scale = float(np.max(np.abs(table))) or 1.0
    imag_residual = float(np.max(np.abs(table.imag)) / scale)
    eta_m = eta(om_m)
    ests = [
        _deriv_estimate(np.ascontiguousarray(eta_m * T1[:, j].real), kap_w, Dmat)
        for j in range(T1.shape[1])
    ]
    est = float(np.median(ests))
    if est > deriv_budget:
        raise GridTooCoarse(
            f"frequency-derivative error estimate {est:.3g} exceeds budget {deriv_budget}"
        )
    diagnostics = {
        "trace_table": T1,
        "omega_minus": om_m,
        "omega_plus": om_pr,
        "deriv_estimate": est,
        "imag_residual": imag_residual,
    }
    return float(np.real(value)), diagnostics
