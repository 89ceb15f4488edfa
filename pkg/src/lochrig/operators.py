"""The symmetrized Hamiltonian A, Delta A = A - H, and the time derivative
dA/dt as explicit first-order operators with matrix coefficients.

An operator acts as psi -> C psi + D^alpha d_alpha psi.  The assembly map
u -> A(u) = (1/2){u^0, H} + (i/2){u^mu, d_mu} is linear in u, so Delta A is
the assembly of u - dt and dA/dt is the assembly of du/dt from the
first-order locally rigid dynamical equation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import SpatialGrid, build_gamma_set
from .dynamics import FieldDerivativeStencil, RegularizingField, rhs_first_order_grid

_G = build_gamma_set()
_EYE4 = np.eye(4, dtype=complex)
_G0 = _G.g0
_D_DIRAC = np.stack([-1j * _G0 @ _G[1 + a] for a in range(3)])  # Dirac D^alpha
_C_DIRAC_UNIT = _G0  # times m


@dataclass(frozen=True)
class FirstOrderOperator:
    """First-order operator psi -> C psi + D^alpha d_alpha psi.

    Coefficients are either grid-sampled arrays (shape (N,N,N,4,4) resp.
    (3,N,N,N,4,4)) with nearest-node lookup, or analytic callables of
    position arrays (M,3) -> (M,4,4) / (M,3,4,4).  div_D is the coefficient
    divergence d_alpha D^alpha needed for the integration-by-parts form.
    """

    grid: SpatialGrid | None
    C: np.ndarray | Callable
    D: np.ndarray | Callable
    div_D: np.ndarray | Callable

    def _lookup(self, coeff, points, vec: bool):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if callable(coeff):
            return coeff(points)
        ax = self.grid.axis()
        idx = [np.clip(np.rint((points[:, a] - ax[0]) / self.grid.h).astype(int), 0, self.grid.N - 1)
               for a in range(3)]
        if vec:
            return np.transpose(coeff[:, idx[0], idx[1], idx[2]], (1, 0, 2, 3))
        return coeff[idx[0], idx[1], idx[2]]

    def C_at(self, points) -> np.ndarray:
        """(M, 4, 4) zeroth-order coefficient at the given positions."""
        return self._lookup(self.C, points, vec=False)

    def D_at(self, points) -> np.ndarray:
        """(M, 3, 4, 4) first-order coefficients at the given positions."""
        return self._lookup(self.D, points, vec=True)

    def div_D_at(self, points) -> np.ndarray:
        return self._lookup(self.div_D, points, vec=False)

    def is_zero(self, tol: float = 0.0) -> bool:
        if callable(self.C):
            return False
        return (
            np.max(np.abs(self.C)) <= tol
            and np.max(np.abs(self.D)) <= tol
            and np.max(np.abs(self.div_D)) <= tol
        )

    def max_coeff_outside(self, radius: float) -> float:
        """Largest coefficient magnitude strictly outside the ball of given radius."""
        outside = self.grid.radius() > radius
        return float(
            max(
                np.max(np.abs(self.C[outside])) if outside.any() else 0.0,
                np.max(np.abs(np.moveaxis(self.D, 0, 3)[outside])) if outside.any() else 0.0,
            )
        )


def assemble_first_order(
    grid: SpatialGrid, u0: np.ndarray, uvec: np.ndarray, m: float, stencil_order: int = 4
) -> FirstOrderOperator:
    """Assemble (1/2){u0, H} + (i/2){u^mu, d_mu} into explicit coefficients:

    D^alpha = -i u0 gamma^0 gamma^alpha + i u^alpha Id
    C       = u0 gamma^0 m - (i/2) gamma^0 gamma^alpha (d_alpha u0)
              + (i/2) (div u) Id
    """
    st = FieldDerivativeStencil(stencil_order, grid.h)
    N = grid.N
    gu0 = np.stack([st.diff(u0, axis=a) for a in range(3)])
    div_u = sum(st.diff(uvec[a], axis=a) for a in range(3))

    C = np.zeros((N, N, N, 4, 4), dtype=complex)
    C += u0[..., None, None] * (_G0 * m)
    for a in range(3):
        C += gu0[a][..., None, None] * (-0.5j * (_G0 @ _G[1 + a]))
    C += div_u[..., None, None] * (0.5j * _EYE4)

    D = np.zeros((3, N, N, N, 4, 4), dtype=complex)
    for a in range(3):
        D[a] = u0[..., None, None] * (-1j * _G0 @ _G[1 + a]) + uvec[a][..., None, None] * (
            1j * _EYE4
        )
    div_D = np.zeros((N, N, N, 4, 4), dtype=complex)
    for a in range(3):
        div_D += gu0[a][..., None, None] * (-1j * _G0 @ _G[1 + a])
    div_D += div_u[..., None, None] * (1j * _EYE4)
    return FirstOrderOperator(grid=grid, C=C, D=D, div_D=div_D)


def dirac_operator(grid: SpatialGrid | None, m: float) -> FirstOrderOperator:
    """The Dirac Hamiltonian H = -i gamma^0 gamma^alpha d_alpha + gamma^0 m."""

    def C(points):
        return np.broadcast_to(m * _C_DIRAC_UNIT, (points.shape[0], 4, 4)).copy()

    def D(points):
        return np.broadcast_to(_D_DIRAC, (points.shape[0], 3, 4, 4)).copy()

    def div_D(points):
        return np.zeros((points.shape[0], 4, 4), dtype=complex)

    return FirstOrderOperator(grid=grid, C=C, D=D, div_D=div_D)


def build_A(field: RegularizingField, m: float) -> FirstOrderOperator:
    """Symmetrized Hamiltonian for u = f dt + lambda X on the grid."""
    u = field.u_array()
    return assemble_first_order(field.grid, u[0], u[1:], m, field.stencil_order)


def build_deltaA(field: RegularizingField, m: float) -> FirstOrderOperator:
    """Delta A = A(u) - H = assembly of u - dt (vanishes outside V)."""
    u = field.u_array()
    return assemble_first_order(field.grid, u[0] - 1.0, u[1:], m, field.stencil_order)


def build_dotA(field: RegularizingField, m: float) -> FirstOrderOperator:
    """dA/dt to first order in lambda: the assembly of du/dt with
    du^0/dt = (lam/f^3)((f/3) div X + 4 X.grad f) and du^alpha/dt = -d_alpha(1/f).
    """
    du = rhs_first_order_grid(field)
    return assemble_first_order(field.grid, du[0], du[1:], m, field.stencil_order)


def synthetic_multiplication_operator(
    grid: SpatialGrid, profile: Callable, matrix: np.ndarray
) -> FirstOrderOperator:
    """Synthetic Delta A: multiplication by profile(x) * matrix, D = 0.

    gamma0-hermitian matrices give a symmetric operator; used for the
    strictly-positive-trace check.
    """
    matrix = np.asarray(matrix, dtype=complex)

    def C(points):
        vals = profile(points[:, 0], points[:, 1], points[:, 2])
        return vals[:, None, None] * matrix

    def zero_vec(points):
        return np.zeros((points.shape[0], 3, 4, 4), dtype=complex)

    def zero(points):
        return np.zeros((points.shape[0], 4, 4), dtype=complex)

    return FirstOrderOperator(grid=grid, C=C, D=zero_vec, div_D=zero)


def apply_to_kernel(op: FirstOrderOperator, kernel, side: str = "left"):
    """Compose a first-order operator with an integral kernel.

    kernel: object with value(x, y) -> (4,4), grad_x(x, y) -> (3,4,4) and
    grad_y(x, y) -> (3,4,4) (single points).  Returns a callable (x, y) -> (4,4).

    side='left':          (op K)(x,y) = C(x) K(x,y) + D^a(x) d_{x^a} K(x,y)
    side='right_adjoint': (K op)(x,y) = K(x,y) C(y) - d_{y^a} K(x,y) D^a(y)
                                        - K(x,y) (div D)(y)
    (the right form is the integration-by-parts composition; boundary terms
    vanish for compactly supported coefficients).
    """
    if side not in ("left", "right_adjoint"):
        raise ValueError("side must be 'left' or 'right_adjoint'")

    if side == "left":

        def composed(x, y):
            x = np.asarray(x, dtype=float)
            C = op.C_at(x[None])[0]
            D = op.D_at(x[None])[0]
            out = C @ kernel.value(x, y)
            gx = kernel.grad_x(x, y)
            for a in range(3):
                out = out + D[a] @ gx[a]
            return out

        return composed

    def composed(x, y):
        y = np.asarray(y, dtype=float)
        C = op.C_at(y[None])[0]
        D = op.D_at(y[None])[0]
        dD = op.div_D_at(y[None])[0]
        out = kernel.value(x, y) @ (C - dD)
        gy = kernel.grad_y(x, y)
        for a in range(3):
            out = out - gy[a] @ D[a]
        return out

    return composed


def pairing(grid: SpatialGrid, psi: np.ndarray, phi: np.ndarray) -> complex:
    """Hypersurface scalar product sum_x psi(x)^dag phi(x) h^3 for spinor grids (N,N,N,4)."""
    return complex(np.sum(np.conj(psi) * phi) * grid.h**3)


def apply_operator_grid(op: FirstOrderOperator, psi: np.ndarray, stencil_order: int = 4) -> np.ndarray:
    """(A psi)(x) = C psi + D^a d_a psi on the grid, psi shape (N,N,N,4)."""
    st = FieldDerivativeStencil(stencil_order, op.grid.h)
    out = np.einsum("xyzab,xyzb->xyza", op.C, psi)
    for a in range(3):
        dpsi = np.stack([st.diff(psi[..., b], axis=a) for b in range(4)], axis=-1)
        out += np.einsum("xyzab,xyzb->xyza", op.D[a], dpsi)
    return out


def symmetry_residual(op: FirstOrderOperator, psi: np.ndarray, phi: np.ndarray) -> float:
    """|<psi|A phi> - <A psi|phi>| / max(1, |<psi|A phi>|) on the grid."""
    lhs = pairing(op.grid, psi, apply_operator_grid(op, phi))
    rhs = pairing(op.grid, apply_operator_grid(op, psi), phi)
    return abs(lhs - rhs) / max(1.0, abs(lhs))
