"""Grid evolution of the regularizing vector field under the locally rigid
dynamics: the full quasi-linear right-hand side built from the cone moments,
its first-order reduction, and an RK4 method-of-lines driver.

The field u = f*dt + lambda*X is stored as (f, X, lambda); the evolving state
is the full four-vector u per node.  Outside the support ball V the field
stays at the rest value u = dt, held fixed on the stencil margin.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .core import ETA, SpatialGrid
from .errors import BlowUp, CFLViolation, ConfigError, MarginViolation, NonTimelikeU
from .families import ScalarFamily, VectorFamily
from .nullcone import tensors_batch

F_MIN_DEFAULT = 0.1
F_MAX_DEFAULT = 10.0


@dataclass(frozen=True)
class FieldDerivativeStencil:
    """Central finite-difference stencil of consistency order 2 or 4."""

    order: int
    h: float

    def __post_init__(self):
        if self.order not in (2, 4):
            raise ConfigError("stencil order must be 2 or 4")

    @property
    def margin(self) -> int:
        return 1 if self.order == 2 else 2

    def diff(self, arr: np.ndarray, axis: int) -> np.ndarray:
        """First derivative along axis; valid on the interior, zero on the margin."""
        out = np.zeros_like(arr)
        sl = [slice(None)] * arr.ndim

        def shifted(k):
            s = sl.copy()
            lo, hi = self.margin + k, arr.shape[axis] - self.margin + k
            s[axis] = slice(lo, hi if hi != 0 else None)
            return arr[tuple(s)]

        interior = sl.copy()
        interior[axis] = slice(self.margin, -self.margin)
        if self.order == 2:
            out[tuple(interior)] = (shifted(1) - shifted(-1)) / (2.0 * self.h)
        else:
            out[tuple(interior)] = (
                -shifted(2) + 8.0 * shifted(1) - 8.0 * shifted(-1) + shifted(-2)
            ) / (12.0 * self.h)
        return out

    def diff2(self, arr: np.ndarray, axis: int) -> np.ndarray:
        """Second derivative along axis, same validity region."""
        out = np.zeros_like(arr)
        sl = [slice(None)] * arr.ndim

        def shifted(k):
            s = sl.copy()
            lo, hi = self.margin + k, arr.shape[axis] - self.margin + k
            s[axis] = slice(lo, hi if hi != 0 else None)
            return arr[tuple(s)]

        interior = sl.copy()
        interior[axis] = slice(self.margin, -self.margin)
        if self.order == 2:
            out[tuple(interior)] = (shifted(1) - 2.0 * shifted(0) + shifted(-1)) / self.h**2
        else:
            out[tuple(interior)] = (
                -shifted(2) + 16.0 * shifted(1) - 30.0 * shifted(0)
                + 16.0 * shifted(-1) - shifted(-2)
            ) / (12.0 * self.h**2)
        return out


@dataclass(frozen=True)
class RegularizingField:
    """Grid-sampled (f, X) data for u = f*dt + lambda*X."""

    grid: SpatialGrid
    f: np.ndarray
    X: np.ndarray
    lam: float
    stencil_order: int = 4

    def __post_init__(self):
        if self.f.shape != (self.grid.N,) * 3 or self.X.shape != (3,) + (self.grid.N,) * 3:
            raise ConfigError("field arrays do not match the grid")
        if np.any(self.f <= 0):
            raise ConfigError("f must be positive everywhere")

    @classmethod
    def from_families(
        cls,
        grid: SpatialGrid,
        lam: float,
        f_family: ScalarFamily,
        x_family: VectorFamily,
        stencil_order: int = 4,
    ) -> "RegularizingField":
        X_, Y_, Z_ = grid.meshgrid()
        ftil = f_family(X_, Y_, Z_, grid.r_V)
        f = 1.0 + lam * ftil
        Xv = x_family(X_, Y_, Z_, grid.r_V)
        return cls(grid=grid, f=f, X=Xv, lam=lam, stencil_order=stencil_order)

    @property
    def stencil(self) -> FieldDerivativeStencil:
        return FieldDerivativeStencil(self.stencil_order, self.grid.h)

    def u_array(self) -> np.ndarray:
        """Four-vector field u = (f, lambda*X), shape (4, N, N, N)."""
        return np.concatenate([self.f[None], self.lam * self.X], axis=0)

    @classmethod
    def from_u_array(cls, grid: SpatialGrid, u: np.ndarray, lam: float, stencil_order: int = 4):
        f = u[0]
        X = u[1:] / lam if lam > 0 else u[1:].copy()
        return cls(grid=grid, f=f, X=X, lam=lam, stencil_order=stencil_order)

    def deviation_norm(self) -> float:
        """Max-norm of u - dt over the grid."""
        u = self.u_array()
        dev = np.abs(u - np.array([1.0, 0, 0, 0])[:, None, None, None])
        return float(np.max(dev))


def _check_interior(field: RegularizingField, node) -> tuple:
    node = tuple(int(i) for i in node)
    mgn = field.stencil.margin
    for i in node:
        if i < mgn or i >= field.grid.N - mgn:
            raise MarginViolation(f"node {node} is inside the stencil margin")
    return node


def _grad_u(u: np.ndarray, stencil: FieldDerivativeStencil) -> np.ndarray:
    """Spatial gradients d_k u^m, shape (3, 4, N, N, N)."""
    return np.stack(
        [np.stack([stencil.diff(u[m], axis=k) for m in range(4)]) for k in range(3)]
    )


def rhs_full_grid(
    u: np.ndarray, stencil: FieldDerivativeStencil, quantize: float | None = None
) -> np.ndarray:
    """Full quasi-linear RHS on the whole grid (zero on the stencil margin).

    du^l/dt = pi(nu-perp)^j_k g_mn [3 u.u I3^{knl} + 2 u^l I2^{kn}
              - 6 u^l u_s I3^{nks}] d_j u^m ;
    only spatial j contribute since the normal projector kills j = 0.

    With `quantize` set, the cone moments are memoized on u rounded to that
    step (deterministic; large win where u is constant, e.g. outside V).
    """
    N = u.shape[1]
    grad = _grad_u(u, stencil)  # (3, 4, N,N,N)
    flat_u = u.reshape(4, -1).T  # (M, 4)
    if np.any(flat_u[:, 0] ** 2 - np.sum(flat_u[:, 1:] ** 2, axis=1) <= 0):
        raise NonTimelikeU("u left the timelike cone on the grid")
    if quantize:
        keys = np.round(flat_u / quantize) * quantize
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        mu, I2b, I3b = tensors_batch(uniq)
        I2b, I3b = I2b[inv], I3b[inv]
    else:
        mu, I2b, I3b = tensors_batch(flat_u)
    usq = flat_u[:, 0] ** 2 - np.sum(flat_u[:, 1:] ** 2, axis=1)
    u_low = flat_u @ ETA
    grad_low = np.einsum("kmxyz,mn->kxyzn", grad, ETA).reshape(3, -1, 4)  # (3, M, 4)

    t1 = 3.0 * usq[:, None] * np.einsum("mknl,kmn->ml", I3b[:, 1:, :, :], grad_low)
    scal2 = np.einsum("mkn,kmn->m", I2b[:, 1:, :], grad_low)
    t3s = np.einsum("mnks,ms,kmn->m", I3b[:, :, 1:, :], u_low, grad_low)
    out = t1 + (2.0 * scal2 - 6.0 * t3s)[:, None] * flat_u
    return out.T.reshape(4, N, N, N)


def rhs_full(field: RegularizingField, node) -> np.ndarray:
    """Full quasi-linear RHS at one grid node."""
    node = _check_interior(field, node)
    u = field.u_array()
    rhs = rhs_full_grid(u, field.stencil)
    return rhs[(slice(None),) + node].copy()


def _rhs_first_order_from_u(u: np.ndarray, stencil: FieldDerivativeStencil) -> np.ndarray:
    """First-order RHS in terms of u = (f, lam*X):
    spatial part -grad(1/f) = grad(f)/f^2, time part (1/f^3)((f/3) div(lam X) + 4 (lam X).grad f).
    """
    f = u[0]
    lamX = u[1:]
    gradf = np.stack([stencil.diff(f, axis=k) for k in range(3)])
    div_lamX = sum(stencil.diff(lamX[k], axis=k) for k in range(3))
    xdotgf = np.einsum("kxyz,kxyz->xyz", lamX, gradf)
    out = np.empty_like(u)
    out[0] = (f / 3.0 * div_lamX + 4.0 * xdotgf) / f**3
    out[1:] = gradf / f**2
    return out


def rhs_first_order_grid(field: RegularizingField) -> np.ndarray:
    """First-order RHS on the grid (zero on the stencil margin)."""
    return _rhs_first_order_from_u(field.u_array(), field.stencil)


def rhs_first_order(field: RegularizingField, node) -> np.ndarray:
    """First-order RHS at one grid node."""
    node = _check_interior(field, node)
    rhs = rhs_first_order_grid(field)
    return rhs[(slice(None),) + node].copy()


def _interior_mask(N: int, margin: int) -> np.ndarray:
    m = np.zeros((N, N, N), dtype=bool)
    m[margin:-margin, margin:-margin, margin:-margin] = True
    return m


def evolve(
    field: RegularizingField,
    t_final: float,
    dt: float,
    rhs: str = "first_order",
    save_every: int = 1,
    f_min: float = F_MIN_DEFAULT,
    f_max: float = F_MAX_DEFAULT,
):
    """Classical RK4 method of lines.  Returns [(t, RegularizingField), ...].

    The margin ring is held at the rest value u = dt; interior nodes evolve.
    Raises CFLViolation if dt > h/2 and BlowUp if f leaves [f_min, f_max].
    """
    if rhs not in ("full", "first_order"):
        raise ConfigError("rhs must be 'full' or 'first_order'")
    h = field.grid.h
    if dt > h / 2.0 + 1e-15:
        raise CFLViolation(f"dt = {dt} violates dt <= h/2 = {h / 2.0}")
    st = field.stencil
    rest = np.array([1.0, 0.0, 0.0, 0.0])[:, None, None, None]
    inter = _interior_mask(field.grid.N, st.margin)[None]

    def deriv(u):
        try:
            if rhs == "full":
                return rhs_full_grid(u, st, quantize=1e-6)
            return _rhs_first_order_from_u(u, st)
        except NonTimelikeU as exc:
            raise BlowUp(str(exc)) from exc

    u = field.u_array()
    n_steps = int(round(t_final / dt))
    snaps = [(0.0, field)]
    t = 0.0
    for step in range(1, n_steps + 1):
        k1 = deriv(u)
        k2 = deriv(u + 0.5 * dt * k1)
        k3 = deriv(u + 0.5 * dt * k2)
        k4 = deriv(u + dt * k3)
        u = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        u = np.where(inter, u, rest)
        t = step * dt
        if np.any(~np.isfinite(u)) or np.any(u[0] < f_min) or np.any(u[0] > f_max):
            raise BlowUp(f"f left [{f_min}, {f_max}] at t = {t}")
        if step % save_every == 0 or step == n_steps:
            snaps.append(
                (t, RegularizingField.from_u_array(field.grid, u, field.lam, field.stencil_order))
            )
    return snaps


def snapshots_to_csv(snaps, path) -> None:
    """One record per node per saved time: t, x, y, z, f, X1, X2, X3."""
    with open(path, "w", newline="") as fh:
        fh.write("# t,x,y,z,f,X1,X2,X3\n")
        writer = csv.writer(fh)
        for t, fld in snaps:
            ax = fld.grid.axis()
            N = fld.grid.N
            for i in range(N):
                for j in range(N):
                    for k in range(N):
                        writer.writerow(
                            [
                                repr(float(t)),
                                repr(float(ax[i])),
                                repr(float(ax[j])),
                                repr(float(ax[k])),
                                repr(float(fld.f[i, j, k])),
                                repr(float(fld.X[0, i, j, k])),
                                repr(float(fld.X[1, i, j, k])),
                                repr(float(fld.X[2, i, j, k])),
                            ]
                        )


def read_snapshots_csv(path):
    """Inverse of snapshots_to_csv; returns list of row tuples."""
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            parts = line.strip().split(",")
            if parts and parts[0]:
                rows.append(tuple(float(p) for p in parts))
    return rows
