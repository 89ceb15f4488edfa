"""Quadrature helpers: sphere product rules, Gauss-Legendre panels, graded
panel sets for near-singular integrands, and barycentric differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SphereRule:
    """Product rule on S^2: Gauss-Legendre in cos(theta) x uniform in phi.

    nodes: (M, 3) unit vectors; weights sum to 4*pi.
    """

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def product(cls, n_theta: int = 48, n_phi: int | None = None) -> "SphereRule":
        if n_phi is None:
            n_phi = 2 * n_theta
        v, wv = np.polynomial.legendre.leggauss(n_theta)
        phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
        wphi = 2.0 * np.pi / n_phi
        V, PHI = np.meshgrid(v, phi, indexing="ij")
        st = np.sqrt(1.0 - V**2)
        nodes = np.stack([st * np.cos(PHI), st * np.sin(PHI), V], axis=-1).reshape(-1, 3)
        weights = np.broadcast_to(wv[:, None] * wphi, V.shape).reshape(-1).copy()
        return cls(nodes, weights)

    @property
    def zeta(self) -> np.ndarray:
        """Null directions zeta(n) = (1, n), shape (M, 4)."""
        ones = np.ones((self.nodes.shape[0], 1))
        return np.concatenate([ones, self.nodes], axis=1)


def gauss_legendre(a: float, b: float, n: int):
    """GL nodes/weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def gauss_panels(edges, n: int):
    """GL rule on consecutive panels given by `edges`."""
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(a, b, n)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def graded_panels(a: float, b: float, c: float, finest: float, n: int):
    """GL panels on [a, b] geometrically refined toward an interior point c.

    Panel widths halve toward c until `finest`; c must lie in (a, b).
    The point c itself is never a node (GL nodes are interior).
    """
    edges = [a]
    left = c - a
    spans = []
    w = left / 2.0
    while w > finest:
        spans.append(w)
        w /= 2.0
    pos = a
    for s in spans:
        pos += s
        edges.append(pos)
    edges.append(c)
    right_edges = [c]
    spans = []
    w = (b - c) / 2.0
    while w > finest:
        spans.append(w)
        w /= 2.0
    pos = b
    rev = [b]
    for s in spans:
        pos -= s
        rev.append(pos)
    right_edges += rev[::-1]
    edges = np.array(edges + right_edges[1:])
    return gauss_panels(edges, n)


def barycentric_weights(x: np.ndarray) -> np.ndarray:
    n = len(x)
    w = np.ones(n)
    for i in range(n):
        w[i] = 1.0 / np.prod(x[i] - np.delete(x, i))
    return w


def differentiation_matrix(x: np.ndarray) -> np.ndarray:
    """Spectral differentiation matrix for the polynomial interpolant on nodes x."""
    w = barycentric_weights(x)
    n = len(x)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = (w[j] / w[i]) / (x[i] - x[j])
    np.fill_diagonal(D, -np.sum(D, axis=1))
    return D
