"""Tensor-product Lagrange bases on Gauss-Lobatto nodes.

Reference element is [-1, 1]^2. Local node (a, b) has index b * (p + 1) + a,
so the x index runs fastest.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .quadrature import gauss_lobatto


def gauss_lobatto_nodes(p: int) -> np.ndarray:
    """The p + 1 Gauss-Lobatto nodes on [-1, 1], ascending."""
    return np.array(gauss_lobatto(p)[0])


class LagrangeBasis1D:
    """Lagrange polynomials through the Gauss-Lobatto nodes of order p.

    Values use the barycentric formula. Derivatives of order k come from
    the nodal differentiation matrix: l_i^(k)(x) = sum_j l_j(x) (D^k)_{ji}.
    """

    def __init__(self, p: int):
        if p < 1:
            raise ValueError("polynomial order must be >= 1")
        self.p = p
        self.nodes = gauss_lobatto_nodes(p)
        x = self.nodes
        diff = x[:, None] - x[None, :]
        np.fill_diagonal(diff, 1.0)
        self.bary = 1.0 / diff.prod(axis=1)
        # D[j, m] = l_m'(x_j)
        D = (self.bary[None, :] / self.bary[:, None]) / diff
        np.fill_diagonal(D, 0.0)
        np.fill_diagonal(D, -D.sum(axis=1))
        self.diff_matrix = D
        self._dpow = [np.eye(p + 1)]
        for _ in range(p):
            self._dpow.append(self._dpow[-1] @ D)

    def values(self, xi) -> np.ndarray:
        """Array (npts, p + 1) of l_i(xi)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        d = xi[:, None] - self.nodes[None, :]
        exact = d == 0.0
        d = np.where(exact, 1.0, d)
        t = self.bary[None, :] / d
        out = t / t.sum(axis=1, keepdims=True)
        hit = exact.any(axis=1)
        if hit.any():
            out[hit] = exact[hit].astype(float)
        return out

    def derivatives(self, xi, k: int) -> np.ndarray:
        """Array (npts, p + 1) of the k-th derivative on the reference interval."""
        if k < 0:
            raise ValueError("derivative order must be non-negative")
        if k > self.p:
            return np.zeros((np.size(xi), self.p + 1))
        return self.values(xi) @ self._dpow[k]

    def all_derivatives(self, xi, kmax: int) -> np.ndarray:
        """Array (kmax + 1, npts, p + 1)."""
        v = self.values(xi)
        out = np.zeros((kmax + 1,) + v.shape)
        for k in range(min(kmax, self.p) + 1):
            out[k] = v @ self._dpow[k]
        return out


@lru_cache(maxsize=None)
def lagrange_1d(p: int) -> LagrangeBasis1D:
    return LagrangeBasis1D(p)


class TensorBasis:
    """Q_p basis on the reference square."""

    def __init__(self, p: int):
        self.p = p
        self.line = lagrange_1d(p)
        self.nodes = self.line.nodes
        self.n_local = (p + 1) ** 2

    def _combine(self, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
        # fx, fy: (npts, p+1) -> (npts, (p+1)^2), index b*(p+1)+a
        return (fy[:, :, None] * fx[:, None, :]).reshape(fx.shape[0], -1)

    def values(self, xi, eta) -> np.ndarray:
        return self._combine(self.line.values(xi), self.line.values(eta))

    def gradients(self, xi, eta) -> np.ndarray:
        """Reference gradients, array (2, npts, n_local)."""
        vx, vy = self.line.values(xi), self.line.values(eta)
        dx, dy = self.line.derivatives(xi, 1), self.line.derivatives(eta, 1)
        return np.stack([self._combine(dx, vy), self._combine(vx, dy)])

    def directional(self, xi, eta, k: int, axis: int) -> np.ndarray:
        """Pure reference derivative d^k / d xi_axis^k, array (npts, n_local)."""
        if axis == 0:
            return self._combine(self.line.derivatives(xi, k), self.line.values(eta))
        return self._combine(self.line.values(xi), self.line.derivatives(eta, k))


@lru_cache(maxsize=None)
def tensor_basis(p: int) -> TensorBasis:
    return TensorBasis(p)


def shape_eval(basis: TensorBasis, point, max_deriv: int = 1, h: float = 2.0):
    """Evaluate a physical cell's shape functions at reference points.

    ``point`` is an (npts, 2) array of reference coordinates in [-1, 1]^2 and
    ``h`` the physical side length, so derivatives carry the factor (2/h)^k.

    Returns ``(values, gradients, pure)`` where ``pure[k][j]`` holds the k-th
    derivative along axis j for k = 0..max_deriv.
    """
    if max_deriv > basis.p:
        raise ValueError(f"derivative order {max_deriv} exceeds p = {basis.p}")
    point = np.atleast_2d(np.asarray(point, dtype=float))
    xi, eta = point[:, 0], point[:, 1]
    scale = 2.0 / h
    values = basis.values(xi, eta)
    grads = basis.gradients(xi, eta) * scale
    pure = [
        [basis.directional(xi, eta, k, j) * scale**k for j in (0, 1)]
        for k in range(max_deriv + 1)
    ]
    return values, grads, pure
