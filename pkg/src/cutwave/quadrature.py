"""One-dimensional Gauss-Legendre and Gauss-Lobatto rules on [-1, 1]."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule, exact for degree 2n - 1."""
    if n < 1:
        raise ValueError("need at least one Gauss point")
    x, w = legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


@lru_cache(maxsize=None)
def gauss_lobatto(p: int) -> tuple[np.ndarray, np.ndarray]:
    """p + 1 Gauss-Lobatto points and weights, exact for degree 2p - 1.

    The interior points are the roots of P_p', found with numpy's Legendre
    companion matrix and polished by two Newton steps.
    """
    if p < 1:
        raise ValueError("Gauss-Lobatto rule needs p >= 1")
    c = np.zeros(p + 1)
    c[-1] = 1.0
    if p > 1:
        dc = legendre.legder(c)
        ddc = legendre.legder(dc)
        r = np.sort(legendre.legroots(dc).real)
        for _ in range(2):
            r = r - legendre.legval(r, dc) / legendre.legval(r, ddc)
        # enforce exact symmetry
        r = 0.5 * (r - r[::-1])
    else:
        r = np.empty(0)
    x = np.concatenate([[-1.0], r, [1.0]])
    w = 2.0 / (p * (p + 1) * legendre.legval(x, c) ** 2)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def face_rule(p: int, length: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule with p + 1 points on [0, length].

    Exact for polynomials of degree 2p + 1, which covers products of two
    face traces of degree p.
    """
    if p < 1:
        raise ValueError("face rule needs p >= 1")
    x, w = gauss_legendre(p + 1)
    return 0.5 * length * (x + 1.0), 0.5 * length * w


def mapped_gauss(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss_legendre(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w
