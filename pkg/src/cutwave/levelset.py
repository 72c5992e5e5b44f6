"""Level-set descriptions of the physical domain.

Sign convention: psi < 0 inside the domain, psi = 0 on its boundary.
All evaluators are vectorised over coordinate arrays. The optional ``cell``
argument, a pair of integer arrays ``(i, j)``, tells piecewise level sets which
background cell's polynomial to use for points sitting on cell faces;
analytic level sets ignore it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .basis import lagrange_1d


class LevelSet:
    def value(self, x, y, cell=None) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x, y, cell=None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def __call__(self, x, y, cell=None):
        return self.value(x, y, cell)

    def __neg__(self) -> "LevelSet":
        return Negated(self)


@dataclass(frozen=True)
class Negated(LevelSet):
    base: LevelSet

    def value(self, x, y, cell=None):
        return -self.base.value(x, y, cell)

    def gradient(self, x, y, cell=None):
        gx, gy = self.base.gradient(x, y, cell)
        return -gx, -gy


@dataclass(frozen=True)
class Circle(LevelSet):
    """Disk of given radius: psi = |x - center| - radius."""

    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def value(self, x, y, cell=None):
        return np.hypot(np.asarray(x) - self.center[0], np.asarray(y) - self.center[1]) - self.radius

    def gradient(self, x, y, cell=None):
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        r = np.hypot(dx, dy)
        with np.errstate(invalid="ignore", divide="ignore"):
            return dx / r, dy / r


@dataclass(frozen=True)
class Star(LevelSet):
    """Exterior of the star r < R + R0 sin(n theta).

    psi = R + R0 sin(n theta) - r, negative outside the star.
    """

    radius: float = 0.5
    amplitude: float = 0.1
    lobes: int = 5
    center: tuple[float, float] = (0.0, 0.0)

    def rho(self, theta):
        return self.radius + self.amplitude * np.sin(self.lobes * theta)

    def value(self, x, y, cell=None):
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        return self.rho(np.arctan2(dy, dx)) - np.hypot(dx, dy)

    def gradient(self, x, y, cell=None):
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        r2 = dx * dx + dy * dy
        r = np.sqrt(r2)
        c = self.amplitude * self.lobes * np.cos(self.lobes * np.arctan2(dy, dx))
        with np.errstate(invalid="ignore", divide="ignore"):
            return -c * dy / r2 - dx / r, c * dx / r2 - dy / r


@dataclass(frozen=True)
class HalfPlane(LevelSet):
    """psi = sign * (x_axis - offset)."""

    axis: int = 0
    offset: float = 0.0
    sign: float = 1.0

    def value(self, x, y, cell=None):
        c = np.asarray(x if self.axis == 0 else y, dtype=float)
        return self.sign * (c - self.offset)

    def gradient(self, x, y, cell=None):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        g = np.full(shape, float(self.sign))
        z = np.zeros(shape)
        return (g, z) if self.axis == 0 else (z, g)


@dataclass(frozen=True)
class Constant(LevelSet):
    """Uniform level set; value -1 makes every cell interior."""

    level: float = -1.0

    def value(self, x, y, cell=None):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(self.level))

    def gradient(self, x, y, cell=None):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return np.zeros(shape), np.zeros(shape)


@dataclass(eq=False)
class DiscreteLevelSet(LevelSet):
    """Continuous piecewise Q_p function on a full background mesh.

    ``coefficients`` has shape (ny * p + 1, nx * p + 1) and holds nodal values
    at the Gauss-Lobatto lattice; row index runs along y.
    """

    mesh: object
    p: int
    coefficients: np.ndarray
    _line: object = field(init=False, repr=False)

    def __post_init__(self):
        nx, ny = self.mesh.n_cells
        expected = (ny * self.p + 1, nx * self.p + 1)
        if self.coefficients.shape != expected:
            raise ValueError(f"coefficient lattice must be {expected}")
        self._line = lagrange_1d(self.p)

    def _locate(self, x, y, cell):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        x = np.broadcast_to(x, shape).ravel()
        y = np.broadcast_to(y, shape).ravel()
        h = self.mesh.h
        ox, oy = self.mesh.origin
        nx, ny = self.mesh.n_cells
        if cell is None:
            i = np.clip(np.floor((x - ox) / h).astype(int), 0, nx - 1)
            j = np.clip(np.floor((y - oy) / h).astype(int), 0, ny - 1)
        else:
            i = np.broadcast_to(np.asarray(cell[0], dtype=int), shape).ravel()
            j = np.broadcast_to(np.asarray(cell[1], dtype=int), shape).ravel()
        xi = 2.0 * ((x - ox) / h - i) - 1.0
        eta = 2.0 * ((y - oy) / h - j) - 1.0
        p = self.p
        a = np.arange(p + 1)
        block = self.coefficients[(j * p)[:, None, None] + a[None, :, None],
                                  (i * p)[:, None, None] + a[None, None, :]]
        return shape, xi, eta, block

    def value(self, x, y, cell=None):
        shape, xi, eta, block = self._locate(x, y, cell)
        lx = self._line.values(xi)
        ly = self._line.values(eta)
        return np.einsum("nb,nba,na->n", ly, block, lx).reshape(shape)

    def gradient(self, x, y, cell=None):
        shape, xi, eta, block = self._locate(x, y, cell)
        lx, ly = self._line.values(xi), self._line.values(eta)
        dx, dy = self._line.derivatives(xi, 1), self._line.derivatives(eta, 1)
        s = 2.0 / self.mesh.h
        gx = s * np.einsum("nb,nba,na->n", ly, block, dx)
        gy = s * np.einsum("nb,nba,na->n", dy, block, lx)
        return gx.reshape(shape), gy.reshape(shape)


def evaluate(levelset: LevelSet, point) -> float:
    return float(levelset.value(point[0], point[1]))


def evaluate_gradient(levelset: LevelSet, point) -> np.ndarray:
    """Gradient at a single point; raises where it vanishes or is undefined."""
    g = np.array([float(v) for v in levelset.gradient(point[0], point[1])])
    if not np.all(np.isfinite(g)) or np.hypot(*g) == 0.0:
        raise ValueError(f"level-set gradient vanishes at {tuple(point)}")
    return g


def box_sign(levelset: LevelSet, box, cell=None, samples: int = 4) -> int:
    """Classify the box (x0, x1, y0, y1) as -1 (inside), +1 (outside) or 0 (cut).

    Signs are sampled on a ``samples`` x ``samples`` tensor grid including
    the corners. When all samples agree, the extreme value is refined by a
    bounded local optimisation started from the closest sample, so thin
    slivers between sample points are still detected.
    """
    x0, x1, y0, y1 = box
    sx = np.linspace(x0, x1, samples)
    sy = np.linspace(y0, y1, samples)
    X, Y = np.meshgrid(sx, sy)
    vals = levelset.value(X.ravel(), Y.ravel(), cell)
    if np.any(vals < 0) and np.any(vals > 0):
        return 0
    if np.all(vals == 0):
        return 0
    sign = 1.0 if np.any(vals > 0) else -1.0
    # Lipschitz screen: far from zero relative to the sample spacing -> decided
    gx, gy = levelset.gradient(X.ravel(), Y.ravel(), cell)
    gmax = np.nanmax(np.hypot(gx, gy)) if np.any(np.isfinite(gx)) else 0.0
    spacing = np.hypot(x1 - x0, y1 - y0) / (samples - 1)
    k = int(np.argmin(sign * vals))
    if sign * vals[k] > 2.0 * gmax * spacing:
        return int(sign)
    if vals[k] == 0.0:
        return 0

    def f(z):
        return sign * float(levelset.value(z[0], z[1], cell))

    def g(z):
        gx_, gy_ = levelset.gradient(z[0], z[1], cell)
        return sign * np.array([float(gx_), float(gy_)])

    res = optimize.minimize(f, np.array([X.ravel()[k], Y.ravel()[k]]), jac=g,
                            method="L-BFGS-B", bounds=[(x0, x1), (y0, y1)],
                            options={"ftol": 1e-15, "gtol": 1e-14})
    return 0 if res.fun <= 0.0 else int(sign)
