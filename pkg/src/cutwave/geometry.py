"""Level-set projection and quadrature on cut cells.

Cut-cell rules are built by dimension reduction. In a (sub)box where the
level set is monotone along a "height" axis k, the domain {psi < 0} is the
region between the box faces and the graph x_k = root(x_base). The base
interval is split wherever the interface crosses the two faces normal to k,
Gauss points are placed on every base piece, and each vertical line is
integrated up to its root. Boxes without a monotone direction are bisected.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import optimize

from .basis import lagrange_1d
from .grid import INSIDE, OUTSIDE, BackgroundMesh, CutClassification
from .levelset import DiscreteLevelSet, LevelSet, box_sign
from .quadrature import face_rule, gauss_legendre, mapped_gauss

logger = logging.getLogger(__name__)

MAX_DEPTH = 8


class QuadratureError(RuntimeError):
    def __init__(self, cell, message):
        super().__init__(f"cell {cell}: {message}")
        self.cell = cell


@dataclass
class CutCellQuadrature:
    points: np.ndarray
    weights: np.ndarray
    surface_points: np.ndarray
    surface_weights: np.ndarray
    normals: np.ndarray

    @classmethod
    def empty(cls):
        z2 = np.zeros((0, 2))
        z1 = np.zeros(0)
        return cls(z2, z1, z2.copy(), z1.copy(), z2.copy())


def project_levelset(analytic: LevelSet, mesh: BackgroundMesh, p: int) -> DiscreteLevelSet:
    """L2 projection of ``analytic`` onto continuous Q_p over the whole mesh.

    On an uncut tensor grid the mass matrix factors as M_y (x) M_x, so the
    projection reduces to two one-dimensional solves.
    """
    if p < 1:
        raise ValueError("projection needs p >= 1")
    line = lagrange_1d(p)
    nq = p + 3
    gx, gw = gauss_legendre(nq)
    phi_q = line.values(gx)  # (nq, p+1)
    nodes_ref, _ = gauss_legendre(p + 1)
    phi_m = line.values(nodes_ref)
    m_ref = (phi_m.T * gauss_legendre(p + 1)[1]) @ phi_m  # exact for degree 2p

    def one_dim(n_cells, origin):
        N = n_cells * p + 1
        M = np.zeros((N, N))
        L = np.zeros((n_cells * nq, N))
        for e in range(n_cells):
            sl = slice(e * p, e * p + p + 1)
            M[sl, sl] += 0.5 * mesh.h * m_ref
            L[e * nq:(e + 1) * nq, sl] = 0.5 * mesh.h * gw[:, None] * phi_q
        pts = (origin + mesh.h * (np.arange(n_cells)[:, None] + 0.5 * (gx[None, :] + 1.0))).ravel()
        return M, L, pts

    Mx, Lx, xs = one_dim(mesh.nx, mesh.origin[0])
    My, Ly, ys = one_dim(mesh.ny, mesh.origin[1])
    X, Y = np.meshgrid(xs, ys)
    psi = analytic.value(X, Y)
    B = Ly.T @ psi @ Lx
    C = scipy.linalg.solve(My, B, assume_a="pos")
    C = scipy.linalg.solve(Mx, C.T, assume_a="pos").T
    return DiscreteLevelSet(mesh, p, C)


# ----------------------------------------------------------------------------
# one-dimensional root finding
# ----------------------------------------------------------------------------

def segment_roots(f, a: float, b: float, samples: int = 8, xtol: float = 1e-14) -> np.ndarray:
    """All sign changes of the scalar function ``f`` on [a, b].

    ``f`` is vectorised. Sampled local extrema whose value does not cross
    zero are refined with a bounded scalar minimisation, so a thin dip
    between two samples is not missed.
    """
    t = np.linspace(a, b, samples)
    v = np.asarray(f(t), dtype=float)
    extra = []
    for k in range(samples):
        left = v[k - 1] if k > 0 else np.inf
        right = v[k + 1] if k < samples - 1 else np.inf
        lo_t = t[max(k - 1, 0)]
        hi_t = t[min(k + 1, samples - 1)]
        if v[k] > 0 and v[k] <= left and v[k] <= right:
            sgn = 1.0
        elif v[k] < 0 and v[k] >= (v[k - 1] if k > 0 else -np.inf) \
                and v[k] >= (v[k + 1] if k < samples - 1 else -np.inf):
            sgn = -1.0
        else:
            continue
        res = optimize.minimize_scalar(lambda s: sgn * float(f(np.array([s]))[0]),
                                       bounds=(lo_t, hi_t), method="bounded",
                                       options={"xatol": xtol * max(1.0, abs(b - a))})
        if res.fun <= 0:
            extra.append(float(res.x))
    if extra:
        t = np.concatenate([t, extra])
        order = np.argsort(t)
        t = t[order]
        v = np.concatenate([v, np.asarray(f(np.array(extra)), dtype=float)])[order]
    roots = []
    tol = xtol * max(1.0, abs(b - a))
    for k in range(len(t)):
        if v[k] == 0.0:
            roots.append(t[k])
        elif k + 1 < len(t) and v[k] * v[k + 1] < 0:
            roots.append(optimize.brentq(lambda s: float(f(np.array([s]))[0]), t[k], t[k + 1],
                                         xtol=tol, rtol=4 * np.finfo(float).eps))
    roots = np.sort(np.asarray(roots, dtype=float))
    if roots.size > 1:
        roots = roots[np.concatenate([[True], np.diff(roots) > tol])]
    return roots


def _line_roots_vectorized(g, dg, lo, hi, flo, tol):
    """Single root of monotone g on each [lo, hi]; safeguarded Newton."""
    lo = lo.copy()
    hi = hi.copy()
    fhi = g(hi)
    x = lo - flo * (hi - lo) / (fhi - flo)
    x = np.clip(x, lo, hi)
    slo = np.sign(flo)
    for _ in range(100):
        fx = g(x)
        same = np.sign(fx) == slo
        lo = np.where(same, x, lo)
        hi = np.where(same, hi, x)
        d = dg(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - fx / d
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        step = np.abs(xn - x)
        x = np.where(fx == 0.0, x, xn)
        if np.all((step < tol) | (fx == 0.0) | (hi - lo < tol)):
            break
    return x


# ----------------------------------------------------------------------------
# cut-cell rules
# ----------------------------------------------------------------------------

class _Accumulator:
    def __init__(self):
        self.p, self.w, self.sp, self.sw, self.sn = [], [], [], [], []

    def result(self) -> CutCellQuadrature:
        if not self.w:
            vol = (np.zeros((0, 2)), np.zeros(0))
        else:
            vol = (np.concatenate(self.p), np.concatenate(self.w))
        if not self.sw:
            srf = (np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))
        else:
            srf = (np.concatenate(self.sp), np.concatenate(self.sw), np.concatenate(self.sn))
        return CutCellQuadrature(vol[0], vol[1], *srf)


def _tensor_rule(box, n):
    x0, x1, y0, y1 = box
    px, wx = mapped_gauss(x0, x1, n)
    py, wy = mapped_gauss(y0, y1, n)
    X, Y = np.meshgrid(px, py)
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(wy, wx).ravel()


def _build(ls: LevelSet, box, cell, n_in, n_out, depth, acc, cell_id, sign=None):
    if sign is None:
        sign = box_sign(ls, box, cell, samples=n_in + 3)
    if sign < 0:
        pts, w = _tensor_rule(box, n_out)
        acc.p.append(pts)
        acc.w.append(w)
        return
    if sign > 0:
        return
    x0, x1, y0, y1 = box
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    g = np.array([float(v) for v in ls.gradient(cx, cy, cell)])
    if not np.all(np.isfinite(g)):
        g = np.array([1.0, 0.0])
    k = int(np.argmax(np.abs(g)))
    m = n_in + 3
    sx, sy = np.linspace(x0, x1, m), np.linspace(y0, y1, m)
    X, Y = np.meshgrid(sx, sy)
    dk = ls.gradient(X.ravel(), Y.ravel(), cell)[k]
    s = np.sign(g[k]) if g[k] != 0 else 1.0
    monotone = np.all(np.isfinite(dk)) and np.all(s * dk > 0)
    if not monotone:
        if depth >= MAX_DEPTH:
            raise QuadratureError(cell_id, "no monotone direction within the subdivision limit")
        for bx in ((x0, cx, y0, cy), (cx, x1, y0, cy), (x0, cx, cy, y1), (cx, x1, cy, y1)):
            _build(ls, bx, cell, n_in, n_out, depth + 1, acc, cell_id)
        return

    e = 1 - k
    lo_k, hi_k = (x0, x1) if k == 0 else (y0, y1)
    lo_e, hi_e = (x0, x1) if e == 0 else (y0, y1)

    def point(base, height):
        base = np.asarray(base, dtype=float)
        height = np.broadcast_to(np.asarray(height, dtype=float), base.shape)
        return (height, base) if k == 0 else (base, height)

    breaks = [lo_e, hi_e]
    for hk in (lo_k, hi_k):
        breaks.extend(segment_roots(lambda t, hk=hk: ls.value(*point(t, hk), cell),
                                    lo_e, hi_e, samples=m))
    breaks = np.unique(np.clip(breaks, lo_e, hi_e))
    tol = 1e-13 * (hi_k - lo_k)
    keep = np.concatenate([[True], np.diff(breaks) > tol])
    breaks = breaks[keep]
    if breaks[-1] < hi_e:
        breaks[-1] = hi_e

    base_pts, base_w = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        pb, wb = mapped_gauss(a, b, n_out)
        base_pts.append(pb)
        base_w.append(wb)
    xb = np.concatenate(base_pts)
    wb = np.concatenate(base_w)

    f_lo = ls.value(*point(xb, lo_k), cell)
    f_hi = ls.value(*point(xb, hi_k), cell)
    crossing = (f_lo < 0) != (f_hi < 0)
    roots = np.full(xb.shape, np.nan)
    if np.any(crossing):
        xc = xb[crossing]
        roots[crossing] = _line_roots_vectorized(
            lambda t: ls.value(*point(xc, t), cell),
            lambda t: ls.gradient(*point(xc, t), cell)[k],
            np.full(xc.shape, lo_k), np.full(xc.shape, hi_k), f_lo[crossing], tol)

    gi, gwi = gauss_legendre(n_in)
    # volume
    seg_lo = np.where(crossing, np.where(f_lo < 0, lo_k, roots), lo_k)
    seg_hi = np.where(crossing, np.where(f_lo < 0, roots, hi_k), hi_k)
    mid = 0.5 * (lo_k + hi_k)
    inside_full = ~crossing & (ls.value(*point(xb, mid), cell) < 0)
    use = crossing | inside_full
    if np.any(use):
        a, b, wbase, base = seg_lo[use], seg_hi[use], wb[use], xb[use]
        half = 0.5 * (b - a)
        hk = a[:, None] + half[:, None] * (gi[None, :] + 1.0)
        w = (wbase * half)[:, None] * gwi[None, :]
        bb = np.broadcast_to(base[:, None], hk.shape)
        px, py = point(bb.ravel(), hk.ravel())
        acc.p.append(np.column_stack([px, py]))
        acc.w.append(w.ravel())
    # surface
    if np.any(crossing):
        xc, r, wc = xb[crossing], roots[crossing], wb[crossing]
        px, py = point(xc, r)
        gx, gy = ls.gradient(px, py, cell)
        gn = np.hypot(gx, gy)
        gk = gx if k == 0 else gy
        acc.sp.append(np.column_stack([px, py]))
        acc.sw.append(wc * gn / np.abs(gk))
        acc.sn.append(np.column_stack([gx / gn, gy / gn]))


def _points_per_direction(target_degree: int) -> tuple[int, int]:
    n_in = target_degree // 2 + 1
    # the integrand in the base direction picks up the degree of the height
    # integral, so it gets twice the points
    n_out = target_degree + 1
    return n_in, n_out


def cell_quadrature(levelset: LevelSet, mesh: BackgroundMesh, cell: int,
                    target_degree: int, tag=None) -> CutCellQuadrature:
    """Volume and surface rules for {psi < 0} in ``cell``."""
    box = mesh.cell_box(cell)
    ij = tuple(int(v) for v in mesh.cell_ij(cell))
    n_in, n_out = _points_per_direction(target_degree)
    acc = _Accumulator()
    if tag == INSIDE:
        pts, w = _tensor_rule(box, n_in)
        acc.p.append(pts)
        acc.w.append(w)
    elif tag != OUTSIDE:
        _build(levelset, box, ij, n_in, n_out, 0, acc, cell)
    return acc.result()


def volume_quadrature(levelset: LevelSet, mesh: BackgroundMesh, cell: int,
                      target_degree: int, tag=None):
    """(points, weights) on {psi < 0} within ``cell``."""
    q = cell_quadrature(levelset, mesh, cell, target_degree, tag)
    return q.points, q.weights


def surface_quadrature(levelset: LevelSet, mesh: BackgroundMesh, cell: int, target_degree: int):
    """(points, weights, outward unit normals) on {psi = 0} within ``cell``."""
    q = cell_quadrature(levelset, mesh, cell, target_degree)
    return q.surface_points, q.surface_weights, q.normals


def cut_quadratures(levelset: LevelSet, classification: CutClassification,
                    target_degree: int) -> dict[int, CutCellQuadrature]:
    """Rules for every CUT cell, keyed by cell index."""
    mesh = classification.mesh
    out = {}
    for c in classification.cut_cells:
        out[int(c)] = cell_quadrature(levelset, mesh, int(c), target_degree)
    if out:
        npts = [len(q.weights) for q in out.values()]
        logger.debug("cut rules: %d cells, %d-%d volume points, min weight %.3e",
                     len(out), min(npts), max(npts),
                     min((q.weights.min() for q in out.values() if q.weights.size), default=0.0))
    return out


def face_segment_rule(levelset: LevelSet, mesh: BackgroundMesh, cell: int, axis: int,
                      side: int, n: int):
    """Gauss rule on the part of a cell face where psi < 0.

    The face is the one normal to ``axis`` on ``side`` (0 low, 1 high).
    Returns points (m, 2) and weights (m,).
    """
    x0, x1, y0, y1 = mesh.cell_box(cell)
    ij = tuple(int(v) for v in mesh.cell_ij(cell))
    if axis == 0:
        fixed = x1 if side else x0
        lo, hi = y0, y1

        def line(t):
            return np.full_like(t, fixed), t
    else:
        fixed = y1 if side else y0
        lo, hi = x0, x1

        def line(t):
            return t, np.full_like(t, fixed)

    def f(t):
        return levelset.value(*line(np.asarray(t, dtype=float)), ij)

    breaks = np.concatenate([[lo], segment_roots(f, lo, hi, samples=n + 3), [hi]])
    pts, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b - a <= 0 or f(np.array([0.5 * (a + b)]))[0] >= 0:
            continue
        t, w = mapped_gauss(a, b, n)
        px, py = line(t)
        pts.append(np.column_stack([px, py]))
        ws.append(w)
    if not ws:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(ws)


__all__ = [
    "CutCellQuadrature", "QuadratureError", "project_levelset", "segment_roots",
    "cell_quadrature", "volume_quadrature", "surface_quadrature", "cut_quadratures",
    "face_rule", "face_segment_rule",
]
