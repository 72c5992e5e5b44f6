"""Assembly of the stabilised mass and stiffness matrices and the load vector.

Every assembler works in the raw numbering of ``FESpace`` and condenses the
result with the prolongation P (``P.T @ K @ P``), so hanging-node constraints
are eliminated symmetrically.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import tensor_basis
from .geometry import CutCellQuadrature, cut_quadratures, face_segment_rule
from .grid import CUT, Face
from .levelset import LevelSet
from .quadrature import gauss_legendre, gauss_lobatto
from .space import FESpace

logger = logging.getLogger(__name__)

SIDES = ("left", "right", "bottom", "top")


def stabilization_weights(p_boundary: int) -> np.ndarray:
    """Weights w_k = k! sqrt(2k + 1) / p^(2k + 1), k = 1..p."""
    if p_boundary < 1:
        raise ValueError("p must be >= 1")
    k = np.arange(1, p_boundary + 1)
    fact = np.array([math.factorial(int(i)) for i in k], dtype=float)
    return fact * np.sqrt(2 * k + 1) / float(p_boundary) ** (2 * k + 1)


def unit_weights(p_boundary: int) -> np.ndarray:
    """Weights that turn the scaled penalty into sum_k h^(2k+1) <[d^k u], [d^k v]>."""
    k = np.arange(1, p_boundary + 1)
    fact = np.array([math.factorial(int(i)) for i in k], dtype=float)
    return (2 * k + 1) * fact**2


@dataclass
class StabilizationConfig:
    gamma_m: float
    gamma_a: float
    gamma_d: float
    weight_mode: str = "scaled"

    @classmethod
    def defaults(cls, p: int, weight_mode: str = "scaled") -> "StabilizationConfig":
        return cls(0.25 * math.sqrt(3.0), 0.5 * math.sqrt(3.0), 5.0 * p * p, weight_mode)

    def weights(self, p_boundary: int) -> np.ndarray:
        if self.weight_mode == "scaled":
            return stabilization_weights(p_boundary)
        if self.weight_mode == "raw":
            return unit_weights(p_boundary)
        raise ValueError(f"unknown weight mode {self.weight_mode!r}")


@dataclass(frozen=True)
class BoundaryConditions:
    """Which parts of the boundary carry Dirichlet data.

    ``levelset`` is "dirichlet" or "neumann" for the immersed boundary;
    ``box_dirichlet`` lists mesh sides (left/right/bottom/top) whose faces
    are part of the domain boundary with Dirichlet data. Remaining mesh
    sides are natural (Neumann) boundaries.
    """

    levelset: str = "dirichlet"
    box_dirichlet: tuple[str, ...] = ()


@dataclass(eq=False)
class DomainQuadrature:
    """Quadrature data for one discretisation.

    ``cut`` holds the generated rules on every cut cell; ``box_faces`` holds
    rules on mesh-boundary faces of active cells, keyed by side name.
    """

    levelset: LevelSet
    degree: int
    cut: dict[int, CutCellQuadrature]
    box_faces: dict[str, list[tuple[int, np.ndarray, np.ndarray]]] = field(default_factory=dict)


def build_domain_quadrature(levelset: LevelSet, classification, degree: int) -> DomainQuadrature:
    cut = cut_quadratures(levelset, classification, degree)
    mesh = classification.mesh
    n = degree // 2 + 1
    box = {s: [] for s in SIDES}
    for f in classification.boundary_faces():
        cell = f.plus if f.plus >= 0 else f.minus
        side_idx = 1 if f.plus < 0 else 0
        name = ("left", "right") if f.axis == 0 else ("bottom", "top")
        pts, w = face_segment_rule(levelset, mesh, cell, f.axis, side_idx, n)
        if w.size:
            box[name[side_idx]].append((cell, pts, w))
    return DomainQuadrature(levelset, degree, cut, box)


_SIDE_NORMAL = {"left": (-1.0, 0.0), "right": (1.0, 0.0), "bottom": (0.0, -1.0), "top": (0.0, 1.0)}


class _COO:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add_blocks(self, dofs: np.ndarray, blocks: np.ndarray):
        """dofs (ncell, n), blocks (ncell, n, n) or (n, n) broadcast."""
        dofs = np.atleast_2d(dofs)
        n = dofs.shape[1]
        blocks = np.broadcast_to(blocks, (dofs.shape[0], n, n))
        self.r.append(np.repeat(dofs, n, axis=1).ravel())
        self.c.append(np.tile(dofs, (1, n)).ravel())
        self.v.append(blocks.reshape(dofs.shape[0], -1).ravel())

    def matrix(self, n: int) -> sp.csr_matrix:
        if not self.v:
            return sp.csr_matrix((n, n))
        m = sp.coo_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
                          shape=(n, n)).tocsr()
        m.sum_duplicates()
        return m


def condense(space: FESpace, raw: sp.spmatrix) -> sp.csr_matrix:
    P = space.prolongation
    if space.constraints.slaves:
        return (P.T @ raw @ P).tocsr()
    return sp.csr_matrix(raw)


def _cell_eval(space: FESpace, cell: int, points: np.ndarray):
    q = space.order_of(cell)
    basis = tensor_basis(q)
    ref = space.reference_coords(cell, points)
    vals = basis.values(ref[:, 0], ref[:, 1])
    grads = basis.gradients(ref[:, 0], ref[:, 1]) * (2.0 / space.mesh.h)
    return vals, grads


def _reference_matrices(q: int, h: float, mass_rule: str):
    basis = tensor_basis(q)
    if mass_rule == "lobatto":
        x, w = gauss_lobatto(q)
    elif mass_rule == "gauss":
        x, w = gauss_legendre(q + 1)
    else:
        raise ValueError(f"unknown mass rule {mass_rule!r}")
    X, Y = np.meshgrid(x, x)
    W = np.outer(w, w).ravel() * (0.5 * h) ** 2
    phi = basis.values(X.ravel(), Y.ravel())
    mass = (phi.T * W) @ phi
    if mass_rule == "lobatto":
        mass = np.diag(np.diag(mass))  # exactly diagonal: nodes coincide with points
    xg, wg = gauss_legendre(q + 1)
    X, Y = np.meshgrid(xg, xg)
    Wg = np.outer(wg, wg).ravel() * (0.5 * h) ** 2
    g = basis.gradients(X.ravel(), Y.ravel()) * (2.0 / h)
    stiff = np.einsum("dpi,p,dpj->ij", g, Wg, g)
    return mass, stiff


def assemble_cut_mass(space: FESpace, quad: DomainQuadrature, mass_rule: str = "lobatto",
                      condensed: bool = True) -> sp.csr_matrix:
    """Mass matrix (phi_i, phi_j) over the physical domain.

    Uncut cells use Gauss-Lobatto points (diagonal blocks) unless
    ``mass_rule="gauss"``; cut cells use their generated rules.
    """
    coo = _COO()
    tags = space.classification.tags
    h = space.mesh.h
    for q, cells, dofs in space.groups():
        inside = tags[cells] != CUT
        mref, _ = _reference_matrices(q, h, mass_rule)
        if np.any(inside):
            coo.add_blocks(dofs[inside], mref)
        for c, d in zip(cells[~inside], dofs[~inside]):
            rule = quad.cut[int(c)]
            if rule.weights.size == 0:
                continue
            vals, _ = _cell_eval(space, int(c), rule.points)
            coo.add_blocks(d[None, :], ((vals.T * rule.weights) @ vals)[None])
    raw = coo.matrix(space.n_raw)
    return condense(space, raw) if condensed else raw


def _nitsche_block(vals, grads, normals, w, gamma_d, h):
    dn = np.einsum("dpi,pd->pi", grads, normals)
    sym = (dn.T * w) @ vals
    return -(sym + sym.T) + (gamma_d / h) * ((vals.T * w) @ vals)


def assemble_nitsche_stiffness(space: FESpace, quad: DomainQuadrature, gamma_d: float,
                               boundary: BoundaryConditions, condensed: bool = True) -> sp.csr_matrix:
    """(grad u, grad v) plus symmetric Nitsche terms on the Dirichlet boundary."""
    coo = _COO()
    tags = space.classification.tags
    h = space.mesh.h
    for q, cells, dofs in space.groups():
        inside = tags[cells] != CUT
        _, kref = _reference_matrices(q, h, "gauss")
        if np.any(inside):
            coo.add_blocks(dofs[inside], kref)
        for c, d in zip(cells[~inside], dofs[~inside]):
            rule = quad.cut[int(c)]
            block = np.zeros((len(d), len(d)))
            if rule.weights.size:
                _, grads = _cell_eval(space, int(c), rule.points)
                block += np.einsum("dpi,p,dpj->ij", grads, rule.weights, grads)
            if boundary.levelset == "dirichlet" and rule.surface_weights.size:
                vals, grads = _cell_eval(space, int(c), rule.surface_points)
                block += _nitsche_block(vals, grads, rule.normals, rule.surface_weights, gamma_d, h)
            coo.add_blocks(d[None, :], block[None])
    for side in boundary.box_dirichlet:
        normal = np.array(_SIDE_NORMAL[side])
        for cell, pts, w in quad.box_faces.get(side, []):
            vals, grads = _cell_eval(space, cell, pts)
            normals = np.broadcast_to(normal, pts.shape)
            coo.add_blocks(space.dofs_of(cell)[None, :],
                           _nitsche_block(vals, grads, normals, w, gamma_d, h)[None])
    raw = coo.matrix(space.n_raw)
    return condense(space, raw) if condensed else raw


def _face_matrix(axis: int, q_minus: int, q_plus: int, h: float, weights, kmax: int):
    """Local penalty matrix on one face, dofs ordered (plus cell, minus cell)."""
    bp, bm = tensor_basis(q_plus), tensor_basis(q_minus)
    t, wt = gauss_legendre(max(q_minus, q_plus) + 1)
    wt = wt * 0.5 * h
    one = np.ones_like(t)
    if axis == 0:
        ref_p, ref_m = (-one, t), (one, t)
    else:
        ref_p, ref_m = (t, -one), (t, one)
    n = bp.n_local + bm.n_local
    out = np.zeros((n, n))
    for k in range(1, kmax + 1):
        scale = (2.0 / h) ** k
        B = np.hstack([bp.directional(*ref_p, k, axis) * scale,
                       -bm.directional(*ref_m, k, axis) * scale])
        coef = weights[k - 1] * h ** (2 * k + 1) / ((2 * k + 1) * math.factorial(k) ** 2)
        out += coef * (B.T * wt) @ B
    return out


def assemble_ghost_penalty(space: FESpace, faces: list[Face], weights=None,
                           config: StabilizationConfig | None = None,
                           condensed: bool = True) -> sp.csr_matrix:
    """Penalty on jumps of normal derivatives of order 1..p over ``faces``.

    On each face k runs to the lower of the two cell orders. ``weights``
    is an explicit vector (w_1, w_2, ...); by default the weights follow
    ``config.weight_mode`` with p taken as that lower order.
    """
    config = config or StabilizationConfig.defaults(space.p)
    stab = {(f.minus, f.plus) for f in space.classification.stabilized_faces}
    coo = _COO()
    groups: dict[tuple[int, int, int], list[Face]] = {}
    for f in faces:
        if (f.minus, f.plus) not in stab:
            raise ValueError(f"face {f} is not a stabilised face")
        key = (f.axis, space.order_of(f.minus), space.order_of(f.plus))
        groups.setdefault(key, []).append(f)
    h = space.mesh.h
    for (axis, qm, qp), fs in sorted(groups.items()):
        kmax = min(qm, qp)
        w = np.asarray(weights, dtype=float) if weights is not None else config.weights(kmax)
        if len(w) < kmax:
            raise ValueError("not enough stabilisation weights")
        local = _face_matrix(axis, qm, qp, h, w, kmax)
        dofs = np.array([np.concatenate([space.dofs_of(f.plus), space.dofs_of(f.minus)]) for f in fs])
        coo.add_blocks(dofs, local)
    raw = coo.matrix(space.n_raw)
    return condense(space, raw) if condensed else raw


@dataclass(eq=False)
class BilinearSystem:
    mass_cut: sp.csr_matrix
    stiffness_nitsche: sp.csr_matrix
    ghost_penalty: sp.csr_matrix
    M: sp.csr_matrix
    A: sp.csr_matrix
    config: StabilizationConfig
    h: float


def combine(mass_cut, stiffness_nitsche, ghost_penalty, config: StabilizationConfig, h: float):
    """M = mass + gamma_M J,  A = stiffness + gamma_A h^-2 J."""
    shapes = {mass_cut.shape, stiffness_nitsche.shape, ghost_penalty.shape}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {shapes}")
    M = (mass_cut + config.gamma_m * ghost_penalty).tocsr()
    A = (stiffness_nitsche + (config.gamma_a / h**2) * ghost_penalty).tocsr()
    return M, A


def assemble_system(space: FESpace, quad: DomainQuadrature, config: StabilizationConfig,
                    boundary: BoundaryConditions, mass_rule: str = "lobatto") -> BilinearSystem:
    mass = assemble_cut_mass(space, quad, mass_rule)
    stiff = assemble_nitsche_stiffness(space, quad, config.gamma_d, boundary)
    J = assemble_ghost_penalty(space, space.classification.stabilized_faces, config=config)
    M, A = combine(mass, stiff, J, config, space.mesh.h)
    logger.debug("assembled system: %d dofs, nnz(M)=%d, nnz(A)=%d", M.shape[0], M.nnz, A.nnz)
    return BilinearSystem(mass, stiff, J, M, A, config, space.mesh.h)


class LoadAssembler:
    """Precomputed sampling operators for the right-hand side.

    F(t) = (f, v) + <g_D, (gamma_D / h) v - dv/dn>_{Gamma_D} + <g_N, v>_{Gamma_N},
    returned in the free numbering. Data callables take (x, y, t).
    """

    def __init__(self, space: FESpace, quad: DomainQuadrature, gamma_d: float,
                 boundary: BoundaryConditions, volume_rule: str = "gauss"):
        self.space = space
        self.quad = quad
        self.gamma_d = gamma_d
        self.boundary = boundary
        self.volume_rule = volume_rule
        self._volume = {}
        h = space.mesh.h
        dpts, drows = [], []
        npts, nrows = [], []
        for c, rule in quad.cut.items():
            if not rule.surface_weights.size:
                continue
            vals, grads = _cell_eval(space, c, rule.surface_points)
            dofs = space.dofs_of(c)
            if boundary.levelset == "dirichlet":
                dn = np.einsum("dpi,pd->pi", grads, rule.normals)
                dpts.append(rule.surface_points)
                drows.append((dofs, ((gamma_d / h) * vals - dn) * rule.surface_weights[:, None]))
            else:
                npts.append(rule.surface_points)
                nrows.append((dofs, vals * rule.surface_weights[:, None]))
        for side, items in quad.box_faces.items():
            normal = np.array(_SIDE_NORMAL[side])
            for cell, pts, w in items:
                vals, grads = _cell_eval(space, cell, pts)
                dofs = space.dofs_of(cell)
                if side in boundary.box_dirichlet:
                    dn = grads[0] * normal[0] + grads[1] * normal[1]
                    dpts.append(pts)
                    drows.append((dofs, ((gamma_d / h) * vals - dn) * w[:, None]))
                else:
                    npts.append(pts)
                    nrows.append((dofs, vals * w[:, None]))
        self.dirichlet_points, self.B_dirichlet = self._stack(dpts, drows)
        self.neumann_points, self.B_neumann = self._stack(npts, nrows)

    def _stack(self, pts, rows):
        n = self.space.n_raw
        if not pts:
            return np.zeros((0, 2)), sp.csr_matrix((0, self.space.n_dofs))
        r, c, v = [], [], []
        offset = 0
        for dofs, block in rows:
            m = block.shape[0]
            r.append(np.repeat(np.arange(offset, offset + m), len(dofs)))
            c.append(np.tile(dofs, m))
            v.append(block.ravel())
            offset += m
        B = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                          shape=(offset, n))
        return np.concatenate(pts), (B @ self.space.prolongation).tocsr()

    def _volume_operator(self, rule: str | None = None):
        rule = rule or self.volume_rule
        if rule not in self._volume:
            space = self.space
            tags = space.classification.tags
            pts, rows = [], []
            for q, cells, dofs in space.groups():
                basis = tensor_basis(q)
                if rule == "lobatto":
                    x, w = gauss_lobatto(q)
                else:
                    x, w = gauss_legendre(q + 2)
                X, Y = np.meshgrid(x, x)
                W = np.outer(w, w).ravel() * (0.5 * space.mesh.h) ** 2
                phi = basis.values(X.ravel(), Y.ravel())
                ref = np.column_stack([X.ravel(), Y.ravel()])
                for c, d in zip(cells, dofs):
                    if tags[c] == CUT:
                        cq = self.quad.cut[int(c)]
                        if not cq.weights.size:
                            continue
                        vals, _ = _cell_eval(space, int(c), cq.points)
                        pts.append(cq.points)
                        rows.append((d, vals * cq.weights[:, None]))
                    else:
                        x0 = space.mesh.cell_origin(c)
                        pts.append(x0 + 0.5 * space.mesh.h * (ref + 1.0))
                        rows.append((d, phi * W[:, None]))
            self._volume[rule] = self._stack(pts, rows)
        return self._volume[rule]

    def volume_term(self, func, t: float = 0.0, rule: str | None = None) -> np.ndarray:
        """(func(., t), phi_i) with uncut cells integrated by ``rule``
        ("gauss" or "lobatto"; default ``volume_rule``)."""
        pts, B = self._volume_operator(rule)
        return B.T @ np.asarray(func(pts[:, 0], pts[:, 1], t), dtype=float)

    def __call__(self, t: float = 0.0, f=None, g_d=None, g_n=None) -> np.ndarray:
        out = np.zeros(self.space.n_dofs)
        if f is not None:
            out += self.volume_term(f, t)
        if g_d is not None and self.dirichlet_points.size:
            P = self.dirichlet_points
            out += self.B_dirichlet.T @ np.asarray(g_d(P[:, 0], P[:, 1], t), dtype=float)
        if g_n is not None and self.neumann_points.size:
            P = self.neumann_points
            out += self.B_neumann.T @ np.asarray(g_n(P[:, 0], P[:, 1], t), dtype=float)
        return out


def assemble_load(space: FESpace, quad: DomainQuadrature, f, g_d, g_n, gamma_d: float,
                  t: float = 0.0, boundary: BoundaryConditions | None = None) -> np.ndarray:
    """Load vector F(t); ``f``, ``g_d``, ``g_n`` are callables (x, y, t) or None."""
    boundary = boundary or BoundaryConditions()
    return LoadAssembler(space, quad, gamma_d, boundary)(t, f, g_d, g_n)

