"""Continuous Q_p spaces on the active cells, full and reduced-order variants.

Raw degrees of freedom are the Gauss-Lobatto nodes of every active cell,
shared between cells where the nodes coincide (vertices always; face nodes
when both cells have the same order). In the reduced space a face between an
order p - 1 cell and an order p cell carries hanging nodes: the order-p
side's face-interior nodes are slaved to the low-order trace.

Numbering is vertices, then face-interior nodes, then cell-interior nodes,
each block lexicographic (y, then x).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import lagrange_1d, tensor_basis
from .grid import CUT, BackgroundMesh, CutClassification, Face

_VERTEX, _FACE, _CELL = 0, 1, 2


@dataclass
class ConstraintSet:
    """Slave raw dof -> list of (master raw dof, coefficient)."""

    slaves: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    def enforce(self, u_raw: np.ndarray) -> np.ndarray:
        """Overwrite slave values with the combination of their masters."""
        out = np.array(u_raw, dtype=float, copy=True)
        for s, terms in self.slaves.items():
            out[s] = sum(c * out[m] for m, c in terms)
        return out

    def is_acyclic(self) -> bool:
        return not any(m in self.slaves for terms in self.slaves.values() for m, _ in terms)


@dataclass(eq=False)
class FESpace:
    mesh: BackgroundMesh
    classification: CutClassification
    p: int
    variant: str
    cells: np.ndarray            # active cells, ascending
    orders: np.ndarray           # polynomial order per active cell
    cell_dofs: list              # raw dof indices per active cell (local ordering)
    n_raw: int
    constraints: ConstraintSet
    prolongation: sp.csr_matrix  # raw = prolongation @ free
    raw_keys: np.ndarray = field(repr=False, default=None)
    free_rows: np.ndarray = field(repr=False, default=None)
    _cell_pos: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._cell_pos = {int(c): k for k, c in enumerate(self.cells)}

    @property
    def n_dofs(self) -> int:
        return self.prolongation.shape[1]

    def order_of(self, cell: int) -> int:
        return int(self.orders[self._cell_pos[int(cell)]])

    def dofs_of(self, cell: int) -> np.ndarray:
        return self.cell_dofs[self._cell_pos[int(cell)]]

    def position(self, cell: int) -> int:
        return self._cell_pos[int(cell)]

    def has_cell(self, cell: int) -> bool:
        return int(cell) in self._cell_pos

    def groups(self):
        """Yield (order, cells, dof matrix) for cells sharing an order."""
        for q in np.unique(self.orders):
            sel = np.flatnonzero(self.orders == q)
            yield int(q), self.cells[sel], np.array([self.cell_dofs[k] for k in sel])

    def to_raw(self, coefficients: np.ndarray) -> np.ndarray:
        return self.prolongation @ coefficients

    # -- evaluation ---------------------------------------------------------

    def reference_coords(self, cell: int, points: np.ndarray) -> np.ndarray:
        x0 = self.mesh.cell_origin(cell)
        return 2.0 * (np.asarray(points) - x0) / self.mesh.h - 1.0

    def evaluate(self, coefficients, points, cells=None, derivative=None):
        """Evaluate a space member at physical points.

        ``derivative`` is None (values), ``"grad"`` (returns (n, 2)), or a
        pair ``(k, axis)`` for the pure k-th derivative along ``axis``.
        Points are assigned to ``cells`` if given, else located on the grid.
        """
        raw = self.to_raw(coefficients)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if cells is None:
            cells = locate(self.mesh, points)
        cells = np.asarray(cells)
        out_shape = (len(points), 2) if derivative == "grad" else (len(points),)
        out = np.zeros(out_shape)
        h = self.mesh.h
        for c in np.unique(cells):
            sel = np.flatnonzero(cells == c)
            if not self.has_cell(c):
                raise KeyError(f"cell {c} is not active in this space")
            q = self.order_of(c)
            basis = tensor_basis(q)
            ref = self.reference_coords(c, points[sel])
            coef = raw[self.dofs_of(c)]
            if derivative is None:
                out[sel] = basis.values(ref[:, 0], ref[:, 1]) @ coef
            elif derivative == "grad":
                g = basis.gradients(ref[:, 0], ref[:, 1]) * (2.0 / h)
                out[sel] = (g @ coef).T
            else:
                k, axis = derivative
                d = basis.directional(ref[:, 0], ref[:, 1], k, axis) * (2.0 / h) ** k
                out[sel] = d @ coef
        return out

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x, y)``, returned in free numbering."""
        raw = np.zeros(self.n_raw)
        for k, c in enumerate(self.cells):
            q = int(self.orders[k])
            nodes = lagrange_1d(q).nodes
            x0 = self.mesh.cell_origin(c)
            xs = x0[0] + 0.5 * self.mesh.h * (nodes + 1.0)
            ys = x0[1] + 0.5 * self.mesh.h * (nodes + 1.0)
            X, Y = np.meshgrid(xs, ys)
            raw[self.cell_dofs[k]] = np.asarray(func(X.ravel(), Y.ravel()), dtype=float)
        return raw[self.free_rows]


def locate(mesh: BackgroundMesh, points: np.ndarray) -> np.ndarray:
    h = mesh.h
    i = np.clip(np.floor((points[:, 0] - mesh.origin[0]) / h).astype(int), 0, mesh.nx - 1)
    j = np.clip(np.floor((points[:, 1] - mesh.origin[1]) / h).astype(int), 0, mesh.ny - 1)
    return mesh.cell_index(i, j)


def _local_keys(i, j, q, cell):
    """Key rows (cat, Y, X, axis, q, sub) for the local nodes of one cell."""
    keys = np.zeros(((q + 1) ** 2, 6), dtype=np.int64)
    a = np.tile(np.arange(q + 1), q + 1)
    b = np.repeat(np.arange(q + 1), q + 1)
    ea = (a == 0) | (a == q)
    eb = (b == 0) | (b == q)
    v = ea & eb
    keys[v] = np.column_stack([np.full(v.sum(), _VERTEX), j + b[v] // q, i + a[v] // q,
                               np.zeros((v.sum(), 3), dtype=np.int64)])
    fx = ea & ~eb   # on a face normal to x
    keys[fx] = np.column_stack([np.full(fx.sum(), _FACE), np.full(fx.sum(), j), i + a[fx] // q,
                                np.zeros(fx.sum(), dtype=np.int64), np.full(fx.sum(), q), b[fx]])
    fy = eb & ~ea
    keys[fy] = np.column_stack([np.full(fy.sum(), _FACE), j + b[fy] // q, np.full(fy.sum(), i),
                                np.ones(fy.sum(), dtype=np.int64), np.full(fy.sum(), q), a[fy]])
    c = ~ea & ~eb
    keys[c] = np.column_stack([np.full(c.sum(), _CELL), np.full(c.sum(), j), np.full(c.sum(), i),
                               np.zeros(c.sum(), dtype=np.int64), np.full(c.sum(), q),
                               b[c] * (q + 1) + a[c]])
    return keys


def reduced_orders(classification: CutClassification, p: int) -> np.ndarray:
    """Per-cell order for the reduced space: p - 1 on cut cells and their face neighbours."""
    mesh = classification.mesh
    tags = classification.tags
    low = tags == CUT
    cut = np.flatnonzero(tags == CUT)
    for c in cut:
        for axis in (0, 1):
            for side in (-1, 1):
                nb = mesh.neighbor(int(c), axis, side)
                if nb >= 0:
                    low[nb] = True
    return np.where(low, p - 1, p)


def build_space(mesh: BackgroundMesh, classification: CutClassification, p: int,
                variant: str = "full") -> FESpace:
    """Continuous finite element space on the active cells."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if variant not in ("full", "reduced"):
        raise ValueError(f"unknown space variant {variant!r}")
    if variant == "reduced" and p < 2:
        raise ValueError("the reduced space needs p >= 2")
    cells = classification.active_cells
    if variant == "full":
        orders = np.full(len(cells), p, dtype=int)
    else:
        orders = reduced_orders(classification, p)[cells]
    ii, jj = mesh.cell_ij(cells)
    key_blocks = [_local_keys(int(i), int(j), int(q), int(c))
                  for i, j, q, c in zip(ii, jj, orders, cells)]
    all_keys = np.concatenate(key_blocks) if key_blocks else np.zeros((0, 6), dtype=np.int64)
    uniq, inverse = np.unique(all_keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    cell_dofs = []
    start = 0
    for blk in key_blocks:
        cell_dofs.append(inverse[start:start + len(blk)])
        start += len(blk)
    n_raw = len(uniq)

    constraints = ConstraintSet()
    if variant == "reduced":
        _hanging_constraints(mesh, cells, orders, cell_dofs, constraints)
    slaves = np.array(sorted(constraints.slaves), dtype=int)
    is_free = np.ones(n_raw, dtype=bool)
    is_free[slaves] = False
    free_rows = np.flatnonzero(is_free)
    col_of = -np.ones(n_raw, dtype=int)
    col_of[free_rows] = np.arange(len(free_rows))
    rows = list(free_rows)
    cols = list(range(len(free_rows)))
    vals = [1.0] * len(free_rows)
    for s, terms in constraints.slaves.items():
        for m, c in terms:
            rows.append(s)
            cols.append(col_of[m])
            vals.append(c)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n_raw, len(free_rows)))
    return FESpace(mesh, classification, p, variant, cells, orders, cell_dofs, n_raw,
                   constraints, P, uniq, free_rows)


def _hanging_constraints(mesh, cells, orders, cell_dofs, constraints):
    pos = {int(c): k for k, c in enumerate(cells)}
    for k, c in enumerate(cells):
        q = int(orders[k])
        for axis in (0, 1):
            nb = mesh.neighbor(int(c), axis, 1)
            if nb < 0 or nb not in pos:
                continue
            kn = pos[nb]
            qn = int(orders[kn])
            if q == qn:
                continue
            # (low cell, its side), (high cell, its side): side 1 = high face of that cell
            if q < qn:
                low, lside, high, hside = k, 1, kn, 0
            else:
                low, lside, high, hside = kn, 0, k, 1
            ql, qh = int(orders[low]), int(orders[high])
            lo_ids = _face_local(ql, axis, lside)
            hi_ids = _face_local(qh, axis, hside)
            lo_dofs = cell_dofs[low][lo_ids]
            hi_dofs = cell_dofs[high][hi_ids]
            # low trace interpolated at the high-order face nodes
            coeff = lagrange_1d(ql).values(lagrange_1d(qh).nodes)  # (qh+1, ql+1)
            for t in range(1, qh):
                terms = [(int(lo_dofs[s]), float(coeff[t, s]))
                         for s in range(ql + 1) if abs(coeff[t, s]) > 1e-15]
                constraints.slaves[int(hi_dofs[t])] = terms


def _face_local(q: int, axis: int, side: int) -> np.ndarray:
    """Local node indices on a face, ordered along the tangent."""
    t = np.arange(q + 1)
    edge = q if side else 0
    if axis == 0:
        return t * (q + 1) + edge
    return edge * (q + 1) + t


def jump_of_normal_derivative(space: FESpace, face: Face, k: int, coefficients):
    """Return a callable t -> [d_n^k v] on the face.

    ``t`` is the physical tangential coordinate. The normal is +e_axis, so
    the jump is the plus-cell trace minus the minus-cell trace.
    """
    if face.minus < 0 or face.plus < 0 or not (space.has_cell(face.minus)
                                               and space.has_cell(face.plus)):
        raise ValueError("face is not interior to the active mesh")
    if k > min(space.order_of(face.minus), space.order_of(face.plus)):
        raise ValueError("derivative order exceeds the order of an adjacent cell")
    x0, x1, y0, y1 = space.mesh.cell_box(face.plus)

    def jump(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if face.axis == 0:
            pts = np.column_stack([np.full_like(t, x0), t])
        else:
            pts = np.column_stack([t, np.full_like(t, y0)])
        d = (k, face.axis)
        plus = space.evaluate(coefficients, pts, np.full(len(t), face.plus), d)
        minus = space.evaluate(coefficients, pts, np.full(len(t), face.minus), d)
        return plus - minus

    return jump
