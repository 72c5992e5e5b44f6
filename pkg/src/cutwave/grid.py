"""Cartesian background mesh and cut classification.

Cells are numbered lexicographically, ``c = j * nx + i`` with i along x.
Faces normal to x come first (``(nx + 1) * ny`` of them), then faces normal
to y. A face stores the cell on its negative side and on its positive side;
-1 marks the outside of the mesh.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .levelset import LevelSet, box_sign

logger = logging.getLogger(__name__)


class CellTag(IntEnum):
    INSIDE = 0
    CUT = 1
    OUTSIDE = 2


INSIDE, CUT, OUTSIDE = CellTag.INSIDE, CellTag.CUT, CellTag.OUTSIDE


@dataclass(frozen=True)
class Face:
    """Face between ``minus`` and ``plus`` with normal along ``axis``.

    ``plus`` lies on the positive side of the axis. The unit normal used for
    jumps is +e_axis.
    """

    minus: int
    plus: int
    axis: int
    index: int = -1


@dataclass(frozen=True, eq=False)
class BackgroundMesh:
    origin: np.ndarray
    extent: np.ndarray
    h: float
    n_cells: tuple[int, int]

    @property
    def nx(self) -> int:
        return self.n_cells[0]

    @property
    def ny(self) -> int:
        return self.n_cells[1]

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def cell_index(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def cell_ij(self, c):
        c = np.asarray(c)
        return c % self.nx, c // self.nx

    def cell_box(self, c) -> tuple[float, float, float, float]:
        i, j = self.cell_ij(c)
        x0 = self.origin[0] + i * self.h
        y0 = self.origin[1] + j * self.h
        return float(x0), float(x0 + self.h), float(y0), float(y0 + self.h)

    def cell_origin(self, c) -> np.ndarray:
        i, j = self.cell_ij(c)
        return np.stack([self.origin[0] + i * self.h, self.origin[1] + j * self.h], axis=-1)

    @property
    def n_faces(self) -> int:
        return (self.nx + 1) * self.ny + self.nx * (self.ny + 1)

    def faces(self) -> list[Face]:
        """All faces, boundary ones included, in the documented order."""
        nx, ny = self.n_cells
        out = []
        k = 0
        for j in range(ny):
            for i in range(nx + 1):
                minus = self.cell_index(i - 1, j) if i > 0 else -1
                plus = self.cell_index(i, j) if i < nx else -1
                out.append(Face(int(minus), int(plus), 0, k))
                k += 1
        for j in range(ny + 1):
            for i in range(nx):
                minus = self.cell_index(i, j - 1) if j > 0 else -1
                plus = self.cell_index(i, j) if j < ny else -1
                out.append(Face(int(minus), int(plus), 1, k))
                k += 1
        return out

    def neighbor(self, c: int, axis: int, side: int) -> int:
        """Neighbour across the face on ``side`` (-1 or +1) of ``axis``; -1 if none."""
        i, j = self.cell_ij(c)
        if axis == 0:
            i = i + side
        else:
            j = j + side
        if 0 <= i < self.nx and 0 <= j < self.ny:
            return int(self.cell_index(i, j))
        return -1


def build_mesh(origin, extent, h: float) -> BackgroundMesh:
    """Axis-aligned grid of square cells of side ``h``."""
    origin = np.asarray(origin, dtype=float)
    extent = np.asarray(extent, dtype=float)
    if h <= 0 or np.any(extent <= 0):
        raise ValueError("extent and h must be positive")
    ratio = extent / h
    n = np.rint(ratio).astype(int)
    if np.any(np.abs(ratio - n) > 1e-9 * ratio) or np.any(n < 1):
        raise ValueError(f"extent {tuple(extent)} is not an integer multiple of h={h}")
    return BackgroundMesh(origin, extent, float(h), (int(n[0]), int(n[1])))


@dataclass(eq=False)
class CutClassification:
    mesh: BackgroundMesh
    tags: np.ndarray
    stabilized_faces: list[Face]
    warnings: list[str] = field(default_factory=list)

    @property
    def active_cells(self) -> np.ndarray:
        return np.flatnonzero(self.tags != OUTSIDE)

    @property
    def cut_cells(self) -> np.ndarray:
        return np.flatnonzero(self.tags == CUT)

    @property
    def inside_cells(self) -> np.ndarray:
        return np.flatnonzero(self.tags == INSIDE)

    def is_active(self, c) -> np.ndarray:
        c = np.asarray(c)
        return (c >= 0) & (self.tags[np.where(c >= 0, c, 0)] != OUTSIDE)

    def interior_faces(self) -> list[Face]:
        """Faces whose two cells are both active."""
        act = self.tags != OUTSIDE
        return [f for f in self.mesh.faces()
                if f.minus >= 0 and f.plus >= 0 and act[f.minus] and act[f.plus]]

    def boundary_faces(self) -> list[Face]:
        """Faces of active cells lying on the outer boundary of the mesh."""
        act = self.tags != OUTSIDE
        out = []
        for f in self.mesh.faces():
            if f.minus < 0 and act[f.plus]:
                out.append(f)
            elif f.plus < 0 and act[f.minus]:
                out.append(f)
        return out


def classify_cells(mesh: BackgroundMesh, levelset: LevelSet, p: int = 1) -> CutClassification:
    """Tag cells INSIDE/CUT/OUTSIDE from the sign of the level set.

    Each cell is sampled on a (p + 3) x (p + 3) grid including corners; any
    sign change makes it CUT. Uniform-sign cells whose extreme sample is
    close to zero get a local optimisation check (see ``box_sign``).
    """
    m = p + 3
    s = np.linspace(0.0, 1.0, m)
    cells = np.arange(mesh.size)
    i, j = mesh.cell_ij(cells)
    x0 = mesh.origin[0] + i * mesh.h
    y0 = mesh.origin[1] + j * mesh.h
    X = x0[:, None, None] + mesh.h * s[None, None, :]
    Y = y0[:, None, None] + mesh.h * s[None, :, None]
    X, Y = np.broadcast_arrays(X, Y)
    I = np.broadcast_to(i[:, None, None], X.shape)
    J = np.broadcast_to(j[:, None, None], X.shape)
    vals = levelset.value(X.ravel(), Y.ravel(), (I.ravel(), J.ravel())).reshape(mesh.size, -1)
    neg = np.any(vals < 0, axis=1)
    pos = np.any(vals > 0, axis=1)
    tags = np.full(mesh.size, OUTSIDE, dtype=np.int8)
    tags[neg & ~pos] = INSIDE
    tags[neg & pos] = CUT
    warnings = []
    zero = ~neg & ~pos
    for c in np.flatnonzero(zero):
        tags[c] = CUT
        warnings.append(f"cell {c}: level set vanishes at every sample point")

    # refine uniform-sign cells that come close to the zero level
    gx, gy = levelset.gradient(X.ravel(), Y.ravel(), (I.ravel(), J.ravel()))
    gnorm = np.hypot(gx, gy).reshape(mesh.size, -1)
    gnorm = np.where(np.isfinite(gnorm), gnorm, 0.0)
    closest = np.min(np.abs(vals), axis=1)
    spacing = np.sqrt(2.0) * mesh.h / (m - 1)
    suspect = (~zero) & (tags != CUT) & (closest <= 2.0 * gnorm.max(axis=1) * spacing)
    for c in np.flatnonzero(suspect):
        if box_sign(levelset, mesh.cell_box(c), mesh.cell_ij(c), samples=m) == 0:
            tags[c] = CUT

    faces = _stabilized_faces(mesh, tags)
    for w in warnings:
        logger.warning(w)
    cls = CutClassification(mesh, tags, faces, warnings)
    logger.debug("classified %d cells: %d inside, %d cut, %d faces stabilized",
                 mesh.size, np.sum(tags == INSIDE), np.sum(tags == CUT), len(faces))
    return cls


def _stabilized_faces(mesh: BackgroundMesh, tags: np.ndarray) -> list[Face]:
    act = tags != OUTSIDE
    cut = tags == CUT
    return [f for f in mesh.faces()
            if f.minus >= 0 and f.plus >= 0 and act[f.minus] and act[f.plus]
            and (cut[f.minus] or cut[f.plus])]


def stabilized_faces(classification: CutClassification) -> list[Face]:
    """Interior faces touching a cut cell; each face listed once."""
    return _stabilized_faces(classification.mesh, classification.tags)
