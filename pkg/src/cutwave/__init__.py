"""Cut finite elements for the scalar wave equation on Cartesian grids."""

__version__ = "0.1.0"

from .grid import BackgroundMesh, CellTag, CutClassification, Face, build_mesh, classify_cells
from .levelset import Circle, Constant, DiscreteLevelSet, HalfPlane, LevelSet, Star
from .geometry import CutCellQuadrature, QuadratureError, cell_quadrature, project_levelset
from .space import FESpace, build_space
from .forms import (BoundaryConditions, StabilizationConfig, assemble_ghost_penalty,
                    assemble_system, build_domain_quadrature, stabilization_weights)
from .spectra import Factorization, cfl_number, condition_number, extremal_eigenvalues
from .dynamics import WaveState, energy, integrate, project_initial, rk4_step

__all__ = [
    "BackgroundMesh", "CellTag", "CutClassification", "Face", "build_mesh", "classify_cells",
    "Circle", "Constant", "DiscreteLevelSet", "HalfPlane", "LevelSet", "Star",
    "CutCellQuadrature", "QuadratureError", "cell_quadrature", "project_levelset",
    "FESpace", "build_space",
    "BoundaryConditions", "StabilizationConfig", "assemble_ghost_penalty", "assemble_system",
    "build_domain_quadrature", "stabilization_weights",
    "Factorization", "cfl_number", "condition_number", "extremal_eigenvalues",
    "WaveState", "energy", "integrate", "project_initial", "rk4_step",
]
