"""Benchmark problems, error norms, convergence rates and spectral sweeps."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.special

from .dynamics import IntegrationResult, WaveState, default_time_step, integrate, project_initial
from .forms import (BilinearSystem, BoundaryConditions, DomainQuadrature, LoadAssembler,
                    StabilizationConfig, assemble_system, build_domain_quadrature)
from .geometry import project_levelset
from .grid import CUT, build_mesh, classify_cells
from .levelset import Circle, Constant, LevelSet, Star
from .quadrature import gauss_legendre
from .space import FESpace, build_space, locate
from .spectra import (Factorization, cfl_number, extremal_eigenvalues, growth_function)
from .basis import tensor_basis

logger = logging.getLogger(__name__)

BOX_ORIGIN = (-1.5, -1.5)
BOX_EXTENT = (3.0, 3.0)
INNER_H = (0.12, 0.06, 0.03, 0.015)
OUTER_H = (0.15, 0.075, 0.0375)
PULSE_CENTER = 3.0
PULSE_WIDTH = 0.25
OUTER_FINAL_TIME = 4.0


# -- Bessel functions --------------------------------------------------------

def bessel_j0(x):
    """Bessel function of the first kind, order 0."""
    return scipy.special.j0(x)


def bessel_j0_zero(n: int) -> float:
    """n-th positive zero of J0 (n >= 1)."""
    if n < 1:
        raise ValueError("mode index starts at 1")
    return float(scipy.special.jn_zeros(0, n)[-1])


@dataclass(frozen=True)
class BesselMode:
    """Radial standing wave J0(alpha_n r / R) cos(omega_n t) on a disk of radius R."""

    n: int = 1
    radius: float = 1.0

    @property
    def alpha(self) -> float:
        return bessel_j0_zero(self.n)

    @property
    def omega(self) -> float:
        return self.alpha / self.radius

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    def value(self, x, y, t=0.0):
        r = np.hypot(x, y)
        return bessel_j0(self.alpha * r / self.radius) * math.cos(self.omega * t)

    def gradient(self, x, y, t=0.0):
        r = np.hypot(x, y)
        k = self.alpha / self.radius
        dr = -scipy.special.j1(k * r) * k * math.cos(self.omega * t)
        with np.errstate(invalid="ignore", divide="ignore"):
            ux = np.where(r > 0, dr * x / r, 0.0)
            uy = np.where(r > 0, dr * y / r, 0.0)
        return np.column_stack([ux, uy])

    def at(self, t: float) -> "_Frozen":
        return _Frozen(self, t)


@dataclass(frozen=True)
class _Frozen:
    target: object
    t: float

    def value(self, x, y):
        return self.target.value(x, y, self.t)

    def gradient(self, x, y):
        return self.target.gradient(x, y, self.t)


# -- error rows and rates ----------------------------------------------------

@dataclass
class ErrorRow:
    h: float
    e_L2: float
    rate_L2: float | None = None
    e_H1: float = math.nan
    rate_H1: float | None = None
    e_boundary: float = math.nan
    rate_boundary: float | None = None


ERROR_COLUMNS = [f.name for f in fields(ErrorRow)]


def convergence_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    """log(e_i / e_{i+1}) / log(h_i / h_{i+1})."""
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def with_rates(rows: list[ErrorRow]) -> list[ErrorRow]:
    """Rows sorted by decreasing h with rates filled in against the previous row."""
    rows = sorted(rows, key=lambda r: -r.h)
    out = []
    for k, r in enumerate(rows):
        r = ErrorRow(**asdict(r))
        if k == 0:
            r.rate_L2 = r.rate_H1 = r.rate_boundary = None
        else:
            prev = rows[k - 1]
            r.rate_L2 = convergence_rate(prev.e_L2, r.e_L2, prev.h, r.h)
            r.rate_H1 = convergence_rate(prev.e_H1, r.e_H1, prev.h, r.h)
            r.rate_boundary = convergence_rate(prev.e_boundary, r.e_boundary, prev.h, r.h)
        out.append(r)
    return out


def write_error_csv(path, rows: list[ErrorRow]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ERROR_COLUMNS)
        for r in rows:
            w.writerow(["" if getattr(r, c) is None else repr(float(getattr(r, c)))
                        for c in ERROR_COLUMNS])
    return path


def read_error_csv(path) -> list[ErrorRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [ErrorRow(**{k: (None if v == "" else float(v)) for k, v in r.items()}) for r in rows]


# -- discretisation ----------------------------------------------------------

@dataclass(eq=False)
class Discretization:
    p: int
    h: float
    levelset: LevelSet
    space: FESpace
    quad: DomainQuadrature
    system: BilinearSystem
    boundary: BoundaryConditions
    config: StabilizationConfig
    loader: LoadAssembler
    _fact: Factorization | None = field(default=None, repr=False)

    @property
    def mesh(self):
        return self.space.mesh

    @property
    def fact(self) -> Factorization:
        if self._fact is None:
            self._fact = Factorization(self.system.M)
        return self._fact


def discretize(domain: LevelSet, p: int, h: float, *, variant: str = "full",
               geometry: str = "projected", boundary: BoundaryConditions | None = None,
               config: StabilizationConfig | None = None, mass_rule: str = "lobatto",
               origin=BOX_ORIGIN, extent=BOX_EXTENT) -> Discretization:
    """Mesh, classify, build the space and assemble the stabilised system.

    With ``geometry="projected"`` the level set is replaced by its
    projection onto continuous Q_p functions on the background mesh.
    """
    boundary = boundary or BoundaryConditions()
    config = config or StabilizationConfig.defaults(p)
    mesh = build_mesh(origin, extent, h)
    if geometry == "projected":
        ls = project_levelset(domain, mesh, p)
    elif geometry == "analytic":
        ls = domain
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    cls = classify_cells(mesh, ls, p)
    space = build_space(mesh, cls, p, variant)
    quad = build_domain_quadrature(ls, cls, 2 * p)
    system = assemble_system(space, quad, config, boundary, mass_rule=mass_rule)
    loader = LoadAssembler(space, quad, config.gamma_d, boundary)
    return Discretization(p, h, ls, space, quad, system, boundary, config, loader)


# -- error norms -------------------------------------------------------------

@dataclass(eq=False)
class FEFunction:
    """A finite element function usable as an error target.

    Points are assigned to the cell containing them; if that cell is not
    active the polynomial of the closest active cell among its neighbours
    is extended.
    """

    space: FESpace
    coefficients: np.ndarray

    def _cells(self, x, y):
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        mesh = self.space.mesh
        cells = locate(mesh, pts)
        active = np.array([self.space.has_cell(c) for c in cells], dtype=bool)
        for k in np.flatnonzero(~active):
            i, j = mesh.cell_ij(cells[k])
            best, dist = -1, math.inf
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ii, jj = i + di, j + dj
                    if not (0 <= ii < mesh.nx and 0 <= jj < mesh.ny):
                        continue
                    c = int(mesh.cell_index(ii, jj))
                    if not self.space.has_cell(c):
                        continue
                    x0, x1, y0, y1 = mesh.cell_box(c)
                    d = math.hypot(max(x0 - pts[k, 0], 0, pts[k, 0] - x1),
                                   max(y0 - pts[k, 1], 0, pts[k, 1] - y1))
                    if d < dist:
                        best, dist = c, d
            if best < 0:
                raise KeyError(f"no active cell near point {pts[k]}")
            cells[k] = best
        return pts, cells

    def value(self, x, y):
        pts, cells = self._cells(x, y)
        return self.space.evaluate(self.coefficients, pts, cells=cells)

    def gradient(self, x, y):
        pts, cells = self._cells(x, y)
        return self.space.evaluate(self.coefficients, pts, cells=cells, derivative="grad")


def error_norms(space: FESpace, coefficients, target, quad: DomainQuadrature,
                boundary: str = "value", extra_points: int = 2):
    """Errors of u_h against ``target`` over the physical domain.

    Returns (L2(Omega), H1-seminorm(Omega), boundary error) where the
    boundary error is the L2 norm on the level-set boundary of the value
    difference (``boundary="value"``) or of the normal-derivative difference
    (``boundary="normal_derivative"``). Cut cells use the rules in ``quad``;
    uncut cells use a tensor Gauss rule with q + 1 + ``extra_points`` points.
    ``target`` provides ``value(x, y)`` and ``gradient(x, y) -> (n, 2)``.
    """
    if boundary not in ("value", "normal_derivative"):
        raise ValueError(f"unknown boundary error {boundary!r}")
    raw = space.to_raw(np.asarray(coefficients, dtype=float))
    h = space.mesh.h
    tags = space.classification.tags
    l2 = h1 = bd = 0.0
    for q, cells, dofs in space.groups():
        uncut = tags[cells] != CUT
        if np.any(uncut):
            basis = tensor_basis(q)
            x, w = gauss_legendre(q + 1 + extra_points)
            X, Y = np.meshgrid(x, x)
            W = np.outer(w, w).ravel() * (0.5 * h) ** 2
            phi = basis.values(X.ravel(), Y.ravel())
            dphi = basis.gradients(X.ravel(), Y.ravel()) * (2.0 / h)
            cs = cells[uncut]
            coef = raw[dofs[uncut]]                          # (nc, nloc)
            origin = space.mesh.cell_origin(cs)             # (nc, 2)
            px = origin[:, 0:1] + 0.5 * h * (X.ravel() + 1.0)[None, :]
            py = origin[:, 1:2] + 0.5 * h * (Y.ravel() + 1.0)[None, :]
            uh = coef @ phi.T
            gh = np.einsum("dpi,ci->cpd", dphi, coef)
            u = np.asarray(target.value(px.ravel(), py.ravel())).reshape(uh.shape)
            g = np.asarray(target.gradient(px.ravel(), py.ravel())).reshape(gh.shape)
            l2 += float(np.sum((uh - u) ** 2 * W))
            h1 += float(np.sum(np.sum((gh - g) ** 2, axis=2) * W))
        for c in cells[~uncut]:
            rule = quad.cut[int(c)]
            if rule.weights.size:
                pts = rule.points
                uh = space.evaluate(coefficients, pts, cells=np.full(len(pts), c))
                gh = space.evaluate(coefficients, pts, cells=np.full(len(pts), c), derivative="grad")
                u = np.asarray(target.value(pts[:, 0], pts[:, 1]))
                g = np.asarray(target.gradient(pts[:, 0], pts[:, 1]))
                l2 += float(np.sum((uh - u) ** 2 * rule.weights))
                h1 += float(np.sum(np.sum((gh - g) ** 2, axis=1) * rule.weights))
            if rule.surface_weights.size:
                pts = rule.surface_points
                cl = np.full(len(pts), c)
                if boundary == "value":
                    d = space.evaluate(coefficients, pts, cells=cl) - target.value(pts[:, 0], pts[:, 1])
                else:
                    gh = space.evaluate(coefficients, pts, cells=cl, derivative="grad")
                    g = np.asarray(target.gradient(pts[:, 0], pts[:, 1]))
                    d = np.sum((gh - g) * rule.normals, axis=1)
                bd += float(np.sum(d**2 * rule.surface_weights))
    return math.sqrt(l2), math.sqrt(h1), math.sqrt(bd)


# -- inner problem -----------------------------------------------------------

@dataclass(eq=False)
class RunResult:
    row: ErrorRow
    disc: Discretization
    integration: IntegrationResult
    seconds: float
    info: dict = field(default_factory=dict)


def inner_domain(radius: float = 1.0) -> Circle:
    return Circle((0.0, 0.0), radius)


def run_inner(p: int, h: float, variant: str = "full", n_mode: int = 2, *,
              geometry: str = "projected", config: StabilizationConfig | None = None,
              t_final: float | None = None, tau: float | None = None, periods: float = 3.0,
              snapshots: int = 0, check_stability: bool = False) -> RunResult:
    """Standing Bessel mode in the unit disk with homogeneous Dirichlet data.

    The numerical solution is started from the projected mode and compared
    with J0(alpha_n r) cos(omega_n t) at ``t_final`` (three periods by
    default).
    """
    start = time.perf_counter()
    mode = BesselMode(n_mode, 1.0)
    disc = discretize(inner_domain(), p, h, variant=variant, geometry=geometry, config=config,
                      boundary=BoundaryConditions("dirichlet"))
    t_final = periods * mode.period if t_final is None else t_final
    state0 = project_initial(disc.space, disc.system.M, lambda x, y: mode.value(x, y, 0.0),
                             None, loader=disc.loader, fact=disc.fact)
    res = integrate(disc.system.M, disc.system.A, state0, t_final, tau, h=h, p=p,
                    fact=disc.fact, check_stability=check_stability, snapshots=snapshots)
    e = error_norms(disc.space, res.state.xi, mode.at(t_final), disc.quad, boundary="value")
    seconds = time.perf_counter() - start
    info = {"n_dofs": disc.space.n_dofs, "steps": res.steps, "tau": res.tau,
            "t_final": t_final, "energy_drift": res.energy_drift()}
    logger.info("inner p=%d h=%g %s: L2=%.4e H1=%.4e bd=%.4e (%d dofs, %.1fs)",
                p, h, variant, *e, disc.space.n_dofs, seconds)
    return RunResult(ErrorRow(h, e[0], None, e[1], None, e[2], None), disc, res, seconds, info)


# -- outer problem -----------------------------------------------------------

def outer_domain() -> Star:
    """Exterior of the five-lobed star r = 0.5 + 0.1 sin(5 theta)."""
    return Star(0.5, 0.1, 5)


def pulse(x, t: float):
    """cos(pi x / 3) exp(-((t - t_c) / sigma)^2)."""
    return np.cos(np.pi * np.asarray(x) / 3.0) * math.exp(-(((t - PULSE_CENTER) / PULSE_WIDTH) ** 2))


def outer_load(disc: Discretization):
    """Load vector t -> F(t) for the pulse entering through the bottom side."""
    pts = disc.loader.dirichlet_points
    bottom = np.isclose(pts[:, 1], BOX_ORIGIN[1], atol=1e-12)
    spatial = np.where(bottom, np.cos(np.pi * pts[:, 0] / 3.0), 0.0)
    base = disc.loader.B_dirichlet.T @ spatial

    def load(t: float) -> np.ndarray:
        return base * math.exp(-(((t - PULSE_CENTER) / PULSE_WIDTH) ** 2))

    return load


@dataclass(eq=False)
class OuterSolution:
    disc: Discretization
    integration: IntegrationResult
    seconds: float

    @property
    def h(self) -> float:
        return self.disc.h

    @property
    def p(self) -> int:
        return self.disc.p

    def function(self) -> FEFunction:
        return FEFunction(self.disc.space, self.integration.state.xi)


def solve_outer(p: int, h: float, *, geometry: str = "projected",
                config: StabilizationConfig | None = None, t_final: float = OUTER_FINAL_TIME,
                tau: float | None = None, snapshots: int = 0,
                check_stability: bool = False) -> OuterSolution:
    """Solve the outer star problem from rest to ``t_final``."""
    start = time.perf_counter()
    boundary = BoundaryConditions("neumann", ("left", "right", "bottom", "top"))
    disc = discretize(outer_domain(), p, h, geometry=geometry, config=config, boundary=boundary)
    state0 = WaveState.zeros(disc.space.n_dofs)
    res = integrate(disc.system.M, disc.system.A, state0, t_final, tau, h=h, p=p,
                    load=outer_load(disc), fact=disc.fact, check_stability=check_stability,
                    snapshots=snapshots, track_energy=False)
    return OuterSolution(disc, res, time.perf_counter() - start)


def run_outer(p: int, h: float, reference: OuterSolution | None, *,
              solution: OuterSolution | None = None, **kwargs) -> RunResult:
    """Errors of the outer problem at ``h`` against a finer reference run.

    The reference must use the same p and a mesh refined by a power of two
    over the same box. The boundary column is the L2 error of the normal
    derivative on the star.
    """
    if reference is None:
        raise ValueError("the outer problem needs a precomputed reference solution")
    ratio = h / reference.h
    if reference.p != p or ratio < 2 - 1e-9 or abs(math.log2(ratio) - round(math.log2(ratio))) > 1e-9:
        raise ValueError("reference must use the same p and a mesh refined by a power of two")
    sol = solution or solve_outer(p, h, **kwargs)
    t0 = time.perf_counter()
    e = error_norms(sol.disc.space, sol.integration.state.xi, reference.function(), sol.disc.quad,
                    boundary="normal_derivative")
    info = {"n_dofs": sol.disc.space.n_dofs, "steps": sol.integration.steps,
            "tau": sol.integration.tau, "reference_h": reference.h}
    return RunResult(ErrorRow(h, e[0], None, e[1], None, e[2], None), sol.disc, sol.integration,
                     sol.seconds + time.perf_counter() - t0, info)


# -- spectral diagnostics ----------------------------------------------------

@dataclass
class SpectralRow:
    p: int
    h: float
    cfl: float
    kappa: float
    lambda_min_scaled: float
    lambda_max_scaled: float


def mass_spectrum(M, h: float, method: str = "auto"):
    """(kappa(M), lambda_min h^-2, lambda_max h^-2)."""
    lo, hi = extremal_eigenvalues(M, None, method=method)
    return hi.value / lo.value, lo.value / h**2, hi.value / h**2


def run_aligned_reference(p: int, h: float, method: str = "auto") -> SpectralRow:
    """Diagnostics on the uncut box with natural boundary conditions and no penalty.

    The mass matrix is integrated exactly (Gauss points), which is the
    setting the reference CFL numbers correspond to.
    """
    disc = discretize(Constant(-1.0), p, h, geometry="analytic",
                      boundary=BoundaryConditions("neumann"), mass_rule="gauss")
    S = disc.system
    cfl = cfl_number(S.A, S.M, h, method=method, fact=disc.fact)
    kappa, lo, hi = mass_spectrum(S.M, h, method)
    return SpectralRow(p, h, cfl, kappa, lo, hi)


def disk_domain(h: float, offset: float = 0.0, radius: float = 1.0) -> Circle:
    """Unit disk whose right and top extreme points sit on grid lines, shifted
    by ``offset`` along (1, 1)/sqrt(2)."""
    a = BOX_ORIGIN[0] + round((radius - BOX_ORIGIN[0]) / h) * h - radius
    c = a + offset / math.sqrt(2.0)
    return Circle((c, c), radius)


def run_immersed_spectrum(p: int, h: float, variant: str = "full", *, offset: float | None = None,
                          geometry: str = "projected", config: StabilizationConfig | None = None,
                          method: str = "auto") -> SpectralRow:
    """CFL number and mass-matrix spectrum for the disk problem."""
    domain = inner_domain() if offset is None else disk_domain(h, offset)
    disc = discretize(domain, p, h, variant=variant, geometry=geometry, config=config)
    S = disc.system
    cfl = cfl_number(S.A, S.M, h, method=method, fact=disc.fact)
    kappa, lo, hi = mass_spectrum(S.M, h, method)
    return SpectralRow(p, h, cfl, kappa, lo, hi)


@dataclass
class SweepRow:
    p: int
    h: float
    offset: float
    variant: str
    kappa_stabilized: float
    kappa_unstabilized: float
    kappa_unstabilized_lower: float
    growth_P: float
    converged: bool
    n_dofs: int


SWEEP_COLUMNS = [f.name for f in fields(SweepRow)]


def _kappa(M, method):
    lo, hi = extremal_eigenvalues(M, None, method=method)
    if lo.value <= 0:
        # rounding on a numerically singular matrix
        return math.inf, hi.value, False
    ok = bool(lo.converged and hi.converged)
    return hi.value / lo.value, hi.value, ok


def condition_sweep(ps, hs, offsets, variant: str = "full", *, geometry: str = "analytic",
                    method: str = "auto", path=None) -> list[SweepRow]:
    """Condition numbers of the stabilised and plain cut mass matrices.

    ``offsets`` are given in units of h and shift the disk centre along
    (1, 1)/sqrt(2) away from the configuration where the disk touches grid
    lines. The plain matrix's condition number is also bounded from below by
    lambda_max / min_i M_ii, which stays reliable when the smallest
    eigenvalue is below the eigensolver's resolution. Rows whose eigensolves
    fail are kept with ``converged=False``.
    """
    rows = []
    for p in ps:
        for h in hs:
            for off in offsets:
                try:
                    disc = discretize(disk_domain(h, off * h), p, h, variant=variant,
                                      geometry=geometry)
                    S = disc.system
                    ks, _, ok1 = _kappa(S.M, method)
                    try:
                        ku, lmax, ok2 = _kappa(S.mass_cut, method)
                    except np.linalg.LinAlgError:
                        ku, ok2 = math.inf, False
                        _, hi = extremal_eigenvalues(S.mass_cut, None, method=method, which="max")
                        lmax = hi.value
                    dmin = float(S.mass_cut.diagonal().min())
                    lower = lmax / dmin if dmin > 0 else math.inf
                    rows.append(SweepRow(p, h, off, variant, ks, ku, lower, growth_function(p),
                                         ok1 and ok2, disc.space.n_dofs))
                except Exception as err:  # noqa: BLE001 - a failed row must not stop the sweep
                    logger.warning("sweep p=%d h=%g offset=%g failed: %s", p, h, off, err)
                    rows.append(SweepRow(p, h, off, variant, math.nan, math.nan, math.nan,
                                         growth_function(p), False, 0))
    if path is not None:
        write_rows_csv(path, rows, SWEEP_COLUMNS)
    return rows


def write_rows_csv(path, rows, columns) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([getattr(r, c) for c in columns])
    return path
