"""Explicit time integration of M xi'' + A xi = F(t).

The second-order system is advanced with classical RK4 applied to
(xi' = eta, eta' = M^-1 (F(t) - A xi)).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .quadrature import gauss_lobatto
from .spectra import Factorization, cfl_number, max_stable_step

logger = logging.getLogger(__name__)

GROWTH_LIMIT = 1e6


class IntegrationError(RuntimeError):
    def __init__(self, t: float, message: str):
        super().__init__(f"t={t:.6g}: {message}")
        self.t = t


@dataclass
class WaveState:
    xi: np.ndarray
    eta: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        if self.xi.shape != self.eta.shape:
            raise ValueError("displacement and velocity sizes differ")

    @classmethod
    def zeros(cls, n: int, t: float = 0.0) -> "WaveState":
        return cls(np.zeros(n), np.zeros(n), t)

    def norm(self) -> float:
        return math.sqrt(float(self.xi @ self.xi + self.eta @ self.eta))


def default_time_step(h: float, p: int) -> float:
    """tau = 0.4 h / p^2."""
    return 0.4 * h / p**2


def project_initial(space, M, u0, v0=None, quad=None, fact: Factorization | None = None,
                    loader=None, rule: str = "lobatto") -> WaveState:
    """L2 projection of initial data with the stabilised mass matrix.

    Solves M xi0 = b with b_i = (u0, phi_i) over the physical domain, and
    likewise for v0. ``u0`` and ``v0`` take (x, y) and may be None for zero
    data. Either ``loader`` (a ``LoadAssembler``) or ``quad`` is required.
    ``rule`` must match the rule used for the uncut cells of M: pairing a
    lumped mass with an exactly integrated right-hand side loses one order.
    """
    if loader is None:
        from .forms import BoundaryConditions, LoadAssembler
        if quad is None:
            raise ValueError("need a quadrature or a load assembler")
        loader = LoadAssembler(space, quad, 0.0, BoundaryConditions())
    fact = fact or Factorization(M)
    n = space.n_dofs

    def proj(func):
        if func is None:
            return np.zeros(n)
        return fact.solve(loader.volume_term(lambda x, y, t: func(x, y), rule=rule))

    return WaveState(proj(u0), proj(v0), 0.0)


def _rhs(fact, A, load, xi, eta, t):
    acc = -(A @ xi)
    if load is not None:
        acc += load(t)
    return eta, fact.solve(acc)


def rk4_step(fact, A, load: Callable[[float], np.ndarray] | None, state: WaveState,
             tau: float) -> WaveState:
    """One classical RK4 step; four mass solves."""
    if tau <= 0:
        raise ValueError("time step must be positive")
    t, xi, eta = state.t, state.xi, state.eta
    k1x, k1v = _rhs(fact, A, load, xi, eta, t)
    k2x, k2v = _rhs(fact, A, load, xi + 0.5 * tau * k1x, eta + 0.5 * tau * k1v, t + 0.5 * tau)
    k3x, k3v = _rhs(fact, A, load, xi + 0.5 * tau * k2x, eta + 0.5 * tau * k2v, t + 0.5 * tau)
    k4x, k4v = _rhs(fact, A, load, xi + tau * k3x, eta + tau * k3v, t + tau)
    xi = xi + (tau / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    eta = eta + (tau / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    out = WaveState(xi, eta, t + tau)
    if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(eta))):
        raise IntegrationError(out.t, "non-finite state")
    return out


def energy(state: WaveState, M, A) -> float:
    """E = (eta^T M eta + xi^T A xi) / 2."""
    return 0.5 * float(state.eta @ (M @ state.eta) + state.xi @ (A @ state.xi))


@dataclass
class IntegrationResult:
    state: WaveState
    tau: float
    steps: int
    times: np.ndarray
    energies: np.ndarray
    snapshots: list[WaveState] = field(default_factory=list)
    cfl: float | None = None

    def energy_drift(self) -> float:
        """max_t |E(t) - E(0)| / E(0)."""
        e0 = self.energies[0]
        if e0 == 0:
            return float(np.max(np.abs(self.energies)))
        return float(np.max(np.abs(self.energies - e0)) / abs(e0))


def integrate(M, A, state0: WaveState, t_final: float, tau: float | None = None, *,
              h: float | None = None, p: int | None = None, load=None,
              fact: Factorization | None = None, check_stability: bool = True,
              cfl: float | None = None, snapshots: int = 0, track_energy: bool = True,
              callback=None) -> IntegrationResult:
    """Advance ``state0`` to exactly ``t_final``.

    ``tau`` defaults to 0.4 h / p^2; the last step is shortened to land on
    ``t_final``. ``load`` maps t to the load vector (None for F = 0). With
    ``check_stability`` the step is compared with 2 sqrt(2) C_FL h (C_FL is
    computed unless given) and a warning is logged when it is exceeded.
    ``snapshots`` requests that many equally spaced states, including the
    final one; steps are shortened so every snapshot time is hit exactly.
    Raises ``IntegrationError`` on non-finite values or when the state norm
    grows beyond 1e6 times its initial value (or beyond 1e6 for zero data,
    where a forced solution may grow by many orders from its first step).
    """
    if tau is None:
        if h is None or p is None:
            raise ValueError("either tau or both h and p are required")
        tau = default_time_step(h, p)
    if tau <= 0 or t_final < state0.t:
        raise ValueError("need tau > 0 and t_final >= initial time")
    fact = fact or Factorization(M)
    if check_stability:
        if h is None:
            raise ValueError("stability check needs h")
        if cfl is None:
            cfl = cfl_number(A, M, h, fact=fact)
        limit = max_stable_step(cfl, h)
        if tau > limit:
            logger.warning("tau=%.4g exceeds the RK4 limit %.4g (C_FL=%.4g)", tau, limit, cfl)
        else:
            logger.info("tau=%.4g is %.1f%% of the RK4 limit %.4g", tau, 100 * tau / limit, limit)

    span = t_final - state0.t
    # stop times: snapshot times and the final time; steps are shortened to hit them
    stops = [state0.t + span * (k + 1) / snapshots for k in range(snapshots - 1)] + [t_final]
    snaps = []
    state = state0
    times, energies = [state.t], []
    if track_energy:
        energies.append(energy(state, M, A))
    reference = state.norm() or 1.0
    n_steps = 0
    eps = 1e-12 * max(1.0, abs(t_final), tau)
    for k, stop in enumerate(stops):
        while stop - state.t > eps:
            remaining = stop - state.t
            # avoid a sliver step right before a stop
            dt = remaining if remaining <= tau * (1 + 1e-9) else tau
            state = rk4_step(fact, A, load, state, dt)
            n_steps += 1
            nrm = state.norm()
            if nrm > GROWTH_LIMIT * reference:
                raise IntegrationError(state.t, f"state norm grew by {nrm / reference:.3e}")
            if track_energy:
                times.append(state.t)
                energies.append(energy(state, M, A))
            if callback is not None:
                callback(state)
        state.t = float(stop)
        if k < snapshots:
            snaps.append(WaveState(state.xi.copy(), state.eta.copy(), state.t))
    return IntegrationResult(state, tau, n_steps, np.asarray(times), np.asarray(energies),
                             snaps, cfl)


def snapshot_points(space):
    """Gauss-Lobatto nodes of every active cell: (cells, points) arrays."""
    cells, pts = [], []
    for q, cs, _ in space.groups():
        x, _ = gauss_lobatto(q)
        X, Y = np.meshgrid(x, x)
        ref = 0.5 * (np.column_stack([X.ravel(), Y.ravel()]) + 1.0) * space.mesh.h
        for c in cs:
            pts.append(space.mesh.cell_origin(c) + ref)
            cells.append(np.full(len(ref), c))
    return np.concatenate(cells), np.concatenate(pts)


def write_snapshot(path, space, state: WaveState, fmt: str = "csv") -> Path:
    """Write u_h at the Gauss-Lobatto nodes of each active cell.

    ``fmt="csv"`` gives columns cell,x,y,u,t. ``fmt="vtk"`` writes a legacy
    ASCII POLYDATA file with one vertex per node and the field ``u``.
    """
    path = Path(path)
    cells, pts = snapshot_points(space)
    u = space.evaluate(state.xi, pts, cells=cells)
    if fmt == "csv":
        data = np.column_stack([cells, pts, u, np.full(len(u), state.t)])
        np.savetxt(path, data, delimiter=",", header="cell,x,y,u,t", comments="",
                   fmt=["%d", "%.10g", "%.10g", "%.10g", "%.10g"])
    elif fmt == "vtk":
        n = len(u)
        with open(path, "w") as fh:
            fh.write(f"# vtk DataFile Version 3.0\nu at t={state.t:.10g}\nASCII\nDATASET POLYDATA\n")
            fh.write(f"POINTS {n} double\n")
            np.savetxt(fh, np.column_stack([pts, np.zeros(n)]), fmt="%.10g")
            fh.write(f"VERTICES {n} {2 * n}\n")
            np.savetxt(fh, np.column_stack([np.ones(n, dtype=int), np.arange(n)]), fmt="%d")
            fh.write(f"POINT_DATA {n}\nSCALARS u double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, u, fmt="%.10g")
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")
    return path
