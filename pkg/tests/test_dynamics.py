import math

import numpy as np
import pytest
import scipy.sparse as sp

from cutwave.dynamics import (IntegrationError, WaveState, default_time_step, energy, integrate,
                              project_initial, rk4_step, write_snapshot)
from cutwave.experiments import BesselMode, discretize, error_norms
from cutwave.forms import BoundaryConditions
from cutwave.levelset import Circle, Constant
from cutwave.spectra import Factorization


def _scalar(omega):
    return sp.csr_matrix([[1.0]]), sp.csr_matrix([[omega**2]])


def test_zero_stiffness_gives_linear_drift():
    M, _ = _scalar(1.0)
    A = sp.csr_matrix((1, 1))
    s = rk4_step(Factorization(M), A, None, WaveState([1.0], [2.0]), 0.1)
    assert abs(s.xi[0] - 1.2) < 1e-15 and s.eta[0] == 2.0


def test_scalar_oscillator_is_fourth_order():
    omega, T = 2.0, 3.0
    M, A = _scalar(omega)
    errs = []
    for tau in (0.02, 0.01, 0.005):
        res = integrate(M, A, WaveState([1.0], [0.0]), T, tau, check_stability=False)
        errs.append(abs(res.state.xi[0] - math.cos(omega * T)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 4.0) < 0.2), orders


def test_zero_state_stays_zero():
    M, A = _scalar(3.0)
    res = integrate(M, A, WaveState.zeros(1), 1.0, 0.1, check_stability=False)
    assert res.state.xi[0] == 0 and res.state.eta[0] == 0
    assert res.state.t == 1.0


def test_last_step_lands_on_final_time():
    M, A = _scalar(1.0)
    res = integrate(M, A, WaveState([1.0], [0.0]), 1.0, 0.3, check_stability=False)
    assert res.steps == 4 and res.state.t == 1.0
    assert abs(res.state.xi[0] - math.cos(1.0)) < 1e-3


def test_default_time_step():
    assert abs(default_time_step(0.12, 1) - 0.048) < 1e-15
    assert abs(default_time_step(0.06, 2) - 0.006) < 1e-15


def test_instability_is_detected():
    M, A = _scalar(10.0)
    with pytest.raises(IntegrationError):
        integrate(M, A, WaveState([1.0], [0.0]), 100.0, 0.5, check_stability=False)


def test_energy_of_trivial_states():
    disc = discretize(Constant(-1.0), 1, 0.5, geometry="analytic",
                      boundary=BoundaryConditions("neumann"))
    S = disc.system
    n = disc.space.n_dofs
    assert energy(WaveState.zeros(n), S.M, S.A) == 0
    # constants span the kernel of the Neumann stiffness
    assert abs(energy(WaveState(np.ones(n), np.zeros(n)), S.M, S.A)) < 1e-12


def test_projection_is_identity_on_the_space():
    disc = discretize(Constant(-1.0), 2, 0.5, geometry="analytic",
                      boundary=BoundaryConditions("neumann"))
    f = lambda x, y: x**2 - x * y + 0.5  # noqa: E731
    s = project_initial(disc.space, disc.system.M, f, None, loader=disc.loader)
    np.testing.assert_allclose(s.xi, disc.space.interpolate(f), atol=1e-10)
    assert not np.any(s.eta)


def test_projection_converges_on_disk():
    mode = BesselMode(1)
    errs = []
    for h in (0.12, 0.06):
        d = discretize(Circle(), 2, h, boundary=BoundaryConditions("dirichlet"))
        s = project_initial(d.space, d.system.M, lambda x, y: mode.value(x, y), None,
                            loader=d.loader, fact=d.fact)
        errs.append(error_norms(d.space, s.xi, mode.at(0.0), d.quad)[0])
    assert math.log2(errs[0] / errs[1]) > 2.7


@pytest.fixture(scope="module")
def disk_run():
    disc = discretize(Circle(), 2, 0.3, boundary=BoundaryConditions("dirichlet"))
    mode = BesselMode(1)
    s0 = project_initial(disc.space, disc.system.M, lambda x, y: mode.value(x, y), None,
                         loader=disc.loader, fact=disc.fact)
    return disc, s0


def test_energy_is_nearly_conserved_and_linear(disk_run):
    disc, s0 = disk_run
    S = disc.system
    res = integrate(S.M, S.A, s0, 1.0, h=0.3, p=2, fact=disc.fact)
    assert res.cfl is not None and res.tau < 2 * math.sqrt(2) * res.cfl * 0.3
    assert res.energy_drift() < 1e-2
    assert np.all(np.diff(res.energies) <= 1e-14 * res.energies[0])   # RK4 only dissipates
    double = integrate(S.M, S.A, WaveState(2 * s0.xi, 2 * s0.eta), 1.0, h=0.3, p=2,
                       fact=disc.fact, check_stability=False)
    np.testing.assert_allclose(double.state.xi, 2 * res.state.xi, atol=1e-12)


def test_time_reversal(disk_run):
    disc, s0 = disk_run
    S = disc.system
    tau = default_time_step(0.3, 2) / 8
    fwd = integrate(S.M, S.A, s0, 0.5, tau, fact=disc.fact, check_stability=False)
    back = integrate(S.M, S.A, WaveState(fwd.state.xi, -fwd.state.eta), 0.5, tau,
                     fact=disc.fact, check_stability=False)
    drift_tolerance = 1e-6
    assert fwd.energy_drift() < drift_tolerance
    scale = np.abs(s0.xi).max()
    assert np.abs(back.state.xi - s0.xi).max() < 10 * drift_tolerance * scale


def test_snapshots(tmp_path, disk_run):
    disc, s0 = disk_run
    S = disc.system
    res = integrate(S.M, S.A, s0, 0.3, h=0.3, p=2, fact=disc.fact, check_stability=False,
                    snapshots=3)
    assert [round(s.t, 12) for s in res.snapshots] == [0.1, 0.2, 0.3]
    p = write_snapshot(tmp_path / "s.csv", disc.space, res.snapshots[-1])
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    assert data.shape[1] == 5 and np.all(data[:, 4] == pytest.approx(0.3))
    v = write_snapshot(tmp_path / "s.vtk", disc.space, res.snapshots[-1], "vtk").read_text()
    assert v.startswith("# vtk DataFile") and "POINT_DATA" in v
