import csv
import math

import numpy as np
import pytest
from scipy.optimize import bisect

from cutwave.cli import main
from cutwave.experiments import (ERROR_COLUMNS, BesselMode, ErrorRow, FEFunction, bessel_j0,
                                 bessel_j0_zero, convergence_rate, disk_domain, error_norms,
                                 pulse, read_error_csv, run_outer, solve_outer, with_rates,
                                 write_error_csv)


def _j0_series(x, terms=50):
    return sum((-1) ** m * (x / 2) ** (2 * m) / math.factorial(m) ** 2 for m in range(terms))


def test_bessel_against_series_oracle():
    assert bessel_j0(0.0) == 1.0
    assert abs(bessel_j0(2.0) - 0.2238907791412357) < 1e-15
    for x in np.linspace(0, 8, 33):
        assert abs(bessel_j0(x) - _j0_series(x)) < 1e-12


def test_bessel_zeros_against_bisection():
    assert abs(bessel_j0_zero(1) - 2.404825557695773) < 1e-14
    lo = 0.0
    for n in range(1, 5):
        # bracket the n-th zero using the asymptotic spacing pi
        a = (n - 0.25) * math.pi - 0.5
        root = bisect(_j0_series, a, a + 1.0, xtol=1e-15)
        assert abs(bessel_j0_zero(n) - root) < 1e-12
        assert abs(bessel_j0(bessel_j0_zero(n))) < 1e-12
        assert bessel_j0_zero(n) > lo
        lo = bessel_j0_zero(n)
    with pytest.raises(ValueError):
        bessel_j0_zero(0)


def test_bessel_mode():
    m = BesselMode(1, 1.0)
    assert abs(m.period - 2 * math.pi / 2.404825557695773) < 1e-12
    assert np.all(np.abs(m.value(np.cos([0.3, 1.0]), np.sin([0.3, 1.0]))) < 1e-12)
    x = np.array([0.3, -0.1])
    y = np.array([0.2, 0.5])
    e = 1e-6
    g = m.gradient(x, y, 0.4)
    np.testing.assert_allclose(g[:, 0], (m.value(x + e, y, 0.4) - m.value(x - e, y, 0.4)) / (2 * e), atol=1e-8)


def test_rates_are_internally_consistent():
    rows = [ErrorRow(0.1, 1e-2, None, 1e-1, None, 2e-2), ErrorRow(0.05, 1.3e-3, None, 5.2e-2, None, 2.4e-3),
            ErrorRow(0.025, 1.6e-4, None, 2.5e-2, None, 3e-4)]
    out = with_rates(rows[::-1])
    assert out[0].rate_L2 is None
    for a, b in zip(out[:-1], out[1:]):
        assert abs(b.rate_L2 - math.log(a.e_L2 / b.e_L2) / math.log(a.h / b.h)) < 1e-12
        assert abs(b.rate_H1 - convergence_rate(a.e_H1, b.e_H1, a.h, b.h)) < 1e-12


def test_error_csv_roundtrip(tmp_path):
    rows = with_rates([ErrorRow(0.1, 1e-2, None, 1e-1, None, 2e-2), ErrorRow(0.05, 2e-3, None, 4e-2, None, 4e-3)])
    path = write_error_csv(tmp_path / "e.csv", rows)
    with open(path) as fh:
        assert next(csv.reader(fh)) == ERROR_COLUMNS
    back = read_error_csv(path)
    assert back[1].rate_L2 == pytest.approx(rows[1].rate_L2, rel=1e-15)


class _Poly:
    def __init__(self, f, grad):
        self.f, self.grad = f, grad

    def value(self, x, y):
        return self.f(x, y)

    def gradient(self, x, y):
        return np.column_stack(self.grad(x, y))


def test_error_norm_identities(disk_p2):
    space, quad = disk_p2.space, disk_p2.quad
    f = _Poly(lambda x, y: x**2 + y**2, lambda x, y: (2 * x, 2 * y))
    u = space.interpolate(f.value)
    assert max(error_norms(space, u, f, quad)) < 1e-12
    shifted = _Poly(lambda x, y: x**2 + y**2 - 0.5, lambda x, y: (2 * x, 2 * y))
    l2, h1, bd = error_norms(space, u, shifted, quad)
    assert abs(l2 - 0.5 * math.sqrt(math.pi)) < 1e-6 and h1 < 1e-12
    assert abs(bd - 0.5 * math.sqrt(2 * math.pi)) < 1e-6
    zero = _Poly(lambda x, y: 0 * x, lambda x, y: (0 * x, 0 * y))
    l2, _, _ = error_norms(space, u, zero, quad)
    assert abs(l2**2 - math.pi / 3) < 1e-6
    # normal derivative of r^2 on the unit circle is 2
    _, _, dn = error_norms(space, u, zero, quad, boundary="normal_derivative")
    assert abs(dn - 2 * math.sqrt(2 * math.pi)) < 1e-6


def test_fe_function_extends_into_inactive_cells(disk_p2):
    space = disk_p2.space
    u = space.interpolate(lambda x, y: 1 + x - 2 * y)
    g = FEFunction(space, u)
    with pytest.raises(KeyError):
        g.value(np.array([1.45]), np.array([1.45]))
    pts = np.array([[0.8, 0.75], [0.1, 0.2]])
    np.testing.assert_allclose(g.value(pts[:, 0], pts[:, 1]), 1 + pts[:, 0] - 2 * pts[:, 1], atol=1e-12)
    np.testing.assert_allclose(g.gradient(pts[:, 0], pts[:, 1]), [[1, -2], [1, -2]], atol=1e-12)


def test_disk_offsets_put_extreme_points_on_grid_lines():
    for h in (0.12, 0.06, 0.03):
        c = disk_domain(h).center
        assert abs(((c[0] + 1.0 + 1.5) / h) - round((c[0] + 1.0 + 1.5) / h)) < 1e-9
        shifted = disk_domain(h, 1e-3 * h).center
        assert abs(shifted[0] - c[0] - 1e-3 * h / math.sqrt(2)) < 1e-15


def test_outer_requires_reference():
    with pytest.raises(ValueError):
        run_outer(1, 0.3, None)


def test_outer_solution_is_quiet_before_the_pulse():
    assert abs(pulse(0.0, 0.5)) < 1e-14
    sol = solve_outer(1, 0.3, t_final=0.5)
    assert np.abs(sol.integration.state.xi).max() <= 1e-12
    ref = solve_outer(1, 0.15, t_final=3.2)
    coarse = solve_outer(1, 0.3, t_final=3.2)
    assert np.abs(ref.integration.state.xi).max() > 0.1
    with pytest.raises(ValueError):
        run_outer(2, 0.3, ref, solution=coarse)
    row = run_outer(1, 0.3, ref, solution=coarse).row
    assert 0 < row.e_L2 < 1 and row.e_boundary > 0


def test_cli_writes_tables_and_manifest(tmp_path, capsys):
    assert main(["aligned", "--p", "1", "--h", "0.5", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "aligned.csv").exists()
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "seed" in manifest and "h: [0.5]" in manifest
    assert main(["inner", "--p", "1", "--h", "0.3", "--tf", "0.2", "--snapshots", "2",
                 "--out", str(tmp_path)]) == 0
    with open(tmp_path / "inner_full_p1.csv") as fh:
        assert next(csv.reader(fh)) == ERROR_COLUMNS
    assert len(list(tmp_path.glob("inner_p1_h0.3_snap*.csv"))) == 2
    assert "C_FL" in capsys.readouterr().out
