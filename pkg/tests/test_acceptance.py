"""Acceptance checks for the benchmark studies.

Each test prints one ``CRITERION n: PASS/FAIL`` line, collected and shown
in the terminal summary. Reference values below are the published error
tables and CFL numbers for this benchmark; they are transcribed, not
computed. Expensive runs are cached in ``.acceptance_cache/`` under a hash
of the package source; set ``CUTWAVE_NO_CACHE=1`` to recompute.
"""
import hashlib
import json
import math
import os
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import quad

import cutwave
from cutwave.dynamics import WaveState, default_time_step, integrate
from cutwave.experiments import (INNER_H, OUTER_H, BesselMode, condition_sweep, convergence_rate,
                                 run_aligned_reference, run_immersed_spectrum, run_inner,
                                 run_outer, solve_outer)
from cutwave.geometry import cell_quadrature, cut_quadratures
from cutwave.grid import build_mesh, classify_cells
from cutwave.levelset import Circle, Star
from cutwave.spectra import extremal_eigenvalues, growth_diagnostics, growth_function

pytestmark = pytest.mark.slow

LINES: list[str] = []

# (L2, H1, boundary) per h, published values
INNER_TABLE = {
    1: [(7.574e-02, 1.354e+00, 4.555e-02), (1.325e-02, 5.494e-01, 4.156e-03),
        (3.068e-03, 2.692e-01, 4.019e-04), (7.080e-04, 1.340e-01, 1.167e-04)],
    2: [(3.198e-03, 1.561e-01, 3.414e-03), (3.490e-04, 3.640e-02, 5.683e-04),
        (4.433e-05, 8.897e-03, 7.709e-05), (5.282e-06, 2.141e-03, 9.352e-06)],
    3: [(1.464e-04, 1.181e-02, 4.643e-05), (9.475e-06, 1.412e-03, 2.097e-06),
        (5.470e-07, 1.707e-04, 1.518e-07), (2.188e-08, 2.304e-05, 7.674e-09)],
}
OUTER_TABLE = {
    1: [(2.355e-01, 2.048e+00, 5.844e-01), (6.160e-02, 6.724e-01, 2.946e-01),
        (1.221e-02, 1.952e-01, 1.468e-01)],
    2: [(3.335e-02, 5.085e-01, 5.956e-01), (1.805e-03, 3.771e-02, 1.925e-01),
        (1.060e-04, 7.842e-03, 4.159e-02)],
    3: [(3.039e-03, 9.497e-02, 2.592e-01), (9.965e-05, 3.837e-03, 4.885e-02),
        (2.273e-06, 4.548e-04, 6.715e-03)],
}
CFL_TABLE = {1: (0.20, 0.34), 2: (0.09, 0.10), 3: (0.05, 0.05)}
SPECTRAL_H = (0.12, 0.06, 0.03)


# -- reporting and caching ---------------------------------------------------

def _report(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


def _source_hash() -> str:
    digest = hashlib.sha256()
    for path in sorted(Path(cutwave.__file__).parent.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


_CACHE_DIR = Path(__file__).resolve().parent.parent / ".acceptance_cache"


def _cached(name: str, compute):
    if os.environ.get("CUTWAVE_NO_CACHE"):
        return compute()
    path = _CACHE_DIR / f"{_source_hash()}.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    if name not in data:
        data[name] = compute()
        _CACHE_DIR.mkdir(exist_ok=True)
        path.write_text(json.dumps(data, indent=1))
    return data[name]


def _rates(errors, hs):
    return [convergence_rate(a, b, ha, hb) for a, b, ha, hb in zip(errors, errors[1:], hs, hs[1:])]


def _fmt(values):
    return "[" + ", ".join(f"{v:.2f}" for v in values) + "]"


def _inner(p, variant):
    def compute():
        rows = [run_inner(p, h, variant).row for h in INNER_H]
        return [[r.e_L2, r.e_H1, r.e_boundary] for r in rows]
    return np.array(_cached(f"inner_{variant}_p{p}", compute))


def _outer(p):
    def compute():
        ref = solve_outer(p, OUTER_H[-1] / 2)
        rows = [run_outer(p, h, ref).row for h in OUTER_H]
        return [[r.e_L2, r.e_H1, r.e_boundary] for r in rows]
    return np.array(_cached(f"outer_p{p}", compute))


def _spectral(kind, p, h):
    def compute():
        if kind == "aligned":
            r = run_aligned_reference(p, h)
        else:
            r = run_immersed_spectrum(p, h)
        return [r.cfl, r.kappa, r.lambda_min_scaled, r.lambda_max_scaled]
    return _cached(f"{kind}_p{p}_h{h}", compute)


def _within(ours, published, factor):
    ratio = np.asarray(ours) / np.asarray(published)
    return bool(np.all((ratio <= factor) & (ratio >= 1.0 / factor))), ratio


# -- criteria ----------------------------------------------------------------

def test_criterion_1_inner_convergence():
    ok, parts = True, []
    for p in (1, 2, 3):
        err = _inner(p, "full")
        r_l2, r_h1 = _rates(err[:, 0], INNER_H), _rates(err[:, 1], INNER_H)
        rates_ok = (all(abs(r - (p + 1)) <= 0.4 for r in r_l2) and r_l2[-1] >= p + 0.7
                    and all(abs(r - p) <= 0.4 for r in r_h1))
        mag_ok, ratio = _within(err, INNER_TABLE[p], 2.0)
        ok &= rates_ok and mag_ok
        parts.append(f"p={p} L2 rates {_fmt(r_l2)} H1 rates {_fmt(r_h1)} "
                     f"ours/published in [{ratio.min():.2f}, {ratio.max():.2f}]")
    _report(1, ok, "; ".join(parts))


def test_criterion_2_reduced_space():
    red2 = _inner(2, "reduced")[:, 0]
    r2 = _rates(red2, INNER_H)
    full3, red3 = _inner(3, "full")[:, 0], _inner(3, "reduced")[:, 0]
    gap = np.array(_rates(full3, INNER_H)) - np.array(_rates(red3, INNER_H))
    ok = max(r2) >= 2.7 and bool(np.all(gap >= 0.3))
    _report(2, ok, f"reduced p=2 L2 rates {_fmt(r2)}; full minus reduced p=3 L2 rate {_fmt(gap)}")


def test_criterion_3_cfl():
    ok, parts = True, []
    for p in (1, 2, 3):
        aligned = np.mean([_spectral("aligned", p, h)[0] for h in SPECTRAL_H])
        immersed = np.mean([_spectral("immersed", p, h)[0] for h in SPECTRAL_H])
        ref_a, ref_i = CFL_TABLE[p]
        ok &= abs(aligned / ref_a - 1) <= 0.3 and abs(immersed / ref_i - 1) <= 0.3
        parts.append(f"p={p} aligned {aligned:.3f} (ref {ref_a}) immersed {immersed:.3f} (ref {ref_i})")
    _report(3, ok, "; ".join(parts))


def test_criterion_4_cut_robustness():
    offsets = (0.5, 1e-2, 1e-4, 1e-6)

    def compute():
        rows = condition_sweep((1, 2, 3), (0.06,), offsets)
        return [[r.p, r.offset, r.kappa_stabilized, r.kappa_unstabilized,
                 r.kappa_unstabilized_lower] for r in rows]
    rows = _cached("condition_sweep", compute)
    ok, parts = True, []
    for p in (1, 2, 3):
        mine = [r for r in rows if r[0] == p]
        ks = [r[2] for r in mine]
        spread = max(ks) / min(ks)
        smallest = min(mine, key=lambda r: r[1])
        # kappa >= lambda_max / min diag; the eigensolve may fail (inf) when
        # the plain matrix is numerically singular
        lower, solved = smallest[4], smallest[3]
        ok &= spread <= 10 and max(lower, solved) > 1e10
        parts.append(f"p={p} stabilized spread x{spread:.2f}, unstabilized at 1e-6h >= {lower:.2e}"
                     f" (eigensolve {solved:.2e})")
    _report(4, ok, "; ".join(parts))


def test_criterion_5_h_independence():
    ok, parts = True, []
    for p in (1, 2, 3):
        rows = np.array([_spectral("immersed", p, h) for h in SPECTRAL_H])
        lo, hi = rows[:, 2], rows[:, 3]
        s_lo, s_hi = lo.max() / lo.min(), hi.max() / hi.min()
        ok &= s_lo <= 5 and s_hi <= 5
        parts.append(f"p={p} lambda_min/h^2 spread x{s_lo:.2f}, lambda_max/h^2 spread x{s_hi:.2f}")
    _report(5, ok, "; ".join(parts))


def test_criterion_6_p_growth():
    kappa = [_spectral("immersed", p, 0.06)[1] for p in (1, 2, 3)]
    ref = [_spectral("aligned", p, 0.06)[1] for p in (1, 2, 3)]
    growth = [b / a for a, b in zip(kappa, kappa[1:])]
    ref_growth = [b / a for a, b in zip(ref, ref[1:])]
    closed = {1: Fraction(1, 3), 2: Fraction(64, 3) + Fraction(1024, 20),
              3: Fraction(729, 3) + Fraction(59049, 20) + Fraction(4782969, 252)}
    p_err = max(abs(growth_function(p) - float(v)) / float(v) for p, v in closed.items())
    w = (2.0, 3.0, 5.0)
    diag_err = abs(growth_diagnostics(3, w)[1] - float(sum(
        Fraction(wk) * Fraction(3) ** (4 * k + 2) / ((2 * k + 1) * math.factorial(k) ** 2)
        for k, wk in zip((1, 2, 3), w))))
    ok = (all(g >= 10 for g in growth) and all(g > r for g, r in zip(growth, ref_growth))
          and p_err <= 1e-10 and diag_err <= 1e-10 * growth_diagnostics(3, w)[1])
    _report(6, ok, f"kappa(M) {_fmt(np.log10(kappa))} (log10), growth per p {_fmt(growth)}, "
                   f"aligned growth {_fmt(ref_growth)}, P(p) rel. error {p_err:.1e}")


def test_criterion_7_energy_conservation():
    tau0 = default_time_step(0.06, 2)

    def compute():
        return [run_inner(2, 0.06, tau=tau0 / 2**k).info["energy_drift"] for k in range(3)]
    drift = _cached("energy_drift", compute)
    orders = np.log2(np.array(drift[:-1]) / np.array(drift[1:]))
    ok = drift[0] <= 1e-6 and bool(np.all(np.abs(orders - 4) <= 0.3))
    _report(7, ok, f"drift at tau, tau/2, tau/4: {', '.join(f'{d:.2e}' for d in drift)}; "
                   f"orders {_fmt(orders)}")


def test_criterion_8_geometry():
    mesh = build_mesh((-1.5, -1.5), (3.0, 3.0), 0.05)
    cls = classify_cells(mesh, Circle(), 2)
    area = perim = 0.0
    for c in cls.active_cells:
        q = cell_quadrature(Circle(), mesh, int(c), 4, tag=cls.tags[c])
        area += q.weights.sum()
        perim += q.surface_weights.sum()
    star = Star(0.5, 0.1, 5)
    arc = quad(lambda t: np.hypot(0.5 + 0.1 * np.sin(5 * t), 0.5 * np.cos(5 * t)),
               0, 2 * np.pi, epsabs=1e-14, limit=400)[0]
    rules = cut_quadratures(star, classify_cells(mesh, star, 2), 4)
    star_perim = sum(r.surface_weights.sum() for r in rules.values())
    errs = (abs(area - math.pi), abs(perim - 2 * math.pi), abs(star_perim - arc))
    _report(8, max(errs) <= 1e-6,
            f"disk area/perimeter errors {errs[0]:.1e}/{errs[1]:.1e}, star perimeter error {errs[2]:.1e}")


def test_criterion_9_properties(disk_p2, disk_reduced_p3, rng):
    checks = {}
    sym = 0.0
    for disc in (disk_p2, disk_reduced_p3):
        S = disc.system
        for K in (S.M, S.A, S.ghost_penalty):
            sym = max(sym, abs(K - K.T).max() / abs(K).max())
    checks["symmetry"] = sym <= 1e-12
    J = disk_p2.system.ghost_penalty.toarray()
    ev = np.linalg.eigvalsh(J)
    u = disk_p2.space.interpolate(lambda x, y: 1 + x**2 - 3 * x * y + y**2)
    checks["penalty PSD, polynomial kernel"] = (ev.min() > -1e-12 * ev.max()
                                                and abs(u @ J @ u) < 1e-12 * ev.max() * (u @ u))
    space = disk_reduced_p3.space
    once = space.constraints.enforce(space.to_raw(rng.normal(size=space.n_dofs)))
    checks["constraint idempotency"] = np.abs(space.constraints.enforce(once) - once).max() < 1e-13
    S = disk_p2.system
    assert S.M.shape[0] <= 2000
    dense = extremal_eigenvalues(S.A, S.M, method="dense")
    lanczos = extremal_eigenvalues(S.A, S.M, method="lanczos")
    checks["eigensolver vs dense"] = all(abs(a.value - b.value) <= 1e-6 * abs(b.value)
                                         for a, b in zip(lanczos, dense))
    M, A = sp.identity(1, format="csr"), sp.csr_matrix([[4.0]])
    errs = [abs(integrate(M, A, WaveState([1.0], [0.0]), 3.0, tau, check_stability=False).state.xi[0]
                - math.cos(6.0)) for tau in (0.02, 0.01, 0.005)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    checks["RK4 scalar order"] = bool(np.all(np.abs(orders - 4) < 0.2))
    failed = [k for k, v in checks.items() if not v]
    _report(9, not failed, f"{len(checks) - len(failed)}/{len(checks)} property checks"
                          + (f", failed: {', '.join(failed)}" if failed else ""))


def test_criterion_10_outer_convergence():
    ok, parts = True, []
    for p in (1, 2, 3):
        err = _outer(p)
        r_l2, r_bd = _rates(err[:, 0], OUTER_H), _rates(err[:, 2], OUTER_H)
        if p in (1, 2):
            ok &= all(r >= p + 0.5 for r in r_l2) and all(r >= p - 0.6 for r in r_bd)
        mag_ok, ratio = _within(err, OUTER_TABLE[p], 3.0)
        ok &= mag_ok
        parts.append(f"p={p} L2 rates {_fmt(r_l2)} normal-derivative rates {_fmt(r_bd)} "
                     f"ours/published in [{ratio.min():.2f}, {ratio.max():.2f}]")
    _report(10, ok, "; ".join(parts))


def test_bessel_mode_used_for_inner_problem():
    # the inner runs use the second zero of J0 on the unit disk
    assert abs(BesselMode(2).alpha - 5.520078110286311) < 1e-12
