"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

The lines are printed as each test finishes and collected again in the
terminal summary.  ``python tests/test_acceptance.py`` runs the same checks
without pytest.
"""

import math
import sys

import numpy as np

from polaron_bounds.checks import engine_moments, k2_k3_report
from polaron_bounds.cli import main as cli_main
from polaron_bounds.closed_form import evaluate, radial_integral
from polaron_bounds.model import (
    bound_moving,
    e_strong,
    e_var2,
    e_weak,
    e_weak_quadrature,
    effective_mass_estimate,
    engine_k2_k3,
    solve_eta,
)
from polaron_bounds.oracle import oracle_ground_energy, oracle_moments, quadrature_radial, random_model
from polaron_bounds.params import OPTIMAL_REST, Mode, PolaronParams
from polaron_bounds.variational import (
    SingularHankelError,
    bound_sequence,
    second_order_bound_closed,
    shift_spectrum,
    solve_order,
)
from polaron_bounds.wick import MomentTable, build_hamiltonian, moment_table

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = {}

SEEDS = range(20)
ORACLE_N_MAX = 4  # smallest per-mode cap at which M_4 and M_5 are exact


def report(n: int, ok: bool, detail: str):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    sys.stdout.flush()
    return ok


def test_criterion_01_closed_form_vs_quadrature():
    worst, count = 0.0, 0
    for p in range(13):
        for q in range(min(p, 6) + 1):
            cf = radial_integral(p, q)
            for k0 in (0.5, 1.0, 2.0, 3.0):
                ref = quadrature_radial(p, q, k0)
                worst = max(worst, abs(evaluate(cf, k0) - ref) / abs(ref))
                count += 1
    assert report(1, worst <= 1e-12, f"closed forms vs quadrature on {count} cases, worst rel err {worst:.2e} (tol 1e-12)")


def test_criterion_02_weak_coupling_reproduction():
    worst = 0.0
    for alpha in (0.1, 0.5, 1.0, 2.0, 5.0):
        for k0 in (0.5, 1.0, 2.0, 3.0):
            a, b = e_weak(alpha, k0), e_weak_quadrature(alpha, k0)
            worst = max(worst, abs(a - b) / abs(b))
    assert report(2, worst <= 1e-10, f"e_weak vs continuum quadrature on 5x4 grid, worst rel err {worst:.2e} (tol 1e-10)")


def test_criterion_03_engine_vs_fock_moments():
    worst = 0.0
    for s in SEEDS:
        m = random_model(s, n_max=ORACLE_N_MAX)
        ours, ref = engine_moments(m, 4), oracle_moments(m, 4)
        for x, y in zip(ours.raw, ref.raw):
            worst = max(worst, abs(x - y) / max(abs(y), 1e-300))
    assert report(3, worst <= 1e-10, f"{len(SEEDS)} seeded 2-3 mode models (n_max={ORACLE_N_MAX}), "
                                     f"moments m<=4 worst rel err {worst:.2e} (tol 1e-10)")


def test_criterion_04_upper_bound_and_monotonicity():
    bound_margin, mono_margin, failures = math.inf, math.inf, []
    for s in SEEDS:
        m = random_model(s, n_max=ORACLE_N_MAX)
        e_g = oracle_ground_energy(m)
        seq = bound_sequence(engine_moments(m, 5), 3, on_error="raise")
        if len(seq) != 3:
            failures.append(s)
        for r in seq:
            bound_margin = min(bound_margin, r.bound - (e_g - 1e-8))
        for a, b in zip(seq, seq[1:]):
            mono_margin = min(mono_margin, a.bound + 1e-12 * abs(a.bound) - b.bound)
    ok = bound_margin >= 0 and mono_margin >= 0 and not failures
    assert report(4, ok, f"bound(n) >= E_g - 1e-8 margin {bound_margin:.2e}, monotone margin {mono_margin:.2e}, "
                         f"n = 1..3 on {len(SEEDS)} models")


def test_criterion_05_order_two_identity():
    worst = 0.0
    for alpha in (0.5, 1.0, 2.0, 5.0):
        for k0 in (0.5, 1.0, 2.0, 3.0):
            t = moment_table(build_hamiltonian(PolaronParams(alpha, k0, mode=Mode.EXACT), OPTIMAL_REST), 3)
            K2, K3 = engine_k2_k3(alpha, k0)
            closed = second_order_bound_closed(e_weak(alpha, k0), K2, K3)
            worst = max(worst, abs(solve_order(t, 2).bound - closed))
    assert report(5, worst <= 1e-10, f"solver n=2 vs closed second-order form (engine K2, K3), exact mode, "
                                     f"4x4 grid, worst abs diff {worst:.2e} (tol 1e-10)")


def test_criterion_06_k2_k3_arbitration():
    rep = k2_k3_report()
    print(rep)
    detail = (f"engine vs Fock oracle {rep.worst_oracle_err:.2e}, vs quadrature {rep.worst_quadrature_err:.2e} "
              f"(tol 1e-9); engine vs reference K2/K3: {'agree' if rep.engine_vs_printed_agree else 'DISCREPANCY reported'}")
    assert report(6, rep.engine_vs_oracle_ok, detail)


def test_criterion_07_figure_one_claims():
    alphas = np.linspace(0.5, 5.0, 20)
    rows_ok = all(e_var2(a, 0.5) < e_weak(a, 0.5) and e_var2(a, 0.5) < e_strong(a, 0.5) for a in alphas)
    k0s = (0.5, 1.0, 2.0, 3.0)
    gap = [(e_weak(1.0, k) - e_var2(1.0, k)) / abs(e_weak(1.0, k)) for k in k0s]
    decreasing = all(b < a for a, b in zip(gap, gap[1:]))
    engine_gap = [(e_weak(1.0, k) - e_var2(1.0, k, "engine")) / abs(e_weak(1.0, k)) for k in k0s]
    print("info: relative gap with reference K2/K3:", " ".join(f"{g:.6g}" for g in gap))
    print("info: relative gap with engine K2/K3:    ", " ".join(f"{g:.6g}" for g in engine_gap),
          "(increasing)" if all(b > a for a, b in zip(engine_gap, engine_gap[1:])) else "")
    assert report(7, rows_ok and decreasing, f"E_var2 < E_W and < E_SC on 20 alphas at k0=0.5: {rows_ok}; "
                                             f"relative gap strictly decreasing over k0: {decreasing}")


def test_criterion_08_moving_polaron():
    rest = abs(bound_moving(PolaronParams(1.0, 1.0, 0.0)) - e_weak(1.0, 1.0)) / abs(e_weak(1.0, 1.0))
    etas_ok = True
    worst_res = 0.0
    for P in (0.05, 0.1, 0.2):
        sol = solve_eta(PolaronParams(1.0, 1.0, P))
        etas_ok &= 0.0 <= sol.eta < 1.0
        worst_res = max(worst_res, sol.residual)
    fit = effective_mass_estimate(1.0, 1.0, (0.05, 0.1, 0.2))
    ok = rest <= 1e-12 and etas_ok and worst_res < 1e-12 and fit.residual < 1e-4 and fit.m_eff > 0.5
    assert report(8, ok, f"P=0 vs E_W rel {rest:.1e}; eta in [0,1): {etas_ok}; max residual {worst_res:.1e}; "
                         f"m_eff {fit.m_eff:.6f} fit residual {fit.residual:.1e}")


def _spectrum(points, weights, m_max):
    raw = [math.fsum(w * e**m for e, w in zip(points, weights)) for m in range(m_max + 1)]
    raw[0] = 1.0
    return MomentTable(raw)


def test_criterion_09_solver_exactness_and_equivariance():
    two = solve_order(_spectrum([-1.0, 2.0], [0.75, 0.25], 3), 2).roots
    three = solve_order(_spectrum([0.0, 1.0, 5.0], [0.5, 0.3, 0.2], 5), 3).roots
    exact_err = max(max(abs(a - b) for a, b in zip(two, (-1.0, 2.0))),
                    max(abs(a - b) for a, b in zip(three, (0.0, 1.0, 5.0))))
    try:
        solve_order(_spectrum([0.0, 1.0, 5.0], [0.5, 0.3, 0.2], 7), 4)
        singular = False
    except SingularHankelError:
        singular = True
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        r = int(rng.integers(2, 4))
        pts = np.sort(rng.uniform(-4, 4, r))
        while np.min(np.diff(pts)) < 0.3:
            pts = np.sort(rng.uniform(-4, 4, r))
        w = rng.uniform(0.1, 1.0, r)
        w /= w.sum()
        t = _spectrum(pts, w, 2 * r - 1)
        base = np.array(solve_order(t, r).roots)
        s, c = rng.uniform(-3, 3), rng.uniform(0.3, 3)
        shifted = np.array(solve_order(shift_spectrum(t, s), r).roots) + s
        scaled = np.array(solve_order(MomentTable([c**m * x for m, x in enumerate(t.raw)]), r).roots) / c
        worst = max(worst, np.max(np.abs(shifted - base)), np.max(np.abs(scaled - base)))
    ok = exact_err <= 1e-9 and singular and worst <= 1e-10
    assert report(9, ok, f"2-/3-point spectra root err {exact_err:.1e} (tol 1e-9), order 4 on 3 points singular: "
                         f"{singular}; equivariance on 100 tables worst {worst:.1e} (tol 1e-10)")


def test_criterion_10_worker_determinism(tmp_path):
    argv = ["bounds", "--alpha", "0.5:5:6", "--k0", "0.5,1,2,3", "--orders", "3"]
    one, many = tmp_path / "one.csv", tmp_path / "many.csv"
    assert cli_main([*argv, "--workers", "1", "--output", str(one)]) == 0
    assert cli_main([*argv, "--workers", "3", "--output", str(many)]) == 0
    same = one.read_bytes() == many.read_bytes()
    assert report(10, same, f"bounds CSV with 1 vs 3 workers byte-identical: {same} "
                            f"({len(one.read_bytes())} bytes)")


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    results = []
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
                results.append(True)
            except AssertionError:
                results.append(False)
    sys.exit(0 if all(results) else 1)
