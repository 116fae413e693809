"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time
from fractions import Fraction

import numpy as np
import pytest

from ucplab import config as cfg
from ucplab.carleman_scan import compare, conjugated_sigma, is_limiting
from ucplab.cauchy import Face, box_mask, caccioppoli_ratio, h1_norm, manufacture, solve, stability_fit, ucp_gap
from ucplab.cli import csv_text, run
from ucplab.fdgrid import BILAPLACIAN, FOURTH_SUM, build_grid
from ucplab.polysym import PolySymbol, is_zero
from ucplab.subellipticity import (
    check_convexified_bound, conjugated_symbol, factorization_surrogate, poisson_bracket,
    quadratic_closed_form,
)
from ucplab.weights import general, linear, paraboloid

SCAN_H = [0.4, 0.283, 0.2, 0.141, 0.1]
NOISE = [1e-1, 1e-2, 1e-3, 1e-4]


def _cauchy_problem(m):
    g = build_grid([(0, 1)], m)
    w = general(1 - PolySymbol.x(1, 0))
    return manufacture(g, "sin(x1)", None, 1.0, [Face(0, 0)], w, 0.5, data="analytic")


def test_criterion_01_linear_bracket(record_criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    ok, count = True, 0
    for n in (2, 3, 4):
        for _ in range(10):
            rho = [Fraction(int(p), int(q)) for p, q in zip(rng.integers(-9, 10, n), rng.integers(1, 10, n))]
            if not any(rho):
                rho[0] = Fraction(1)
            a, b = conjugated_symbol(linear(rho))
            ok = ok and poisson_bracket(a, b).terms == {}
            count += 1
    dt = time.perf_counter() - t0
    passed = ok and dt < 1.0
    record_criterion(1, passed, f"{count} weights exactly zero={ok}, {dt:.2f}s")
    assert passed


def test_criterion_02_quadratic_bracket(record_criterion):
    t0 = time.perf_counter()
    ok = True
    for n in (2, 3):
        for sign in (1, -1):
            a, b = conjugated_symbol(paraboloid(n, sign, Fraction(1, 2)))
            ok = ok and is_zero(poisson_bracket(a, b) - quadratic_closed_form(n))
    dt = time.perf_counter() - t0
    passed = ok and dt < 5.0
    record_criterion(2, passed, f"difference exactly zero={ok}, {dt:.2f}s")
    assert passed


def test_criterion_03_factorization(record_criterion):
    ok = is_zero(factorization_surrogate())
    record_criterion(3, ok, f"surrogate exactly zero={ok}")
    assert ok


def test_criterion_04_convexified_bound(record_criterion):
    box = [(-1.0, 1.0), (-1.0, 1.0)]
    h, eps = Fraction(1, 100), Fraction(1, 10)
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, w in (("linear", linear([0, 1])), ("parab+", paraboloid(2, 1, Fraction(1, 2))),
                    ("parab-", paraboloid(2, -1, Fraction(1, 2)))):
        rep = check_convexified_bound(w, h, eps, box, count=200, tol=1e-6, seed=0)
        good = rep.count >= 200 and rep.max_residual <= 1e-6 and rep.min_margin >= 0
        ok = ok and good
        parts.append(f"{name}: n={rep.count} res={rep.max_residual:.1e} margin={rep.min_margin:.3g}")
    dt = time.perf_counter() - t0
    passed = ok and dt < 30
    record_criterion(4, passed, "; ".join(parts) + f"; {dt:.1f}s")
    assert passed


@pytest.fixture(scope="module")
def scan_pair():
    g = build_grid([(0, 1)], 81)
    w = linear([1])
    t0 = time.perf_counter()
    rep = compare(g, w, SCAN_H)
    return g, w, rep, time.perf_counter() - t0


def test_criterion_05_scaling_contrast(record_criterion, scan_pair):
    _, w, rep, dt = scan_pair
    f, b = rep.first.fit, rep.second.fit
    assert is_limiting(w) and rep.first.eps_rule == "sqrt(h)"
    checks = {
        "alpha_fourth in [0.7,1.3]": f is not None and 0.7 <= f.alpha <= 1.3,
        "alpha_bilap in [1.6,2.4]": b is not None and 1.6 <= b.alpha <= 2.4,
        "gap > 0.3": rep.alpha_ok,
        "R2 >= 0.95": f is not None and b is not None and min(f.r2, b.r2) >= 0.95,
        "runtime < 120s": dt < 120,
    }
    passed = all(checks.values())
    detail = (f"alpha_fourth={f.alpha:.3f} (R2 {f.r2:.3f}), alpha_bilap={b.alpha:.3f} (R2 {b.r2:.3f}); "
              + ", ".join(k for k, v in checks.items() if not v) + (" failed" if not passed else ""))
    record_criterion(5, passed, detail)
    assert passed, detail


def test_criterion_06_sigma_oracle(record_criterion, scan_pair):
    g, w, rep, _ = scan_pair
    worst, count = 0.0, 0
    for kind, result in ((FOURTH_SUM, rep.first), (BILAPLACIAN, rep.second)):
        for s in result.samples:
            res, _, op = conjugated_sigma(g, w, kind, s.h, limiting=True)
            assert op.matrix.shape[0] <= 400
            dense, _, _ = conjugated_sigma(g, w, kind, s.h, limiting=True, dense=True)
            assert res.value == s.sigma_min
            worst = max(worst, abs(res.value - dense.value) / dense.value)
            count += 1
    passed = count == 10 and worst <= 1e-6
    record_criterion(6, passed, f"{count} operators, worst relative gap {worst:.1e}")
    assert passed


def test_criterion_07_cauchy_convergence(record_criterion):
    t0 = time.perf_counter()
    errs = {}
    for m in (61, 121):
        p = _cauchy_problem(m)
        sol = solve(p, 1e-10)
        assert sol.converged
        errs[m] = h1_norm(p.grid, sol.u.values - p.u_true, p.omega_delta)
    dt = time.perf_counter() - t0
    factor = errs[61] / errs[121]
    passed = errs[61] <= 1e-2 and factor >= 2 and dt < 30
    record_criterion(7, passed, f"error m=61 {errs[61]:.2e}, m=121 {errs[121]:.2e}, factor {factor:.2f}, {dt:.1f}s")
    assert passed


def test_criterion_08_holder_shadow(record_criterion):
    t0 = time.perf_counter()
    p = _cauchy_problem(61)
    fit = stability_fit(p, NOISE, seed=0, trials=5)
    dt = time.perf_counter() - t0
    passed = (fit.theta_hat is not None and fit.theta_hat > 0 and fit.r2 >= 0.9
              and len(fit.trials) == 20 and dt < 300)
    record_criterion(8, passed, f"theta_hat={fit.theta_hat:.3f} R2={fit.r2:.3f}, "
                                f"predicted theta={fit.theta_predicted:.4f} (Phi={fit.sup_phi:.4g}), {dt:.1f}s")
    assert fit.theta_predicted == pytest.approx(1 / 3, rel=1e-6)
    assert passed


def test_criterion_09_caccioppoli(record_criterion):
    ratios = {}
    for m in (41, 81):
        g = build_grid([(-1, 1), (-1, 1)], (m, m))
        ratios[m] = caccioppoli_ratio("x1^3", 0.8, 0.4, g).ratio
    g = build_grid([(-1, 1), (-1, 1)], (41, 41))
    zero = [caccioppoli_ratio(u, 0.8, 0.4, g).lhs for u in ("1", "x1")]
    change = abs(ratios[81] / ratios[41] - 1)
    passed = all(np.isfinite(list(ratios.values()))) and change <= 0.5 and zero == [0.0, 0.0]
    record_criterion(9, passed, f"ratio m=41 {ratios[41]:.4f}, m=81 {ratios[81]:.4f} "
                                f"(change {change:.1%}); LHS for 1, x1 = {zero}")
    assert passed


def test_criterion_10_ucp_gap(record_criterion):
    gaps = {}
    for m in (61, 121):
        g = build_grid([(0, 1)], m)
        gaps[m] = ucp_gap(g, box_mask(g, [(0.4, 0.6)]))
    g = build_grid([(0, 1)], 61)
    nested = [ucp_gap(g, box_mask(g, [(0.5 - s, 0.5 + s)])) for s in (0.05, 0.1, 0.2, 0.3)]
    monotone = all(a <= b for a, b in zip(nested, nested[1:]))
    ratio = gaps[121] / gaps[61]
    passed = min(gaps.values()) > 0 and ratio >= 0.5 and monotone
    record_criterion(10, passed, f"gap m=61 {gaps[61]:.1f}, m=121 {gaps[121]:.1f}, ratio {ratio:.3f}; "
                                 f"nested monotone={monotone}")
    assert passed


CONFIGS = {
    4: ['command = bracket\nweight = "linear rho=(0,1)"\nbox = "-1:1 x -1:1"\ncount = 200\n'
        'bound_h = "1/100"\nbound_eps = "1/10"\nseed = 3\n',
        'command = bracket\nweight = "parab sign=+ c=1/2"\nbox = "-1:1 x -1:1"\ncount = 200\n'
        'bound_h = "1/100"\nbound_eps = "1/10"\nseed = 3\n'],
    5: ['command = compare\nweight = "linear rho=(1,)"\ngrid = "0:1:81"\n'
        'h = 0.4, 0.283, 0.2, 0.141, 0.1\nseed = 3\n'],
    8: ['command = cauchy\ngrid = "0:1:61"\nweight = \'poly "1 - x1"\'\ndelta = 0.5\n'
        'noise = 1e-1, 1e-2, 1e-3, 1e-4\nu_true = "sin(x1)"\ngamma_faces = "x1-"\nq = 1\nseed = 3\n'],
}


def _csv_outputs(text):
    c = cfg.load(text)
    _, outcome = run(c)
    return {name: csv_text(c, head, rows) for name, (head, rows) in outcome.tables.items()}


def test_criterion_11_determinism(record_criterion):
    same, sizes = True, []
    for crit, texts in CONFIGS.items():
        for text in texts:
            first, second = _csv_outputs(text), _csv_outputs(text)
            same = same and first == second and bool(first)
            sizes.append(f"{crit}:{sum(len(v) for v in first.values())}B")
    record_criterion(11, same, "byte-identical CSV for criteria 4, 5, 8 (" + ", ".join(sizes) + ")")
    assert same
