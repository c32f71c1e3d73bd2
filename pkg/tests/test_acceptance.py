"""Acceptance runs: one test per criterion, each printing a PASS/FAIL line.

Set ``MMOT_LONG=1`` to add the three-electron ladder at M=1000.
"""

import os
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmot.analytic_oracles import (
    comotion_multi_1d,
    comotion_triangular,
    comotion_uniform_N2,
    potential_from_maps,
    potential_uniform_N2,
    potential_uniform_N3,
    pushforward_error,
)
from mmot.cost import CoulombCostSpec, build_kernel
from mmot.densities import Grid1D, make_ball, make_triangular, make_uniform, make_uniform_interval
from mmot.radial import radial_comotion_N2, reduce_problem
from mmot.recovery import map_from_plan, potential_from_scalings, relative_linf_error
from mmot.refine import RefinementConfig, plan_refine_step, refine_solve
from mmot.solver import SolverConfig, bregman_solve, ipfp_solve, kl_project
from oracle_tools import coulomb_matrix, lp_permutation_optimum, random_polynomials

LONG = bool(os.environ.get("MMOT_LONG"))

# reference errors for the uniform ladders
REF_N2 = {0.256: 0.1529, 0.128: 0.0984, 0.064: 0.0578, 0.032: 0.0313,
          0.016: 0.0151, 0.008: 0.0049, 0.004: 0.0045}
REF_N3 = {0.32: 0.0658, 0.16: 0.0373, 0.08: 0.0198, 0.04: 0.0091, 0.02: 0.0040}


def _ladder(density, N, exact, eps_list, max_sweeps=20000):
    kernel_spec = CoulombCostSpec(N)
    errs, sweeps = [], []
    for eps in eps_list:
        k = build_kernel(kernel_spec, density.grid, eps)
        r = ipfp_solve(k, density, SolverConfig(eps, max_sweeps=max_sweeps))
        errs.append(relative_linf_error(potential_from_scalings(r), exact))
        sweeps.append(r.sweeps)
    return errs, sweeps


def test_criterion_1_two_electron_ladder(acceptance):
    d = make_uniform(2, 1000)
    eps = list(REF_N2)
    t = time.time()
    errs, sweeps = _ladder(d, 2, potential_uniform_N2(2)(d.points), eps)
    ratios = [e / REF_N2[k] for e, k in zip(errs, eps)]
    within = all(0.5 <= q <= 2 for q in ratios)
    monotone = all(b <= a for a, b in zip(errs, errs[1:]))
    detail = ("errors " + ", ".join(f"{e:.4f}" for e in errs)
              + f"; ratio range [{min(ratios):.2f}, {max(ratios):.2f}]; sweeps {sweeps}"
              + f"; {time.time() - t:.0f}s")
    acceptance("1", within and monotone, detail)
    assert within and monotone


def test_criterion_2_three_electron_trend(acceptance):
    M = 1000 if LONG else 200
    d = make_uniform_interval(0, 1, M)
    eps = list(REF_N3)
    t = time.time()
    errs, sweeps = _ladder(d, 3, potential_uniform_N3()(d.points), eps)
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ok = decreasing and errs[-1] < 0.02
    if LONG:
        ok = ok and all(0.5 <= e / REF_N3[k] <= 2 for e, k in zip(errs, eps))
    detail = (f"M={M} errors " + ", ".join(f"{e:.4f}" for e in errs)
              + f"; sweeps {sweeps}; {time.time() - t:.0f}s")
    acceptance("2", ok, detail)
    assert ok


def test_criterion_3_bregman_equals_ipfp(acceptance):
    rng = np.random.default_rng(2024)
    worst, converged = 0.0, 0
    for _ in range(20):
        N = int(rng.integers(2, 4))
        M = int(rng.integers(N + 1, 11))
        grid = Grid1D.from_points(np.sort(rng.uniform(-1, 1, M)))
        # collisions cost infinity, so a plan exists only when no point
        # carries 1/N of the mass or more
        rho = np.ones(M)
        while rho.max() >= 0.9 / N:
            rho = rng.uniform(0.1, 1, M)
            rho /= rho.sum()
        eps = float(rng.uniform(0.2, 1.0))
        k = build_kernel(CoulombCostSpec(N), grid, eps)
        cfg = SolverConfig(eps, tolerance=1e-13, max_sweeps=50000)
        b = bregman_solve(k, rho, cfg)
        i = ipfp_solve(k, rho, cfg)
        converged += b.converged and i.converged
        worst = max(worst, float(np.abs(b.plan.weights - i.plan().weights).max()))
    ok = worst <= 1e-8 and converged == 20
    acceptance("3", ok, f"max entrywise difference {worst:.2e}; "
               f"{converged}/20 instances converged")
    assert ok


def test_criterion_4_lp_limit(acceptance):
    d = make_uniform(2, 8)
    exact = lp_permutation_optimum(coulomb_matrix(d.points))
    costs = []
    for eps in (0.1, 0.05, 0.02, 0.01):
        k = build_kernel(CoulombCostSpec(2), d.grid, eps)
        costs.append(ipfp_solve(k, d, SolverConfig(eps, tolerance=1e-14,
                                                   max_sweeps=100000)).transport_cost())
    decreasing = all(b <= a for a, b in zip(costs, costs[1:]))
    gap = costs[-1] - exact
    ok = decreasing and 0 <= gap <= 1e-3
    acceptance("4", ok, "costs " + ", ".join(f"{c:.6f}" for c in costs)
               + f"; LP optimum {exact:.6f}; final gap {gap:.2e}")
    assert ok


def test_criterion_5_oracle_properties(acceptance):
    tests = random_polynomials(np.random.default_rng(11), n=20, degree=4)
    decay = {}
    for M in (100, 1000):
        u01 = make_uniform_interval(0, 1, M)
        f2, f3 = comotion_multi_1d(u01, 3)
        cases = {"uniform": (comotion_uniform_N2(2), make_uniform(2, M)),
                 "triangular": (comotion_triangular(1), make_triangular(1, M)),
                 "f2": (f2, u01), "f3": (f3, u01),
                 "radial": (radial_comotion_N2(make_ball(3, M)), make_ball(3, M))}
        for name, (f, rho) in cases.items():
            decay.setdefault(name, []).append(pushforward_error(f, rho, tests))
    first_order = all(e[1] <= 20 / 1000 and e[1] <= max(e[0] / 5, 1e-12)
                      for e in decay.values())
    x = make_uniform(2, 1000).points
    y = make_triangular(1, 1000).points
    inv = max(np.abs(comotion_uniform_N2(2)(comotion_uniform_N2(2)(x)) - x).max(),
              np.abs(comotion_triangular(1)(comotion_triangular(1)(y)) - y).max())
    u01 = make_uniform_interval(0, 1, 1000)
    f2, _ = comotion_multi_1d(u01, 3)
    cyc = np.abs(f2(f2(f2(u01.points))) - u01.points).max()
    u = potential_from_maps(comotion_multi_1d(u01, 3), u01)
    pot = np.abs(u.values - potential_uniform_N3()(u01.points)).max()
    ok = first_order and inv <= 1e-10 and cyc <= 1e-10 and pot <= 1e-3
    detail = (f"pushforward M=1000 max {max(e[1] for e in decay.values()):.1e}; "
              f"involution {inv:.1e}; cycle {cyc:.1e}; potential {pot:.1e}")
    acceptance("5", ok, detail)
    assert ok


def test_criterion_6_radial_ball(acceptance):
    lam = make_ball(3, 1000)
    prob = reduce_problem(
        type(lam).from_unnormalized(lam.grid, lam.grid.cell_weights), 3, 2)
    eps = 0.002
    t = time.time()
    res = ipfp_solve(prob.kernel(eps), prob.lam, SolverConfig(eps, max_sweeps=20000))
    r, h = prob.grid.points, prob.grid.cell_weights[0]
    a = radial_comotion_N2(prob.lam)(r)
    est = map_from_plan(res, r)
    cdf = np.cumsum(prob.lam.weights)
    inner = (cdf > 0.05) & (cdf < 0.95)
    map_err = float(np.max(np.abs(est.barycentric - a)[inner]) / h)
    P = res.plan().weights
    target = np.clip(np.floor(a / h).astype(int), 0, r.size - 1)
    cols = np.arange(r.size)
    band = np.abs(cols[None, :] - target[:, None]) <= 10
    band_mass = float(P[band].sum())
    ok = res.converged and map_err <= 2 and band_mass >= 0.95
    detail = (f"converged={res.converged} sweeps={res.sweeps}; map error {map_err:.1f} cells"
              f" (limit 2); band mass {band_mass:.3f} (limit 0.95); {time.time() - t:.0f}s")
    acceptance("6", ok, detail)
    assert ok


def test_criterion_7_refinement(acceptance):
    d = make_uniform(2, 200)
    t = time.time()
    out = refine_solve(d, CoulombCostSpec(2), SolverConfig(0.01, max_sweeps=20000),
                       RefinementConfig(0.9, 3))
    errs = []
    for lv in out.levels:
        u = potential_from_scalings(lv.result)
        errs.append(relative_linf_error(u, potential_uniform_N2(2)(lv.grid.points)))
    active = [lv.active_cells for lv in out.levels]
    three = len(out.levels) == 3
    better = three and errs[-1] < errs[0]
    budget = all(a <= 2 * active[0] and a >= active[0] / 2 for a in active)
    ok = better and budget
    detail = (f"levels {len(out.levels)} ({out.stopped_reason or 'complete'}); errors "
              + ", ".join(f"{e:.4f}" for e in errs) + f"; active cells {active}"
              + f"; {time.time() - t:.0f}s")
    acceptance("7", ok, detail)
    assert ok


plans = st.integers(2, 6).flatmap(
    lambda M: st.tuples(st.just(M), st.integers(0, 2**31 - 1), st.integers(2, 3)))


@settings(max_examples=40, deadline=None)
@given(plans)
def _projection_properties(case):
    M, seed, N = case
    rng = np.random.default_rng(seed)
    P = rng.uniform(0.05, 1, size=(M,) * N)
    rho = rng.uniform(0.1, 1, M)
    rho /= rho.sum()
    for axis in range(N):
        Q = kl_project(P, rho, axis)
        other = tuple(a for a in range(N) if a != axis)
        np.testing.assert_allclose(Q.sum(axis=other), rho, rtol=1e-12)
        np.testing.assert_allclose(kl_project(Q, rho, axis), Q, rtol=1e-12)


def test_criterion_8_structural_invariants(acceptance):
    failures = []
    try:
        _projection_properties()
    except AssertionError as exc:
        failures.append(f"projection: {exc}")

    kappas, sym, mass = [], 0.0, 0.0
    runs = [(make_uniform(2, 150), 2, 0.02), (make_uniform(2, 300), 2, 0.008),
            (make_uniform_interval(0, 1, 40), 3, 0.05), (make_triangular(1, 120), 2, 0.02)]
    for d, N, eps in runs:
        r = ipfp_solve(build_kernel(CoulombCostSpec(N), d.grid, eps), d, SolverConfig(eps))
        if not r.converged:
            failures.append(f"run N={N} eps={eps} did not converge")
            continue
        W = r.plan().weights
        sym = max(sym, float(np.abs(W - np.swapaxes(W, 0, 1)).max()))
        u = potential_from_scalings(r)
        kappas.append(u.kappa)
        if u.dual_value(N) > r.transport_cost() + u.kappa * eps + 1e-12:
            failures.append(f"weak duality N={N} eps={eps}")
        if N == 2:
            _, fine_plan, _ = plan_refine_step(r, d.grid, RefinementConfig(0.9, 2))
            mass = max(mass, abs(fine_plan.values.sum() - 1.0))
    if sym > 1e-10:
        failures.append(f"symmetry {sym:.1e}")
    if mass > 1e-12:
        failures.append(f"mass {mass:.1e}")
    if max(kappas) > 1.0:
        failures.append(f"kappa {max(kappas):.2f}")
    ok = not failures
    detail = (f"symmetry {sym:.1e}; interpolated mass error {mass:.1e}; kappa per run "
              + ", ".join(f"{k:.3f}" for k in kappas)
              + ("" if ok else "; " + "; ".join(failures)))
    acceptance("8", ok, detail)
    assert ok


@pytest.mark.skipif(not LONG, reason="set MMOT_LONG=1")
def test_criterion_2_long_mode_runs():
    # the long ladder is exercised by test_criterion_2 itself when MMOT_LONG is set
    assert LONG
