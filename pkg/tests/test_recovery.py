import math

import numpy as np
import pytest

from mmot.analytic_oracles import comotion_uniform_N2, potential_uniform_N2, potential_uniform_N3
from mmot.cost import CoulombCostSpec, build_kernel
from mmot.densities import Grid1D, make_uniform, make_uniform_interval
from mmot.exceptions import InfeasibleError
from mmot.recovery import (
    dual_feasibility,
    map_from_plan,
    potential_from_scalings,
    project_pair,
    relative_linf_error,
    sce_energy,
)
from mmot.solver import ScalingState, SolverConfig, TransportPlan, ipfp_solve


def test_equal_scalings_give_constant_potential():
    d = make_uniform(2, 10)
    state = ScalingState([np.full(10, 2.0), np.full(10, 2.0)], 0, False)
    u = potential_from_scalings(state, 0.1, d)
    np.testing.assert_allclose(u.values, 0.1 * math.log(2.0), rtol=1e-14)
    assert u.gauge_value == pytest.approx(u.anchor, abs=1e-12)


def test_gauge_trade_between_scalings_is_invisible():
    d = make_uniform(2, 10)
    rng = np.random.default_rng(0)
    a = rng.uniform(0.5, 2, 10)
    u1 = potential_from_scalings(ScalingState([a, a], 0, False), 0.1, d)
    u2 = potential_from_scalings(ScalingState([3 * a, a / 3], 0, False), 0.1, d)
    np.testing.assert_allclose(u1.values, u2.values, rtol=1e-13)


def test_zero_scaling_on_mass_is_infeasible():
    d = make_uniform(2, 4)
    state = ScalingState([np.array([1.0, 0.0, 1.0, 1.0])] * 2, 0, False)
    with pytest.raises(InfeasibleError) as exc:
        potential_from_scalings(state, 0.1, d)
    assert exc.value.index == 1


def test_relative_error_ignores_constants():
    x = np.linspace(-1, 1, 11)
    u = potential_uniform_N2(2)(x)
    assert relative_linf_error(u + 3.0, u) == 0.0
    assert relative_linf_error(u + 0.1 * x, u) == pytest.approx(0.1, rel=1e-12)


def test_point_plan_maps_are_exact():
    d = make_uniform(2, 20)
    f = comotion_uniform_N2(2)
    j = np.rint((f(d.points) + 1) * 10 - 0.5).astype(int)
    P = np.zeros((20, 20))
    P[np.arange(20), j] = 1 / 20
    est = map_from_plan(P, d.points)
    np.testing.assert_allclose(est.barycentric, f(d.points), atol=1e-14)
    np.testing.assert_allclose(est.argmax, f(d.points), atol=1e-14)
    np.testing.assert_allclose(est.spread, 0, atol=1e-14)


def test_empty_rows_are_gaps():
    P = np.array([[0.5, 0.0], [0.0, 0.0]])
    est = map_from_plan(P, [0.0, 1.0])
    assert est.valid.tolist() == [True, False]
    assert math.isnan(est.barycentric[1])


def test_product_projection():
    rho = np.array([0.2, 0.3, 0.5])
    P = rho[:, None, None] * rho[None, :, None] * rho[None, None, :]
    np.testing.assert_allclose(project_pair(P, (0, 2)), np.outer(rho, rho), rtol=1e-14)
    coords = np.argwhere(P > 0)
    sp = TransportPlan.from_coords(P.shape, coords, P[tuple(coords.T)])
    np.testing.assert_allclose(project_pair(sp, (1, 2)), np.outer(rho, rho), rtol=1e-14)


def test_point_triple_energy():
    grid = Grid1D.from_points([0.0, 1 / 3, 2 / 3])
    k = build_kernel(CoulombCostSpec(3), grid, 1.0)
    plan = TransportPlan.from_coords((3, 3, 3), [[0, 1, 2]], [1.0])
    assert sce_energy(plan, k) == pytest.approx(7.5, rel=1e-14)
    assert sce_energy(TransportPlan.from_coords((3, 3, 3), [[0, 0, 2]], [1.0]), k) == math.inf


def test_dual_feasibility_of_exact_potential():
    d = make_uniform(2, 200)
    k = build_kernel(CoulombCostSpec(2), d.grid, 0.01)
    u = potential_uniform_N2(2)(d.points)
    # u(x) + u(y) <= 1/|x - y| with equality on the graph
    assert dual_feasibility(u, k) == pytest.approx(0.0, abs=1e-9)
    assert dual_feasibility(u + 0.01, k) == pytest.approx(2.0, rel=1e-9)


def test_sampled_feasibility_agrees_with_exact():
    d = make_uniform_interval(0, 1, 30)
    k = build_kernel(CoulombCostSpec(3), d.grid, 0.05)
    u = potential_uniform_N3()(d.points) + 0.02
    exact = dual_feasibility(u, k)
    sampled = dual_feasibility(u, k, max_tuples=20000)
    assert 0 < sampled <= exact + 1e-12


@pytest.fixture(scope="module")
def three_electrons():
    d = make_uniform_interval(0, 1, 60)
    k = build_kernel(CoulombCostSpec(3), d.grid, 0.02)
    return d, ipfp_solve(k, d, SolverConfig(0.02, max_sweeps=20000))


def test_pair_projections_agree(three_electrons):
    _, r = three_electrons
    a, b, c = (project_pair(r, ax) for ax in ((0, 1), (0, 2), (1, 2)))
    assert np.abs(a - b).max() <= 1e-10
    assert np.abs(a - c).max() <= 1e-10


def test_pair_projection_marginals(three_electrons):
    d, r = three_electrons
    P = project_pair(r, (0, 1))
    tol = 1e-10 * d.weights.max() * 10
    np.testing.assert_allclose(P.sum(axis=0), d.weights, atol=tol)
    np.testing.assert_allclose(P.sum(axis=1), d.weights, atol=tol)


def test_pair_projection_follows_both_maps(three_electrons):
    d, r = three_electrons
    P = project_pair(r, (0, 1))
    x, h = d.points, 1 / d.size
    dx = x[None, :] - x[:, None]
    # the symmetric plan charges the graphs of f2 and of f3 = f2^-1
    dist = np.min([np.abs(dx - s) for s in (1 / 3, -2 / 3, 2 / 3, -1 / 3)], axis=0)
    assert P[dist <= 2 * h + 1e-12].sum() >= 0.9


def test_three_electron_weak_duality(three_electrons):
    d, r = three_electrons
    u = potential_from_scalings(r)
    assert u.kappa is not None and u.kappa <= 1.0
    assert u.dual_value(3) <= sce_energy(r, r.kernel) + u.kappa * r.epsilon + 1e-12
    assert relative_linf_error(u, potential_uniform_N3()(d.points)) < 0.01


def test_two_electron_map_and_duality():
    d = make_uniform(2, 1000)
    r = ipfp_solve(build_kernel(CoulombCostSpec(2), d.grid, 0.004), d, SolverConfig(0.004))
    assert r.converged
    x, h = d.points, 2 / d.size
    f = comotion_uniform_N2(2)(x)
    est = map_from_plan(r, x)
    # skip 5% of the support length at the jump and at the endpoints
    inner = (np.abs(x) > 0.1) & (np.abs(x) < 0.9)
    assert np.max(np.abs(est.barycentric - f)[inner]) <= 2 * h
    # composing the estimate with itself returns within its spread
    back = np.interp(est.barycentric, x, est.barycentric)
    assert np.all(np.abs(back - x)[inner] <= 2 * est.spread[inner] + 2 * h)
    u = potential_from_scalings(r)
    energy = sce_energy(r, r.kernel)
    assert u.dual_value(2) <= energy + u.kappa * r.epsilon + 1e-12
    assert energy == pytest.approx(1.0, abs=0.01)
