import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmot.cost import (
    CoulombCostSpec,
    build_kernel,
    coulomb_pair,
    coulomb_total,
    reduced_cost,
    reduced_cost_angles,
)
from mmot.densities import Grid1D, make_uniform
from mmot.exceptions import InvalidParameterError
from oracle_tools import angular_grid_min, planar_cost, random_sphere_min


def test_pair_examples():
    assert coulomb_pair(0.0, 1.0) == 1.0
    assert coulomb_pair([0, 0, 0], [0, 0, 2]) == 0.5
    assert coulomb_pair(0.3, 0.3) == math.inf


def test_total_three_points():
    assert coulomb_total([0, 1 / 3, 2 / 3]) == pytest.approx(7.5, rel=1e-14)
    assert coulomb_total([0.2, 0.9]) == coulomb_pair(0.2, 0.9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6, unique=True), st.randoms())
def test_total_permutation_invariant(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert coulomb_total(xs) == coulomb_total(ys)


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        CoulombCostSpec(N=1)
    with pytest.raises(InvalidParameterError):
        CoulombCostSpec(N=2, d=1, mode="radial")
    with pytest.raises(InvalidParameterError):
        CoulombCostSpec(N=4, d=3, mode="radial")
    assert CoulombCostSpec(N=3, d=3, mode="radial").separable is False


def test_reduced_two_electrons():
    assert reduced_cost((1, 1)) == 0.5
    assert reduced_cost((1, 2)) == pytest.approx(1 / 3)
    assert reduced_cost((0, 0)) == math.inf
    assert reduced_cost_angles((0.3, 0.8))[1] == (math.pi,)


@pytest.mark.parametrize("r", [(1.0, 1.0, 1.0), (0.5, 1.0, 2.0), (1.0, 0.2, 0.7)])
def test_reduced_three_matches_grid_oracle(r):
    ours = reduced_cost(r)
    assert ours == pytest.approx(angular_grid_min(r), abs=1e-8)


def test_equal_radii_is_equilateral():
    assert reduced_cost((1, 1, 1)) == pytest.approx(3 / math.sqrt(3), rel=1e-10)


@pytest.mark.parametrize("r", [(1.0, 1.0, 1.0), (0.5, 1.0, 2.0), (0.3, 0.3, 1.5)])
def test_reduced_below_random_placements(r):
    assert np.min(random_sphere_min(r)) >= reduced_cost(r) - 1e-8


@settings(max_examples=25, deadline=None)
@given(st.tuples(*[st.floats(0.05, 3.0)] * 3), st.permutations(range(3)))
def test_reduced_symmetric(r, perm):
    s = tuple(r[k] for k in perm)
    assert reduced_cost(s) == pytest.approx(reduced_cost(r), rel=1e-9)


def test_reduced_angles_reproduce_value():
    r = (0.4, 1.1, 0.9)
    v, (t2, t3) = reduced_cost_angles(r)
    assert planar_cost(r, t2, t3) == pytest.approx(v, rel=1e-12)
    assert 0 <= t2 <= math.pi and 0 <= t3 < 2 * math.pi


def test_kernel_entry_and_diagonal():
    grid = Grid1D.from_points([0.0, 1.0, 3.0])
    k = build_kernel(CoulombCostSpec(2), grid, 1.0)
    assert k.factor[0, 1] == pytest.approx(math.exp(-1))
    np.testing.assert_array_equal(np.diag(k.factor), 0.0)
    np.testing.assert_array_equal(k.factor, k.factor.T)


def test_kernel_rejects_bad_epsilon():
    grid = make_uniform(2, 10).grid
    for eps in (0, -1):
        with pytest.raises(InvalidParameterError):
            build_kernel(CoulombCostSpec(2), grid, eps)


def test_table_one_kernel_underflow_is_flushed():
    grid = make_uniform(2, 1000).grid
    k = build_kernel(CoulombCostSpec(2), grid, 0.004)
    f = k.factor
    assert np.all((f == 0) | (f >= np.finfo(float).tiny))
    assert np.all((f >= 0) & (f <= 1))


def test_kernel_decreases_with_epsilon():
    grid = make_uniform(2, 30).grid
    a = build_kernel(CoulombCostSpec(2), grid, 0.5).factor
    b = build_kernel(CoulombCostSpec(2), grid, 0.1).factor
    finite = np.isfinite(build_kernel(CoulombCostSpec(2), grid, 0.5).pair_cost)
    assert np.all(b[finite] <= a[finite])


def test_three_marginal_tuple_cost_matches_total():
    grid = Grid1D.uniform(0, 1, 6)
    k = build_kernel(CoulombCostSpec(3), grid, 0.3)
    idx = np.array([[0, 2, 5], [1, 3, 4]])
    expected = [coulomb_total(grid.points[i]) for i in idx]
    np.testing.assert_allclose(k.tuple_cost(idx), expected, rtol=1e-14)
    dense = k.cost_dense()
    assert dense[0, 2, 5] == pytest.approx(expected[0])
    np.testing.assert_allclose(k.slice(1), np.exp(-dense[1] / 0.3), rtol=1e-12)


def test_radial_three_kernel_uses_reduced_cost():
    grid = Grid1D.uniform(0, 2, 5)
    k = build_kernel(CoulombCostSpec(3, d=3, mode="radial"), grid, 0.5)
    r = grid.points
    assert k.cost_dense()[0, 3, 4] == pytest.approx(reduced_cost((r[0], r[3], r[4])),
                                                   rel=1e-12)
    c = k.cost_dense()
    assert c[1, 2, 4] == c[4, 1, 2] == c[2, 4, 1]
