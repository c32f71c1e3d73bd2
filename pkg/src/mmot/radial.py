"""Reduction of spherically symmetric problems to problems over radii."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .analytic_oracles import ComotionMap
from .cost import CoulombCostSpec, build_kernel, reduced_cost_angles
from .densities import DiscreteDensity, Grid1D, inverse_cdf, quantile, radialize, sphere_measure
from .exceptions import InvalidParameterError

__all__ = [
    "RadialProblem",
    "radial_comotion_N2",
    "reduce_problem",
    "angular_report",
    "radial_grid",
    "lift_antipodal",
    "full_space_cost",
    "radial_component_cost",
]


@dataclass(frozen=True, eq=False)
class RadialProblem:
    """Transport problem over radii with the angle-minimized Coulomb cost."""

    lam: DiscreteDensity
    d: int
    N: int

    @property
    def spec(self):
        return CoulombCostSpec(N=self.N, d=self.d, mode="radial")

    @property
    def grid(self):
        return self.lam.grid

    def kernel(self, epsilon):
        return build_kernel(self.spec, self.lam.grid, epsilon)

    def marginals(self):
        return [self.lam] * self.N


def radial_comotion_N2(lam):
    """Map ``a(r) = R^{-1}(m - R(r))`` between radii for two electrons.

    ``R`` is the cdf of ``lam`` and ``m`` its total mass, so the map swaps
    inner and outer mass: the partner of an electron at the median radius
    sits at the median radius too. In space the partner is at
    ``-a(|x|) x / |x|`` (see :func:`lift_antipodal`).
    """
    q = quantile(lam)
    m = q.total_mass

    def a(r):
        return inverse_cdf(q, np.clip(m - q(r), 0.0, m))

    return ComotionMap(a, lam.grid.bounds, "radial-N2", ())


def reduce_problem(rho_radial, d, N):
    """Build the radial problem for a radially symmetric density.

    Parameters
    ----------
    rho_radial : DiscreteDensity
        Values of ``rho(|x|)`` on a grid of radii, i.e. ``weights`` equal to
        ``rho(r_k) * dr``.
    d : int
        Space dimension, 2 or 3.
    N : int
        Number of electrons, 2 or 3.
    """
    CoulombCostSpec(N=N, d=d, mode="radial")
    return RadialProblem(radialize(rho_radial, d), d, N)


def angular_report(radii, d=3, N=None):
    """Optimal relative angles for a tuple of radii.

    Returns ``(cost, angles)``: ``(pi,)`` for two electrons, ``(theta2,
    theta3)`` measured from the first electron for three.
    """
    radii = tuple(float(r) for r in radii)
    if N is not None and N != len(radii):
        raise InvalidParameterError("N must equal the number of radii")
    return reduced_cost_angles(radii, d)


def radial_grid(profile, d, M, tail=1e-8, r_max=None):
    """Radial marginal of a density given as a function of ``|x|``.

    The box ``[0, r_max]`` is grown by doubling until the mass beyond it is
    below ``tail`` times the total, unless ``r_max`` is given.

    Parameters
    ----------
    profile : callable
        ``rho(r)``, vectorized over ``r >= 0``.
    """
    C = sphere_measure(d)

    def shell(r):
        return C * r ** (d - 1) * profile(r)

    if r_max is None:
        total = integrate.quad(shell, 0, np.inf, limit=200)[0]
        if not total > 0:
            raise InvalidParameterError("profile has no mass")
        r_max = 1.0
        while integrate.quad(shell, r_max, np.inf, limit=200)[0] > tail * total:
            r_max *= 2
    grid = Grid1D.uniform(0.0, r_max, M)
    rho = DiscreteDensity.from_unnormalized(grid, profile(grid.points) * grid.cell_weights)
    return radialize(rho, d)


def lift_antipodal(coords, weights, radii, d, rng=None):
    """Place a two-electron radial plan in space on antipodal rays.

    Each support pair ``(r1, r2)`` becomes ``(r1 w, -r2 w)`` for a random
    unit vector ``w``. Returns positions of shape ``(n, 2, d)`` and the
    weights.
    """
    rng = np.random.default_rng(rng)
    coords = np.asarray(coords)
    w = rng.normal(size=(coords.shape[0], d))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    r = np.asarray(radii)[coords]
    pos = np.stack([r[:, 0, None] * w, -r[:, 1, None] * w], axis=1)
    return pos, np.asarray(weights, dtype=float)


def full_space_cost(positions, weights):
    """``sum_k w_k sum_{i<j} 1/|x_i - x_j|`` for configurations in R^d."""
    positions = np.asarray(positions, dtype=float)
    total = np.zeros(positions.shape[0])
    n = positions.shape[1]
    for i in range(n):
        for j in range(i + 1, n):
            total += 1.0 / np.linalg.norm(positions[:, i] - positions[:, j], axis=1)
    return float(np.dot(total, weights))


def radial_component_cost(positions, weights, d):
    """Reduced cost of the radii of spatial configurations.

    By construction this never exceeds :func:`full_space_cost` on the same
    configurations.
    """
    radii = np.linalg.norm(np.asarray(positions, dtype=float), axis=2)
    vals = np.array([reduced_cost_angles(tuple(r), d)[0] for r in radii])
    return float(np.dot(vals, weights))
