"""Post-processing of solver output: potentials, maps, projections, energies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InfeasibleError, InvalidParameterError
from .solver import IPFPResult, ScalingState, SparseIPFPResult, TransportPlan, entropic_cost

__all__ = [
    "Potential",
    "MapEstimate",
    "potential_from_scalings",
    "dual_feasibility",
    "relative_linf_error",
    "map_from_plan",
    "project_pair",
    "sce_energy",
]


@dataclass(frozen=True, eq=False)
class Potential:
    """Kantorovich potential sampled on a grid.

    The gauge is ``sum(u * rho) / sum(rho) == anchor``; points without mass
    carry ``nan``.
    """

    points: np.ndarray
    values: np.ndarray
    epsilon: float | None
    anchor: float
    weights: np.ndarray
    kappa: float | None = None

    def __call__(self, x):
        return np.interp(x, self.points, self.values)

    @property
    def gauge_value(self):
        keep = self.weights > 0
        return float(np.dot(self.values[keep], self.weights[keep]) / self.weights[keep].sum())

    def dual_value(self, N):
        """``N * integral(u rho)`` for a probability marginal."""
        return N * self.gauge_value


@dataclass(frozen=True, eq=False)
class MapEstimate:
    """Co-motion estimate read off a two-marginal plan."""

    points: np.ndarray
    barycentric: np.ndarray
    argmax: np.ndarray
    spread: np.ndarray
    valid: np.ndarray


def _gauge(values, weights, anchor):
    keep = weights > 0
    current = np.dot(values[keep], weights[keep]) / weights[keep].sum()
    return values + (anchor - current)


def potential_from_scalings(state, epsilon=None, density=None, kernel=None):
    """Potential ``u = eps * log a``, averaged over the N scaling vectors.

    The product of scalings is only defined up to constants that multiply one
    vector and divide another. Each ``eps * log a_j`` is first shifted so
    that all of them integrate to the same value against ``rho`` (their
    mean); the average of the shifted vectors is returned.

    Parameters
    ----------
    state : ScalingState, IPFPResult or SparseIPFPResult
    epsilon : float, optional
        Taken from the result when omitted.
    density : DiscreteDensity or array, optional
        Marginal used for the gauge; defaults to the result's first marginal.
    kernel : optional
        When given (or available from an ``IPFPResult``), the dual
        feasibility ratio ``kappa`` is computed and attached.
    """
    points = None
    if isinstance(state, (IPFPResult, SparseIPFPResult)):
        if epsilon is None:
            epsilon = state.epsilon
        if density is None:
            density = state.marginals[0]
        if kernel is None and isinstance(state, IPFPResult):
            kernel = state.kernel
        state = state.state
    if not isinstance(state, ScalingState):
        raise InvalidParameterError("expected a ScalingState or a solver result")
    if epsilon is None:
        raise InvalidParameterError("epsilon is required")
    if hasattr(density, "grid"):
        points = np.asarray(density.points)
    elif kernel is not None:
        points = np.asarray(kernel.grid.points)
    rho = np.asarray(getattr(density, "weights", density), dtype=float)
    if points is None:
        points = np.arange(rho.size, dtype=float)
    logs = state.log_vectors()
    us = []
    for j, f in enumerate(logs):
        bad = np.nonzero((rho > 0) & ~(f > -np.inf))[0]
        if bad.size:
            raise InfeasibleError(
                f"scaling {j} vanishes at index {int(bad[0])} where rho > 0",
                axis=j, index=int(bad[0]),
            )
        us.append(np.where(rho > 0, epsilon * f, np.nan))
    keep = rho > 0
    integrals = [np.dot(u[keep], rho[keep]) / rho[keep].sum() for u in us]
    anchor = float(np.mean(integrals))
    u = np.mean([_gauge(v, rho, anchor) for v in us], axis=0)
    kappa = None
    if kernel is not None:
        kappa = dual_feasibility(u, kernel, len(logs))
    return Potential(points, u, float(epsilon), anchor, rho, kappa)


def dual_feasibility(u, kernel, N=None, max_tuples=2e7, seed=0):
    """Largest violation of ``sum_i u(x_i) <= c`` in units of ``eps``.

    Returns ``kappa = max(0, max(sum u - c)) / eps``, exact over all tuples
    when ``M**N <= max_tuples``, otherwise over a seeded random sample.
    """
    u = np.asarray(getattr(u, "values", u), dtype=float)
    N = N or getattr(kernel, "N", None) or kernel.spec.N
    M = u.size
    uu = np.where(np.isnan(u), -np.inf, u)
    worst = -np.inf
    if M ** N <= max_tuples and N == 2:
        with np.errstate(invalid="ignore"):
            gap = uu[:, None] + uu[None, :] - kernel.pair_cost
        worst = np.nanmax(gap)
    elif M ** N <= max_tuples and N == 3:
        for i in range(M):
            if uu[i] == -np.inf:
                continue
            with np.errstate(invalid="ignore"):
                gap = uu[i] + uu[:, None] + uu[None, :] - kernel.cost_slice(i)
            worst = max(worst, np.nanmax(gap))
    else:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, M, size=(int(min(max_tuples, 1e6)), N))
        with np.errstate(invalid="ignore"):
            gap = uu[idx].sum(axis=1) - kernel.tuple_cost(idx)
        worst = np.nanmax(gap)
    return max(0.0, float(worst)) / kernel.epsilon


def relative_linf_error(u_num, u_exact, mask=None):
    """``min_c ||u_num + c - u_exact||_inf / ||u_exact||_inf``.

    Potentials are defined up to an additive constant; the optimal constant
    for the sup norm is the midrange of the difference.
    """
    u_num = np.asarray(getattr(u_num, "values", u_num), dtype=float)
    u_exact = np.asarray(u_exact, dtype=float)
    keep = np.isfinite(u_num) & np.isfinite(u_exact)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    d = u_num[keep] - u_exact[keep]
    shift = 0.5 * (d.max() + d.min())
    return float(np.abs(d - shift).max() / np.abs(u_exact[keep]).max())


def _pair_array(plan, source_axis, target_axis):
    if isinstance(plan, IPFPResult):
        return plan.pair_marginal(source_axis, target_axis)
    if isinstance(plan, SparseIPFPResult):
        plan = plan.plan()
    if isinstance(plan, TransportPlan):
        return plan.pair_marginal(source_axis, target_axis)
    arr = np.asarray(plan, dtype=float)
    if arr.ndim < 2:
        raise InvalidParameterError("pass a plan array or a solver result")
    if arr.ndim > 2:
        return TransportPlan.from_dense(arr).pair_marginal(source_axis, target_axis)
    return arr if source_axis < target_axis else arr.T


def map_from_plan(plan, source_points, target_points=None, source_axis=0, target_axis=1):
    """Conditional mean and mode of the target given the source.

    Rows without mass are reported as invalid (``nan`` estimates).
    """
    P = _pair_array(plan, source_axis, target_axis)
    x = np.asarray(source_points, dtype=float)
    y = x if target_points is None else np.asarray(target_points, dtype=float)
    mass = P.sum(axis=1)
    valid = mass > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        bary = (P @ y) / mass
        centered = np.where(valid[:, None], y[None, :] - bary[:, None], 0.0)
        spread = np.sqrt(np.einsum("ij,ij->i", P, centered * centered) / mass)
    am = y[np.argmax(P, axis=1)]
    nan = np.full(x.size, np.nan)
    return MapEstimate(
        x,
        np.where(valid, bary, nan),
        np.where(valid, am, nan),
        np.where(valid, spread, nan),
        valid,
    )


def project_pair(plan, axes=(0, 1)):
    """Sum a plan over every axis not in ``axes``."""
    i, j = axes
    return _pair_array(plan, i, j)


def sce_energy(plan, cost):
    """Coulomb energy ``<c, plan>`` of a plan.

    ``cost`` is a kernel (dense or sparse plans) or a dense cost array.
    Returns ``inf`` when mass sits on an infinite-cost cell.
    """
    if isinstance(plan, IPFPResult):
        return plan.transport_cost()
    if isinstance(plan, SparseIPFPResult):
        plan = plan.plan()
    value, _, _, flagged = entropic_cost(plan, cost, epsilon=math.nan)
    return math.inf if flagged else value
