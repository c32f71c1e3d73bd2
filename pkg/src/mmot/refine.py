"""Coarse-to-fine sparse refinement of entropic plans.

Each round keeps the cells of a converged plan that lie above a fraction
``xi`` of the smallest row/column maximum, refines the grid so that the
number of active cells stays roughly constant, interpolates the plan onto the
children of the kept cells and re-solves there.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cost import CoulombCostSpec, build_kernel
from .densities import DiscreteDensity, Grid1D
from .exceptions import InvalidParameterError, MMOTError
from .solver import (
    IPFPResult,
    ScalingState,
    SolverConfig,
    TransportPlan,
    ipfp_solve,
    ipfp_solve_sparse,
)

__all__ = [
    "RefinementConfig",
    "SupportMask",
    "LevelResult",
    "RefineResult",
    "threshold_support",
    "plan_refine_step",
    "refine_solve",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefinementConfig:
    """``xi`` sets the kept level curve ``gamma = xi * m``.

    ``levels`` counts solves, so ``levels=1`` is a plain coarse solve.
    ``epsilon_ladder`` optionally gives one epsilon per level. ``halo``
    widens the kept coarse set by that many cells before refining, so that
    the level curve is cut on the interpolated fine plan rather than on the
    coarse cell boundaries.
    """

    xi: float = 0.9
    levels: int = 3
    target_active_cells: int | None = None
    epsilon_ladder: tuple | None = None
    halo: int = 0

    def __post_init__(self):
        if not 0 < self.xi < 1:
            raise InvalidParameterError("xi must lie in (0, 1)")
        if int(self.levels) != self.levels or self.levels < 1:
            raise InvalidParameterError("levels must be an integer >= 1")
        if self.epsilon_ladder is not None and len(self.epsilon_ladder) < self.levels:
            raise InvalidParameterError("epsilon_ladder needs one entry per level")
        if int(self.halo) != self.halo or self.halo < 0:
            raise InvalidParameterError("halo must be a nonnegative integer")


@dataclass(frozen=True, eq=False)
class SupportMask:
    """Active cells ``coords`` (``(n, N)`` indices) of a plan on ``grid``."""

    coords: np.ndarray
    shape: tuple
    grid: Grid1D | None = None

    @property
    def size(self):
        return int(self.coords.shape[0])

    def contains(self, index):
        keys = np.ravel_multi_index(tuple(self.coords.T), self.shape)
        q = np.ravel_multi_index(tuple(np.atleast_2d(index).T), self.shape)
        return np.isin(q, keys)


@dataclass
class LevelResult:
    level: int
    grid: Grid1D
    density: DiscreteDensity
    result: object
    active_cells: int
    m: float | None = None
    report: dict = field(default_factory=dict)

    def plan(self):
        p = self.result.plan()
        return p if isinstance(p, TransportPlan) else TransportPlan.from_dense(p)


@dataclass
class RefineResult:
    levels: list
    stopped_reason: str | None = None

    @property
    def final(self):
        return self.levels[-1]

    def report(self):
        return [lv.report for lv in self.levels]

    def write_report(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.report(), fh, indent=2)


def _as_plan(plan):
    if isinstance(plan, TransportPlan):
        return plan
    if hasattr(plan, "plan"):
        p = plan.plan()
        return p if isinstance(p, TransportPlan) else TransportPlan.from_dense(p)
    return TransportPlan.from_dense(np.asarray(plan, dtype=float))


def threshold_support(plan, xi):
    """Cells at or above ``xi * m``.

    ``m`` is the smallest fiber maximum over every axis (the minimum over
    rows of the row maxima and over columns of the column maxima for two
    marginals); fibers without mass are ignored. Every fiber maximum is
    ``>= m``, so each row and column keeps at least its maximal cell.

    Returns
    -------
    (SupportMask, m)
    """
    p = _as_plan(plan)
    if not 0 < xi <= 1:
        raise InvalidParameterError("xi must lie in (0, 1]")
    if p.is_sparse:
        coords, vals = p.coords, p.values
        fmax = []
        for k in range(p.N):
            mx = np.zeros(p.shape[k])
            np.maximum.at(mx, coords[:, k], vals)
            fmax.append(mx)
    else:
        w = p.weights
        fmax = [w.max(axis=tuple(a for a in range(p.N) if a != k)) for k in range(p.N)]
    pos = [f[f > 0] for f in fmax]
    if any(f.size == 0 for f in pos):
        raise MMOTError("cannot threshold a plan without mass")
    m = float(min(f.min() for f in pos))
    if p.is_sparse:
        keep = vals >= xi * m
        active = coords[keep]
    else:
        active = np.argwhere(w >= xi * m)
    return SupportMask(np.ascontiguousarray(active), tuple(p.shape)), m


def _even(x):
    return max(2, 2 * int(round(x / 2)))


def _children(coarse, fine):
    """Start index and count of the fine points inside each coarse cell."""
    parent = np.clip(np.searchsorted(coarse.edges, fine.points, side="right") - 1,
                     0, coarse.size - 1)
    start = np.searchsorted(parent, np.arange(coarse.size), side="left")
    count = np.bincount(parent, minlength=coarse.size)
    return start, count


def _dilate(coords, shape, width):
    """Add every cell within ``width`` (Chebyshev distance) of ``coords``."""
    if width == 0:
        return coords
    N = len(shape)
    steps = np.stack(np.meshgrid(*[np.arange(-width, width + 1)] * N, indexing="ij"),
                     axis=-1).reshape(-1, N)
    cand = (coords[:, None, :] + steps[None, :, :]).reshape(-1, N)
    ok = np.all((cand >= 0) & (cand < np.asarray(shape)), axis=1)
    keys = np.unique(np.ravel_multi_index(tuple(cand[ok].T), shape))
    return np.stack(np.unravel_index(keys, shape), axis=1)


def _expand(T, start, count):
    """Fine cells whose parent cell is in ``T`` (``(n, N)`` coarse indices)."""
    per_axis = count[T]
    n_child = per_axis.prod(axis=1)
    owner = np.repeat(np.arange(T.shape[0]), n_child)
    offset = np.arange(owner.size) - np.repeat(np.cumsum(n_child) - n_child, n_child)
    out = np.empty((owner.size, T.shape[1]), dtype=np.int64)
    for k in range(T.shape[1] - 1, -1, -1):
        radix = per_axis[owner, k]
        out[:, k] = start[T[owner, k]] + offset % radix
        offset //= radix
    return out


def _multilinear(points, shape, coords, values, query):
    """Multilinear interpolation of sparse grid data; absent nodes are 0.

    Queries are clamped to the hull of ``points`` (constant extrapolation).
    """
    N = len(shape)
    keys = np.ravel_multi_index(tuple(coords.T), shape)
    order = np.argsort(keys)
    keys, values = keys[order], values[order]
    lo_idx, frac = [], []
    for k in range(N):
        p = points[k]
        q = np.clip(query[:, k], p[0], p[-1])
        i = np.clip(np.searchsorted(p, q, side="right") - 1, 0, p.size - 2)
        lo_idx.append(i)
        frac.append((q - p[i]) / (p[i + 1] - p[i]))
    out = np.zeros(query.shape[0])
    for corner in range(2 ** N):
        bits = [(corner >> k) & 1 for k in range(N)]
        idx = tuple(lo_idx[k] + bits[k] for k in range(N))
        wgt = np.ones(query.shape[0])
        for k in range(N):
            wgt *= frac[k] if bits[k] else 1 - frac[k]
        key = np.ravel_multi_index(idx, shape)
        pos = np.clip(np.searchsorted(keys, key), 0, keys.size - 1)
        hit = keys[pos] == key
        out += np.where(hit, values[pos], 0.0) * wgt
    return out


def plan_refine_step(plan, grid, config, active_cells=None):
    """Refine the grid inside the thresholded support of ``plan``.

    Parameters
    ----------
    plan : TransportPlan, array or solver result on a uniform ``grid``
    grid : Grid1D
        Grid shared by all marginals.
    config : RefinementConfig
    active_cells : int, optional
        Active cell count of ``plan``; defaults to its stored cells.

    Returns
    -------
    fine_grid : Grid1D
    fine_plan : TransportPlan
        Sparse, mass 1, on the children of the kept cells minus filtered
        cells.
    info : dict
        ``mask``, ``m``, ``ratio`` and the projected active count.
    """
    p = _as_plan(plan)
    N, M = p.N, grid.size
    mask, m = threshold_support(p, config.xi)
    if active_cells is None:
        active_cells = p.coords.shape[0] if p.is_sparse else M ** N
    ratio = mask.size / active_cells
    cells_new = M ** N / ratio
    M_new = max(M, _even(cells_new ** (1.0 / N)))
    projected = mask.size * (M_new / M) ** N
    cap = config.target_active_cells
    info = {"mask": mask, "m": m, "ratio": ratio, "projected_active": projected,
            "stopped": None}
    if cap is not None and projected > cap:
        info["stopped"] = f"projected {projected:.0f} active cells exceed cap {cap}"
        return None, None, info
    lo, hi = grid.bounds
    fine = Grid1D.uniform(lo, hi, M_new)
    start, count = _children(grid, fine)
    cells = _expand(_dilate(mask.coords, p.shape, config.halo), start, count)
    vol_c = grid.cell_weights[0] ** N
    vol_f = fine.cell_weights[0] ** N
    if p.is_sparse:
        src_coords, src_vals = p.coords, p.values
    else:
        src_coords = np.argwhere(p.weights > 0)
        src_vals = p.weights[tuple(src_coords.T)]
    q = fine.points[cells]
    dens = _multilinear([grid.points] * N, p.shape, src_coords, src_vals / vol_c, q)
    keep = dens >= config.xi * m / vol_c
    # every fine fiber keeps its maximal cell so all marginals stay reachable
    for k in range(N):
        best = np.full(M_new, -1.0)
        np.maximum.at(best, cells[:, k], dens)
        keep |= (dens == best[cells[:, k]]) & (dens > 0)
    cells, mass = cells[keep], dens[keep] * vol_f
    mass /= mass.sum()
    fine_plan = TransportPlan.from_coords((M_new,) * N, cells, mass, p.epsilon_used)
    return fine, fine_plan, info


def _density_on(density, grid):
    values = np.interp(grid.points, density.points, density.values())
    return DiscreteDensity.from_unnormalized(grid, values * grid.cell_weights,
                                             density.total_mass)


def _level_report(level, grid, active, m, xi, result, epsilon):
    logs = result.state.log_vectors()
    margs = [np.asarray(r) for r in result.marginals]
    objective = float(epsilon * sum(
        np.dot(r[r > 0], f[r > 0]) for r, f in zip(margs, logs)
    ))
    return {
        "level": level,
        "grid_points_per_axis": int(grid.size),
        "active_cells": int(active),
        "m": None if m is None else float(m),
        "xi": xi,
        "sweeps": int(result.sweeps),
        "residual": float(result.residual.max_linf),
        "objective": objective,
        "converged": bool(result.converged),
        "epsilon": float(epsilon),
    }


def refine_solve(density, spec, solver_config, config):
    """Solve, threshold, refine and re-solve for ``config.levels`` rounds.

    Parameters
    ----------
    density : DiscreteDensity
        Coarse marginal; its cell values are interpolated onto finer grids.
    spec : CoulombCostSpec
    solver_config : SolverConfig
        Used on every level (epsilon replaced by the ladder if given).
    config : RefinementConfig

    Returns
    -------
    RefineResult
        Levels up to the last converged one, each with a report dict
        ``{level, grid_points_per_axis, active_cells, m, xi, sweeps,
        residual, objective}``.
    """
    if not isinstance(spec, CoulombCostSpec):
        raise InvalidParameterError("spec must be a CoulombCostSpec")
    if not isinstance(density, DiscreteDensity):
        raise InvalidParameterError("density must be a DiscreteDensity")
    coarse = density
    eps = config.epsilon_ladder or (solver_config.epsilon,) * config.levels
    N = spec.N

    cfg0 = _with_epsilon(solver_config, eps[0])
    kernel = build_kernel(spec, coarse.grid, eps[0])
    res0 = ipfp_solve(kernel, coarse, cfg0)
    out = RefineResult([])
    if not res0.converged:
        out.stopped_reason = "level 0 did not converge"
        out.levels.append(LevelResult(0, coarse.grid, coarse, res0, coarse.size ** N,
                                      report=_level_report(0, coarse.grid, coarse.size ** N,
                                                           None, config.xi, res0, eps[0])))
        return out
    level = LevelResult(0, coarse.grid, coarse, res0, coarse.size ** N)
    level.report = _level_report(0, coarse.grid, level.active_cells, None, config.xi,
                                 res0, eps[0])
    out.levels.append(level)

    for lv in range(1, config.levels):
        prev = out.levels[-1]
        fine, plan, info = plan_refine_step(prev.plan(), prev.grid, config, prev.active_cells)
        prev.m = info["m"]
        prev.report["m"] = info["m"]
        if fine is None:
            out.stopped_reason = info["stopped"]
            logger.warning("refinement stopped: %s", info["stopped"])
            break
        dens = _density_on(coarse, fine)
        cfg = _with_epsilon(solver_config, eps[lv])
        positions = fine.points[plan.coords]
        log_k = -spec.tuple_cost(positions) / eps[lv]
        init = _warm_start(prev, fine, eps[lv - 1], eps[lv])
        res = ipfp_solve_sparse(plan.coords, log_k, plan.shape, [dens] * N, cfg, init=init)
        if not res.converged:
            out.stopped_reason = f"level {lv} did not converge"
            logger.warning("refinement stopped: level %d did not converge", lv)
            break
        level = LevelResult(lv, fine, dens, res, plan.coords.shape[0])
        level.report = _level_report(lv, fine, level.active_cells, None, config.xi, res,
                                     eps[lv])
        out.levels.append(level)
    return out


def _with_epsilon(cfg, eps):
    return SolverConfig(eps, cfg.max_sweeps, cfg.tolerance, cfg.evaluation_mode,
                        cfg.record_history)


def _warm_start(prev, fine, eps_prev, eps_new):
    """Interpolate the previous log-scalings onto the finer grid.

    Each scaling carries one cell width of mass, hence the ``log(h_f/h_c)``
    shift; a change of epsilon rescales the dual reading ``eps * log a``.
    """
    shift = math.log(fine.cell_weights[0] / prev.grid.cell_weights[0])
    vecs = []
    for f in prev.result.state.log_vectors():
        finite = np.isfinite(f)
        g = np.interp(fine.points, prev.grid.points[finite], f[finite])
        vecs.append((g * eps_prev / eps_new) + shift)
    return ScalingState(vecs, 0, True)
