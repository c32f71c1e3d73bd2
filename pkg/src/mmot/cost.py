"""Coulomb repulsion, its radial reduction and the Gibbs kernel ``exp(-c/eps)``."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import InvalidParameterError

__all__ = [
    "CoulombCostSpec",
    "GibbsKernel",
    "ReducedKernel3",
    "coulomb_pair",
    "coulomb_total",
    "reduced_cost",
    "reduced_cost_angles",
    "planar_three_body_min",
    "build_kernel",
]

_TINY = np.finfo(float).tiny
_GRID_2 = 64
_GRID_3 = 64


@dataclass(frozen=True)
class CoulombCostSpec:
    """Which Coulomb problem is being discretized.

    ``mode="full"`` is the 1D problem on the line; ``mode="radial"`` is the
    problem over radii with the angularly minimized cost, for ``d`` in {2, 3}.
    """

    N: int = 2
    d: int = 1
    mode: str = "full"

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise InvalidParameterError(f"N must be an integer >= 2, got {self.N!r}")
        if self.d not in (1, 2, 3):
            raise InvalidParameterError(f"d must be 1, 2 or 3, got {self.d!r}")
        if self.mode not in ("full", "radial"):
            raise InvalidParameterError(f"mode must be 'full' or 'radial', got {self.mode!r}")
        if self.mode == "radial" and self.d < 2:
            raise InvalidParameterError("radial mode requires d >= 2")
        if self.mode == "full" and self.d != 1:
            raise InvalidParameterError(
                "full-space discretization is only provided on the line (d=1); "
                "use mode='radial' for spherically symmetric problems"
            )
        if self.mode == "radial" and self.N > 3:
            raise InvalidParameterError("the reduced radial cost is provided for N in {2, 3}")

    @property
    def separable(self):
        return not (self.mode == "radial" and self.N == 3)

    def pair_cost(self, x, y):
        """Pairwise term for separable costs, broadcasting over ``x`` and ``y``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            if self.mode == "full":
                return 1.0 / np.abs(x - y)
            return 1.0 / (x + y)

    def tuple_cost(self, positions):
        """Cost of each row of an ``(n, N)`` array of positions (or radii)."""
        positions = np.asarray(positions, dtype=float)
        if self.separable:
            total = np.zeros(positions.shape[0])
            for i, j in itertools.combinations(range(self.N), 2):
                total = total + self.pair_cost(positions[:, i], positions[:, j])
            return total
        values, _, _ = planar_three_body_min(positions[:, 0], positions[:, 1], positions[:, 2])
        return values


def coulomb_pair(x, y):
    """``1/|x - y|`` for two points of R^d; ``inf`` on coincidence."""
    diff = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    dist = float(np.sqrt(np.sum(diff * diff)))
    return math.inf if dist == 0.0 else 1.0 / dist


def coulomb_total(points):
    """Sum of pair repulsions over unordered pairs.

    Points are sorted lexicographically first, so the floating-point sum does
    not depend on the order of the arguments.
    """
    points = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
    if len(points) < 2:
        raise InvalidParameterError("need at least two electrons")
    points.sort(key=tuple)
    total = 0.0
    for i, j in itertools.combinations(range(len(points)), 2):
        total += coulomb_pair(points[i], points[j])
    return total


def _planar_cost(r1, r2, r3, t2, t3):
    d12 = r1 * r1 + r2 * r2 - 2 * r1 * r2 * np.cos(t2)
    d13 = r1 * r1 + r3 * r3 - 2 * r1 * r3 * np.cos(t3)
    d23 = r2 * r2 + r3 * r3 - 2 * r2 * r3 * np.cos(t2 - t3)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 1 / np.sqrt(np.maximum(d12, 0)) + 1 / np.sqrt(np.maximum(d13, 0)) \
            + 1 / np.sqrt(np.maximum(d23, 0))
    return np.where(np.isnan(out), np.inf, out)


def planar_three_body_min(r1, r2, r3, grid=(_GRID_2, _GRID_3), iters=120, chunk=4096):
    """Minimize the three-electron Coulomb cost over angles, for given radii.

    Electron 1 sits at angle 0, electron 2 at ``theta2`` in ``[0, pi]`` and
    electron 3 at ``theta3`` in ``[0, 2 pi)``, all in one plane through the
    origin. A coarse grid picks a start; a compass search with step halving
    polishes it. Vectorized over the radius arrays.

    Returns ``(values, theta2, theta3)``.
    """
    r1, r2, r3 = np.broadcast_arrays(*(np.asarray(r, dtype=float) for r in (r1, r2, r3)))
    shape = r1.shape
    r1, r2, r3 = r1.ravel(), r2.ravel(), r3.ravel()
    n = r1.size
    values = np.empty(n)
    th2 = np.empty(n)
    th3 = np.empty(n)
    g2 = np.linspace(0.0, math.pi, grid[0])
    g3 = np.arange(grid[1]) * (2 * math.pi / grid[1])
    G2, G3 = np.meshgrid(g2, g3, indexing="ij")
    G2, G3 = G2.ravel(), G3.ravel()
    offs = np.array([(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)], dtype=float)
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        a, b, c = r1[sl, None], r2[sl, None], r3[sl, None]
        coarse = _planar_cost(a, b, c, G2[None, :], G3[None, :])
        best = np.argmin(coarse, axis=1)
        t2, t3 = G2[best], G3[best]
        f = coarse[np.arange(best.size), best]
        s2 = np.full(best.size, g2[1] - g2[0])
        s3 = np.full(best.size, g3[1] - g3[0])
        for _ in range(iters):
            c2 = np.clip(t2[:, None] + offs[None, :, 0] * s2[:, None], 0.0, math.pi)
            c3 = t3[:, None] + offs[None, :, 1] * s3[:, None]
            vals = _planar_cost(a, b, c, c2, c3)
            k = np.argmin(vals, axis=1)
            rows = np.arange(k.size)
            improved = vals[rows, k] < f
            t2 = np.where(improved, c2[rows, k], t2)
            t3 = np.where(improved, c3[rows, k], t3)
            f = np.where(improved, vals[rows, k], f)
            s2 = np.where(improved, s2, 0.5 * s2)
            s3 = np.where(improved, s3, 0.5 * s3)
            if np.all(s2 < 1e-12):
                break
        values[sl] = f
        th2[sl] = t2
        th3[sl] = np.mod(t3, 2 * math.pi)
    return values.reshape(shape), th2.reshape(shape), th3.reshape(shape)


def reduced_cost_angles(r, d=3):
    """Reduced cost together with the minimizing angles.

    For two electrons the minimum is the antipodal placement; for three it is
    the planar angular minimization of :func:`planar_three_body_min`.
    """
    r = [float(v) for v in r]
    if d not in (2, 3):
        raise InvalidParameterError("the reduced cost needs d in {2, 3}")
    if any(v < 0 for v in r):
        raise InvalidParameterError("radii must be nonnegative")
    if len(r) == 2:
        s = r[0] + r[1]
        return (math.inf if s == 0 else 1.0 / s), (math.pi,)
    if len(r) == 3:
        v, t2, t3 = planar_three_body_min(*r)
        return float(v), (float(t2), float(t3))
    raise InvalidParameterError("the reduced cost is provided for N in {2, 3}")


def reduced_cost(r, d=3):
    """``inf`` of the Coulomb cost over configurations with ``|x_i| = r_i``."""
    return reduced_cost_angles(r, d)[0]


def _flush(k):
    k[k < _TINY] = 0.0
    return k


@dataclass(frozen=True, eq=False)
class GibbsKernel:
    """Pairwise-separable kernel: ``exp(-c/eps)`` stored as M x M factors.

    All marginals share one grid, so every unordered pair uses the same
    factor matrix.
    """

    spec: CoulombCostSpec
    grid: object
    epsilon: float

    @cached_property
    def pair_cost(self):
        x = self.grid.points
        return self.spec.pair_cost(x[:, None], x[None, :])

    @cached_property
    def factor(self):
        with np.errstate(over="ignore", under="ignore"):
            return _flush(np.exp(-self.pair_cost / self.epsilon))

    @cached_property
    def log_factor(self):
        return -self.pair_cost / self.epsilon

    @property
    def N(self):
        return self.spec.N

    @property
    def size(self):
        return self.grid.size

    @property
    def pairwise_factors(self):
        return {p: self.factor for p in itertools.combinations(range(self.N), 2)}

    def cost_dense(self):
        """Full ``M**N`` cost tensor; small problems only."""
        return _pairwise_sum(self.pair_cost, self.N)

    def cost_slice(self, i):
        """``c[i, :, :]`` for three marginals."""
        c = self.pair_cost
        return c[i, :, None] + c[i, None, :] + c

    def slice(self, i):
        k = self.factor
        return k[i, :, None] * k[i, None, :] * k

    def log_slice(self, i):
        return -self.cost_slice(i) / self.epsilon

    def dense(self):
        with np.errstate(under="ignore"):
            return _flush(np.exp(-self.cost_dense() / self.epsilon))

    def log_dense(self):
        return -self.cost_dense() / self.epsilon

    def tuple_cost(self, index):
        """Cost at integer index tuples, shape ``(n, N)``."""
        index = np.asarray(index)
        c = self.pair_cost
        total = np.zeros(index.shape[0])
        for i, j in itertools.combinations(range(self.N), 2):
            total = total + c[index[:, i], index[:, j]]
        return total


def _pairwise_sum(pair, N):
    M = pair.shape[0]
    total = np.zeros((M,) * N)
    for i, j in itertools.combinations(range(N), 2):
        shape = [1] * N
        shape[i], shape[j] = M, M
        total = total + pair.reshape(shape)
    return total


def _sorted_index(i, j, k):
    # combinations-with-repetition rank of i <= j <= k
    return k * (k + 1) * (k + 2) // 6 + j * (j + 1) // 2 + i


_TABLE_CACHE = {}


def _reduced_table(radii):
    key = radii.tobytes()
    table = _TABLE_CACHE.get(key)
    if table is not None:
        return table
    M = radii.size
    n = M * (M + 1) * (M + 2) // 6
    table = np.empty(n)
    for k in range(M):
        jj, ii = np.tril_indices(k + 1)
        vals, _, _ = planar_three_body_min(radii[ii], radii[jj], radii[k])
        table[_sorted_index(ii, jj, k)] = vals
    table.setflags(write=False)
    _TABLE_CACHE[key] = table
    return table


@dataclass(frozen=True, eq=False)
class ReducedKernel3:
    """Three-electron radial kernel ``exp(-c~/eps)``.

    The reduced cost is not a sum of pair terms. Its values are computed once
    per sorted radius triple and cached; solvers read the kernel one
    ``M x M`` slice at a time.
    """

    spec: CoulombCostSpec
    grid: object
    epsilon: float

    N = 3

    @cached_property
    def table(self):
        return _reduced_table(np.asarray(self.grid.points))

    @property
    def size(self):
        return self.grid.size

    def cost_slice(self, i):
        M = self.size
        j, k = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
        s = np.sort(np.stack([np.full_like(j, i), j, k]), axis=0)
        return self.table[_sorted_index(s[0], s[1], s[2])]

    def slice(self, i):
        with np.errstate(under="ignore"):
            return _flush(np.exp(-self.cost_slice(i) / self.epsilon))

    def log_slice(self, i):
        return -self.cost_slice(i) / self.epsilon

    def cost_dense(self):
        return np.stack([self.cost_slice(i) for i in range(self.size)])

    def dense(self):
        with np.errstate(under="ignore"):
            return _flush(np.exp(-self.cost_dense() / self.epsilon))

    def log_dense(self):
        return -self.cost_dense() / self.epsilon

    def tuple_cost(self, index):
        s = np.sort(np.asarray(index), axis=1)
        return self.table[_sorted_index(s[:, 0], s[:, 1], s[:, 2])]


def build_kernel(spec, grid, epsilon):
    """Gibbs kernel for ``spec`` on ``grid`` (shared by all marginals)."""
    if not (isinstance(epsilon, (int, float, np.floating)) and epsilon > 0
            and math.isfinite(epsilon)):
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon!r}")
    if spec.mode == "radial" and np.any(grid.points < 0):
        raise InvalidParameterError("radial grids must be nonnegative")
    if spec.separable:
        return GibbsKernel(spec, grid, float(epsilon))
    return ReducedKernel3(spec, grid, float(epsilon))
