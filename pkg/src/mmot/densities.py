"""Discrete one-electron densities on 1D grids.

Weights are point masses (cell-integrated density values, midpoint rule), so a
``DiscreteDensity`` can be handed to the solvers as a marginal directly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DensityFormatError, DomainError, InvalidParameterError

__all__ = [
    "Grid1D",
    "DiscreteDensity",
    "Quantile",
    "make_uniform",
    "make_uniform_interval",
    "make_triangular",
    "make_gaussian",
    "make_ball",
    "radialize",
    "sphere_measure",
    "load_density",
    "save_density",
    "quantile",
    "inverse_cdf",
]


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Ordered grid points with their quadrature cells.

    ``edges`` has length ``M + 1``; cell ``k`` is ``[edges[k], edges[k+1]]``
    and contains ``points[k]``.
    """

    points: np.ndarray
    cell_weights: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        cw = _frozen(self.cell_weights)
        ed = _frozen(self.edges)
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidParameterError("a grid needs at least 2 points")
        if np.any(np.diff(pts) <= 0):
            raise InvalidParameterError("grid points must be strictly increasing")
        if cw.shape != pts.shape or np.any(cw <= 0):
            raise InvalidParameterError("cell weights must be positive, one per point")
        if ed.shape != (pts.size + 1,):
            raise InvalidParameterError("edges must have length M + 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cell_weights", cw)
        object.__setattr__(self, "edges", ed)

    @property
    def size(self):
        return self.points.size

    @property
    def bounds(self):
        return float(self.edges[0]), float(self.edges[-1])

    @classmethod
    def uniform(cls, lo, hi, M):
        """Midpoint grid of ``M`` equal cells on ``[lo, hi]``.

        Points are built as ``mid + half * (2k + 1 - M) / M`` so that a grid
        symmetric about 0 is symmetric bit for bit.
        """
        lo, hi = float(lo), float(hi)
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
            raise InvalidParameterError(f"degenerate interval [{lo}, {hi}]")
        M = _check_size(M)
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        k = np.arange(M)
        points = mid + half * ((2 * k + 1 - M) / M)
        edges = mid + half * ((2 * np.arange(M + 1) - M) / M)
        edges[0], edges[-1] = lo, hi
        return cls(points, np.full(M, (hi - lo) / M), edges)

    @classmethod
    def from_points(cls, points):
        """Grid with cell edges halfway between neighbouring points."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidParameterError("a grid needs at least 2 points")
        if np.any(np.diff(pts) <= 0):
            raise InvalidParameterError("grid points must be strictly increasing")
        inner = 0.5 * (pts[1:] + pts[:-1])
        edges = np.concatenate(
            [[pts[0] - (inner[0] - pts[0])], inner, [pts[-1] + (pts[-1] - inner[-1])]]
        )
        return cls(pts, np.diff(edges), edges)


@dataclass(frozen=True, eq=False)
class DiscreteDensity:
    """Nonnegative point masses on a :class:`Grid1D`, summing to ``total_mass``."""

    grid: Grid1D
    weights: np.ndarray
    total_mass: float = 1.0
    original_mass: float | None = field(default=None, compare=False)

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.shape != self.grid.points.shape:
            raise InvalidParameterError("one weight per grid point is required")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise InvalidParameterError("weights must be finite and nonnegative")
        if not self.total_mass > 0:
            raise InvalidParameterError("total_mass must be positive")
        s = w.sum()
        if abs(s - self.total_mass) > 1e-12 * self.total_mass:
            raise InvalidParameterError(
                f"weights sum to {s!r}, expected total_mass={self.total_mass!r}"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "total_mass", float(self.total_mass))

    @classmethod
    def from_unnormalized(cls, grid, weights, total_mass=1.0):
        weights = np.asarray(weights, dtype=float)
        s = weights.sum()
        if not s > 0:
            raise InvalidParameterError("density has no mass")
        return cls(grid, weights * (total_mass / s), total_mass, original_mass=float(s))

    @property
    def points(self):
        return self.grid.points

    @property
    def size(self):
        return self.grid.size

    def values(self):
        """Density values (mass per unit length) at the grid points."""
        return self.weights / self.grid.cell_weights

    def normalized(self, total_mass=1.0):
        return DiscreteDensity(
            self.grid, self.weights * (total_mass / self.total_mass), total_mass,
            original_mass=self.original_mass,
        )


@dataclass(frozen=True, eq=False)
class Quantile:
    """Piecewise-linear cumulative distribution of a density.

    ``cdf[k]`` is the mass of cells ``0..k``, i.e. the cdf at ``edges[k+1]``.
    """

    density: DiscreteDensity
    cdf: np.ndarray

    @property
    def total_mass(self):
        return self.density.total_mass

    def _knots(self):
        return np.asarray(self.density.grid.edges), np.concatenate([[0.0], self.cdf])

    def __call__(self, x):
        """Evaluate the cdf anywhere; constant outside the grid."""
        edges, cum = self._knots()
        return np.interp(x, edges, cum)

    def inverse(self, w):
        return inverse_cdf(self, w)


def _check_size(M):
    if isinstance(M, bool) or int(M) != M or M < 2:
        raise InvalidParameterError(f"grid size must be an integer >= 2, got {M!r}")
    return int(M)


def _check_positive(name, value):
    if not (isinstance(value, (int, float, np.floating, np.integer)) and value > 0
            and math.isfinite(value)):
        raise InvalidParameterError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def make_uniform(a, M, total_mass=1.0):
    """Uniform density on ``[-a/2, a/2]`` (the two-electron test case).

    The nominal value ``a`` on the support integrates to ``a**2``; the weights
    are rescaled to ``total_mass`` instead.
    """
    a = _check_positive("a", a)
    grid = Grid1D.uniform(-a / 2, a / 2, _check_size(M))
    return DiscreteDensity.from_unnormalized(grid, np.full(grid.size, a) * grid.cell_weights,
                                             total_mass)


def make_uniform_interval(lo, hi, M, total_mass=1.0):
    """Uniform density on an arbitrary interval ``[lo, hi]``."""
    grid = Grid1D.uniform(lo, hi, _check_size(M))
    return DiscreteDensity.from_unnormalized(grid, grid.cell_weights.copy(), total_mass)


def make_triangular(a, M, total_mass=1.0):
    """Tent density ``(a - |x|) / a**2`` on ``[-a, a]``."""
    a = _check_positive("a", a)
    grid = Grid1D.uniform(-a, a, _check_size(M))
    values = (a - np.abs(grid.points)) / a**2
    return DiscreteDensity.from_unnormalized(grid, values * grid.cell_weights, total_mass)


def make_gaussian(width=1.0, interval=(-2.5, 2.5), M=1000, total_mass=1.0):
    """Gaussian ``exp(-(x/width)**2)`` truncated to ``interval``.

    Mass outside the interval is dropped before normalization.
    """
    width = _check_positive("width", width)
    lo, hi = interval
    grid = Grid1D.uniform(lo, hi, _check_size(M))
    values = np.exp(-((grid.points / width) ** 2))
    return DiscreteDensity.from_unnormalized(grid, values * grid.cell_weights, total_mass)


def sphere_measure(d):
    """Surface measure of the unit sphere in R^d."""
    if d not in (2, 3):
        raise InvalidParameterError(f"radial reduction supports d in {{2, 3}}, got {d!r}")
    return 2 * math.pi if d == 2 else 4 * math.pi


def radialize(rho_radial, d, total_mass=None):
    """Push a radial profile ``rho(|x|)`` forward by ``|.|``.

    Returns ``lambda(r) = C(d) r**(d-1) rho(r)`` as point masses on the same
    radial grid, renormalized to ``total_mass`` (defaults to the input's).
    """
    if np.any(rho_radial.grid.points < 0):
        raise InvalidParameterError("radii must be nonnegative")
    grid = rho_radial.grid
    values = rho_radial.values()
    lam = sphere_measure(d) * grid.points ** (d - 1) * values * grid.cell_weights
    if total_mass is None:
        total_mass = rho_radial.total_mass
    return DiscreteDensity.from_unnormalized(grid, lam, total_mass)


def make_ball(d, M, radius=1.0, total_mass=1.0):
    """Radial marginal of the uniform density on the ``d``-ball."""
    radius = _check_positive("radius", radius)
    grid = Grid1D.uniform(0.0, radius, _check_size(M))
    flat = DiscreteDensity.from_unnormalized(grid, grid.cell_weights.copy(), total_mass)
    return radialize(flat, d)


def load_density(path, total_mass=1.0):
    """Read a ``position,weight`` CSV into a normalized density.

    A non-numeric first row is treated as a header. The mass found in the
    file is kept in ``original_mass``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DensityFormatError(f"cannot read {path}: {exc}") from exc
    positions, weights = [], []
    for i, row in enumerate(csv.reader(text.splitlines())):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise DensityFormatError(f"expected 2 columns, found {len(row)}", row=i)
        try:
            x, w = float(row[0]), float(row[1])
        except ValueError:
            if i == 0 and not positions:
                continue
            raise DensityFormatError(f"cannot parse {row!r} as numbers", row=i) from None
        if not (math.isfinite(x) and math.isfinite(w)):
            raise DensityFormatError("non-finite value", row=i)
        if w < 0:
            raise DensityFormatError(f"negative weight {w!r}", row=i)
        if positions and x <= positions[-1]:
            raise DensityFormatError("positions must be strictly increasing", row=i)
        positions.append(x)
        weights.append(w)
    if len(positions) < 2:
        raise DensityFormatError(f"{path} holds fewer than 2 data rows")
    if sum(weights) <= 0:
        raise DensityFormatError(f"{path} has zero total weight")
    grid = Grid1D.from_points(positions)
    return DiscreteDensity.from_unnormalized(grid, weights, total_mass)


def save_density(density, path, header=True):
    """Write ``position,weight`` rows with 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            fh.write("position,weight\n")
        for x, w in zip(density.points, density.weights):
            fh.write(f"{x:.17g},{w:.17g}\n")


def quantile(density):
    total = density.total_mass
    # rounding can push partial sums past the total; clip, then pin the end exactly
    cdf = np.minimum(np.maximum.accumulate(np.cumsum(density.weights)), total)
    cdf[-1] = total
    return Quantile(density, _frozen(cdf))


def inverse_cdf(q, w):
    """Generalized inverse of the piecewise-linear cdf.

    Within a cell the mass is spread evenly, so the inverse is linear there.
    Flat stretches (empty cells) resolve to their left end.
    """
    w_arr = np.asarray(w, dtype=float)
    total = q.total_mass
    tol = 1e-12 * total
    if np.any(w_arr < -tol) or np.any(w_arr > total + tol) or np.any(np.isnan(w_arr)):
        raise DomainError(f"quantile level outside [0, {total}]")
    w_arr = np.clip(w_arr, 0.0, total)
    edges, cum = q._knots()
    idx = np.searchsorted(cum, w_arr, side="left")
    idx = np.clip(idx, 1, len(cum) - 1)
    lo_c, hi_c = cum[idx - 1], cum[idx]
    span = hi_c - lo_c
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(span > 0, (w_arr - lo_c) / span, 0.0)
    x = edges[idx - 1] + t * (edges[idx] - edges[idx - 1])
    return float(x) if np.ndim(w) == 0 else x
