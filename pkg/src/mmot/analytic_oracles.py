"""Exact co-motion maps and Kantorovich potentials for 1D test problems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost import CoulombCostSpec
from .densities import inverse_cdf, quantile
from .exceptions import DomainError, InvalidParameterError, SingularIntegrandError
from .recovery import Potential

__all__ = [
    "ComotionMap",
    "PiecewisePotential",
    "comotion_uniform_N2",
    "comotion_triangular",
    "comotion_multi_1d",
    "potential_uniform_N2",
    "potential_uniform_N3",
    "potential_from_maps",
    "pushforward_error",
    "compose",
]

_DOMAIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ComotionMap:
    """Map ``x -> f(x)`` on a closed interval.

    ``breakpoints`` lists the points where ``f`` jumps; integrators split
    there.
    """

    func: object
    domain: tuple
    label: str
    breakpoints: tuple = field(default=())

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        lo, hi = self.domain
        slack = _DOMAIN_TOL * max(1.0, abs(lo), abs(hi))
        if np.any(x_arr < lo - slack) or np.any(x_arr > hi + slack):
            raise DomainError(f"{self.label}: argument outside [{lo}, {hi}]")
        out = self.func(np.clip(x_arr, lo, hi))
        return float(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True, eq=False)
class PiecewisePotential:
    """Continuous piecewise-affine potential.

    Piece ``k`` is ``slopes[k] * x + intercepts[k]`` on
    ``[breakpoints[k], breakpoints[k+1]]``.
    """

    breakpoints: tuple
    slopes: tuple
    intercepts: tuple

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        b = np.asarray(self.breakpoints)
        if np.any(x_arr < b[0] - _DOMAIN_TOL) or np.any(x_arr > b[-1] + _DOMAIN_TOL):
            raise DomainError(f"potential defined on [{b[0]}, {b[-1]}]")
        k = np.clip(np.searchsorted(b, x_arr, side="right") - 1, 0, len(self.slopes) - 1)
        out = np.asarray(self.slopes)[k] * x_arr + np.asarray(self.intercepts)[k]
        return float(out) if np.ndim(x) == 0 else out

    def jumps(self):
        """Mismatch of neighbouring pieces at the interior breakpoints."""
        s, c, b = self.slopes, self.intercepts, self.breakpoints
        return [abs((s[k] - s[k + 1]) * b[k + 1] + c[k] - c[k + 1]) for k in range(len(s) - 1)]


def comotion_uniform_N2(a):
    """Map for two electrons with uniform density on ``[-a/2, a/2]``.

    ``x + a/2`` on the left half, ``x - a/2`` on the right half: the only
    branch assignment that keeps the image inside the support.
    """
    if not a > 0:
        raise InvalidParameterError("a must be positive")
    half = a / 2

    def f(x):
        return np.where(x < 0, x + half, x - half)

    return ComotionMap(f, (-half, half), f"uniform-N2(a={a})", (0.0,))


def comotion_triangular(a):
    """Map for the tent density ``(a - |x|)/a**2`` on ``[-a, a]``.

    ``f(x) = sign(x) (sqrt(2a|x| - x**2) - a)``, with ``f(0) = -a`` (the
    right limit; a null set).
    """
    if not a > 0:
        raise InvalidParameterError("a must be positive")

    def f(x):
        ax = np.abs(x)
        root = np.sqrt(np.maximum(2 * a * ax - ax * ax, 0.0))
        return np.where(x == 0, -a, np.sign(x) * (root - a))

    return ComotionMap(f, (-a, a), f"triangular(a={a})", (0.0,))


def compose(f, g, label=None):
    """``f o g`` with the union of breakpoints mapped back where possible."""
    bps = set(g.breakpoints)
    # x is a breakpoint of f o g when g(x) is a breakpoint of f
    for b in f.breakpoints:
        pre = np.asarray(_preimages(g, b))
        bps.update(float(p) for p in pre)
    return ComotionMap(lambda x: f.func(g.func(x)), g.domain,
                       label or f"{f.label}o{g.label}", tuple(sorted(bps)))


def _preimages(g, y, n=4097):
    lo, hi = g.domain
    xs = np.linspace(lo, hi, n)
    gy = g.func(xs) - y
    out = []
    for k in np.nonzero(np.sign(gy[:-1]) * np.sign(gy[1:]) < 0)[0]:
        a, b = xs[k], xs[k + 1]
        for _ in range(80):
            m = 0.5 * (a + b)
            if np.sign(g.func(np.array(m)) - y) == np.sign(gy[k]):
                a = m
            else:
                b = m
        out.append(0.5 * (a + b))
    return out


def comotion_multi_1d(density, N):
    """Optimal maps ``f_2, ..., f_N`` for N electrons on the line.

    The support is cut at the quantiles ``k/N``; the base map sends each
    piece monotonically onto the next one (the last piece wraps onto the
    first) by matching cumulative mass, and ``f_i`` is its ``(i-1)``-fold
    composition. The discrete density is read as uniform within each cell,
    so its cdf is continuous and the construction is well defined.

    Returns
    -------
    list of N - 1 ComotionMap
    """
    if int(N) != N or N < 2:
        raise InvalidParameterError("N must be an integer >= 2")
    q = quantile(density)
    mass = q.total_mass
    step = mass / N
    lo, hi = density.grid.bounds
    cuts = tuple(float(inverse_cdf(q, k * step)) for k in range(1, N))

    def base(x):
        w = q(x)
        nxt = np.where(w <= mass - step, w + step, w - (mass - step))
        return inverse_cdf(q, np.clip(nxt, 0.0, mass))

    base_map = ComotionMap(base, (lo, hi), f"quantile-shift(N={N})", cuts)
    maps = [base_map]
    for i in range(3, N + 1):
        prev = maps[-1]

        def fi(x, prev=prev):
            return base(prev.func(x))

        maps.append(ComotionMap(fi, (lo, hi), f"f{i}(N={N})", cuts))
    return maps


def potential_uniform_N2(a):
    """Exact potential ``2/a - 4|x|/a**2`` for the uniform two-electron case.

    The constant makes ``u(x) + u(f(x))`` equal the cost ``2/a`` on the
    support of the optimal plan.
    """
    if not a > 0:
        raise InvalidParameterError("a must be positive")
    h = a / 2
    return PiecewisePotential((-h, 0.0, h), (4 / a**2, -4 / a**2), (2 / a, 2 / a))


def potential_uniform_N3():
    """Exact potential for three electrons, uniform density on ``[0, 1]``."""
    return PiecewisePotential(
        (0.0, 1 / 3, 2 / 3, 1.0), (45 / 4, 0.0, -45 / 4), (0.0, 15 / 4, 45 / 4)
    )


def _force(x, maps, check_mask=None):
    total = np.zeros_like(x)
    for f in maps:
        y = f.func(x)
        diff = x - y
        if check_mask is not None and np.any((diff == 0) & check_mask):
            raise SingularIntegrandError(f"{f.label} touches the identity")
        with np.errstate(divide="ignore", invalid="ignore"):
            total = total - diff / np.abs(diff) ** 3
    return total


def potential_from_maps(maps, density, anchor=None):
    """Integrate the force balance ``u'(x) = -sum (x - f_i)/|x - f_i|**3``.

    The grid is augmented with the map breakpoints and each segment is
    integrated with 3-point Gauss-Legendre, so jumps of the maps never fall
    inside a quadrature cell. The integration constant fixes the gauge: by default
    ``N * integral(u rho)`` equals the Coulomb energy of the maps, i.e. the
    dual optimum; pass ``anchor`` to prescribe ``integral(u rho)`` instead.

    Returns
    -------
    Potential sampled at ``density.points``.
    """
    maps = list(maps)
    if not maps:
        raise InvalidParameterError("need at least one map")
    x = np.asarray(density.points, dtype=float)
    rho = np.asarray(density.weights, dtype=float)
    _force(x, maps, check_mask=rho > 0)
    bps = sorted({b for f in maps for b in f.breakpoints if x[0] < b < x[-1]})
    nodes = np.union1d(x, np.asarray(bps, dtype=float))
    # open rule: the integrand is never sampled at a breakpoint
    t, wt = np.polynomial.legendre.leggauss(3)
    half = 0.5 * np.diff(nodes)
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    seg = sum(w * half * _force(mid + s * half, maps) for s, w in zip(t, wt))
    if not np.all(np.isfinite(seg)):
        raise SingularIntegrandError("force balance is singular on the grid")
    u_nodes = np.concatenate([[0.0], np.cumsum(seg)])
    u = u_nodes[np.searchsorted(nodes, x)]
    N = len(maps) + 1
    if anchor is None:
        spec = CoulombCostSpec(N=N, d=1, mode="full")
        positions = np.stack([x] + [f.func(x) for f in maps], axis=1)
        c = spec.tuple_cost(positions)
        keep = rho > 0
        energy = float(np.dot(c[keep], rho[keep]) / rho[keep].sum())
        anchor = energy / N
    keep = rho > 0
    u = u + (anchor - np.dot(u[keep], rho[keep]) / rho[keep].sum())
    return Potential(x, u, None, float(anchor), rho)


def pushforward_error(f, density, test_functions):
    """Largest quadrature mismatch ``|sum phi(f(x)) w - sum phi(x) w|``."""
    x = np.asarray(density.points, dtype=float)
    w = np.asarray(density.weights, dtype=float) / density.total_mass
    fx = f(x)
    return max(abs(float(np.dot(phi(fx), w) - np.dot(phi(x), w))) for phi in test_functions)


def is_involution(f, x, tol=1e-10):
    return float(np.max(np.abs(f(f(x)) - x))) <= tol
