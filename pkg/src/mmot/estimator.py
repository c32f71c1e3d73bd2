"""scikit-learn style front end for the entropic Coulomb transport solver."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .cost import CoulombCostSpec, build_kernel
from .densities import DiscreteDensity, Grid1D
from .exceptions import InvalidParameterError
from .recovery import map_from_plan, potential_from_scalings
from .solver import SolverConfig, ipfp_solve

__all__ = ["EntropicCoulombTransport"]


class EntropicCoulombTransport(TransformerMixin, BaseEstimator):
    """Entropic N-marginal transport of one density with Coulomb cost.

    ``fit`` discretizes the marginal on the sorted sample positions ``X``
    (radii in radial mode) with point masses ``sample_weight`` and runs the
    scaling iteration. ``transform`` returns the barycentric co-motion
    estimates ``f_2(x), ..., f_N(x)``.

    Parameters
    ----------
    n_marginals : int, default=2
    epsilon : float, default=0.01
    mode : {"full", "radial"}, default="full"
    d : int, default=1
        Space dimension; 2 or 3 in radial mode.
    tol : float, optional
        Marginal L-infinity tolerance, default ``1e-10 * max(rho)``.
    max_iter : int, default=10000
        Maximum number of sweeps.
    log_domain : bool, default=False

    Attributes
    ----------
    density_ : DiscreteDensity
    result_ : IPFPResult
    potential_ : Potential
    n_iter_ : int
    converged_ : bool
    energy_ : float
        Coulomb energy ``<c, plan>``.
    """

    def __init__(self, n_marginals=2, epsilon=0.01, mode="full", d=1, tol=None,
                 max_iter=10000, log_domain=False):
        self.n_marginals = n_marginals
        self.epsilon = epsilon
        self.mode = mode
        self.d = d
        self.tol = tol
        self.max_iter = max_iter
        self.log_domain = log_domain

    def _positions(self, X):
        X = check_array(X, ensure_2d=False, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise InvalidParameterError("X must hold one position per row")
            X = X[:, 0]
        return X

    def fit(self, X, y=None, sample_weight=None):
        x = self._positions(X)
        if x.size < 2:
            raise InvalidParameterError("need at least 2 grid points")
        order = np.argsort(x, kind="stable")
        x = x[order]
        if sample_weight is None:
            w = np.ones(x.size)
        else:
            w = np.asarray(sample_weight, dtype=np.float64)[order]
        spec = CoulombCostSpec(N=self.n_marginals, d=self.d, mode=self.mode)
        grid = Grid1D.from_points(x)
        self.density_ = DiscreteDensity.from_unnormalized(grid, w)
        config = SolverConfig(
            self.epsilon, self.max_iter, self.tol, "log" if self.log_domain else "linear"
        )
        kernel = build_kernel(spec, grid, self.epsilon)
        self.result_ = ipfp_solve(kernel, self.density_, config)
        self.potential_ = potential_from_scalings(self.result_)
        self.n_iter_ = self.result_.sweeps
        self.converged_ = self.result_.converged
        self.energy_ = self.result_.transport_cost()
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "result_")
        x = self._positions(X)
        pts = self.density_.points
        out = np.empty((x.size, self.n_marginals - 1))
        for k in range(1, self.n_marginals):
            est = map_from_plan(self.result_, pts, source_axis=0, target_axis=k)
            good = est.valid
            out[:, k - 1] = np.interp(x, pts[good], est.barycentric[good])
        return out

    def score(self, X=None, y=None):
        """Negative Coulomb energy of the fitted plan (higher is better)."""
        check_is_fitted(self, "result_")
        return -self.energy_
