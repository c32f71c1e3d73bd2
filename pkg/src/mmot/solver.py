"""Entropic multi-marginal solvers.

Two equivalent routes to the KL projection of the Gibbs kernel onto the set of
plans with prescribed marginals:

* :func:`bregman_solve` cycles explicit KL projections over a dense ``M**N``
  plan. It is the reference implementation and only meant for small grids.
* :func:`ipfp_solve` keeps one scaling vector per marginal, so that the plan is
  ``a_1 (x) ... (x) a_N * K``; each update rescales one vector.

Started from the same kernel, one IPFP sweep reproduces one Bregman cycle.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .exceptions import InfeasibleError, InvalidParameterError

__all__ = [
    "SolverConfig",
    "ScalingState",
    "TransportPlan",
    "MarginalResidual",
    "BregmanResult",
    "IPFPResult",
    "SparseIPFPResult",
    "kl_project",
    "bregman_solve",
    "ipfp_solve",
    "ipfp_solve_sparse",
    "residuals",
    "entropic_cost",
    "write_history",
]

logger = logging.getLogger(__name__)

_MODES = ("linear", "log")


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule and evaluation mode.

    ``tolerance`` bounds the L-infinity marginal violation over all
    marginals; ``None`` means ``1e-10 * max(rho)``. One sweep updates every
    scaling vector once (one Bregman cycle).
    """

    epsilon: float
    max_sweeps: int = 10_000
    tolerance: float | None = None
    evaluation_mode: str = "linear"
    record_history: bool = False

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InvalidParameterError(f"epsilon must be positive, got {self.epsilon!r}")
        if int(self.max_sweeps) != self.max_sweeps or self.max_sweeps < 1:
            raise InvalidParameterError("max_sweeps must be an integer >= 1")
        if self.tolerance is not None and not self.tolerance > 0:
            raise InvalidParameterError("tolerance must be positive")
        if self.evaluation_mode not in _MODES:
            raise InvalidParameterError(f"evaluation_mode must be one of {_MODES}")

    def resolved_tolerance(self, marginals):
        if self.tolerance is not None:
            return self.tolerance
        return 1e-10 * max(float(np.max(m)) for m in marginals)


@dataclass
class ScalingState:
    """Scaling vectors ``a_j``; stored as logarithms when ``log`` is set."""

    vectors: list
    sweep_count: int = 0
    log: bool = False

    def log_vectors(self):
        if self.log:
            return [np.asarray(v) for v in self.vectors]
        with np.errstate(divide="ignore"):
            return [np.log(v) for v in self.vectors]

    def linear_vectors(self):
        if not self.log:
            return [np.asarray(v) for v in self.vectors]
        return [np.exp(v) for v in self.vectors]

    def copy(self):
        return ScalingState([v.copy() for v in self.vectors], self.sweep_count, self.log)


@dataclass(frozen=True)
class MarginalResidual:
    """Per-marginal deviations of the plan's marginals from their targets."""

    linf: np.ndarray
    l1: np.ndarray

    @property
    def max_linf(self):
        return float(np.max(self.linf))

    @property
    def max_l1(self):
        return float(np.max(self.l1))

    @classmethod
    def from_marginals(cls, computed, targets):
        diffs = [np.abs(np.asarray(c) - np.asarray(t)) for c, t in zip(computed, targets)]
        return cls(np.array([d.max() for d in diffs]), np.array([d.sum() for d in diffs]))


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """An N-way plan, either dense or as a coordinate list.

    Sparse plans hold ``coords`` (``(n, N)`` integer indices) and matching
    ``values``; absent cells are structural zeros.
    """

    shape: tuple
    weights: np.ndarray | None = None
    coords: np.ndarray | None = None
    values: np.ndarray | None = None
    epsilon_used: float | None = None

    @classmethod
    def from_dense(cls, weights, epsilon=None):
        weights = np.asarray(weights, dtype=float)
        return cls(weights.shape, weights=weights, epsilon_used=epsilon)

    @classmethod
    def from_coords(cls, shape, coords, values, epsilon=None):
        return cls(tuple(shape), coords=np.asarray(coords), values=np.asarray(values, float),
                   epsilon_used=epsilon)

    @property
    def N(self):
        return len(self.shape)

    @property
    def is_sparse(self):
        return self.weights is None

    @property
    def total_mass(self):
        return float(self.values.sum() if self.is_sparse else self.weights.sum())

    def dense(self):
        if not self.is_sparse:
            return self.weights
        out = np.zeros(self.shape)
        np.add.at(out, tuple(self.coords.T), self.values)
        return out

    def marginal(self, axis):
        if self.is_sparse:
            return np.bincount(self.coords[:, axis], weights=self.values,
                               minlength=self.shape[axis])
        others = tuple(k for k in range(self.N) if k != axis)
        return self.weights.sum(axis=others)

    def pair_marginal(self, i, j):
        if self.is_sparse:
            out = np.zeros((self.shape[i], self.shape[j]))
            np.add.at(out, (self.coords[:, i], self.coords[:, j]), self.values)
            return out
        others = tuple(k for k in range(self.N) if k not in (i, j))
        p = self.weights.sum(axis=others) if others else self.weights
        return p if i < j else p.T

    def nonzero_triplets(self, cutoff=0.0):
        """``(index..., weight)`` rows for entries above ``cutoff``."""
        if self.is_sparse:
            keep = self.values > cutoff
            return self.coords[keep], self.values[keep]
        idx = np.nonzero(self.weights > cutoff)
        return np.stack(idx, axis=1), self.weights[idx]


def _as_marginals(marginals, N):
    if hasattr(marginals, "weights"):
        marginals = [marginals] * N
    elif isinstance(marginals, np.ndarray) and marginals.ndim == 1:
        marginals = [marginals] * N
    marginals = [np.asarray(getattr(m, "weights", m), dtype=float) for m in marginals]
    if len(marginals) != N:
        raise InvalidParameterError(f"expected {N} marginals, got {len(marginals)}")
    for m in marginals:
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise InvalidParameterError("marginal weights must be finite and nonnegative")
    masses = [m.sum() for m in marginals]
    if max(masses) - min(masses) > 1e-9 * max(masses):
        raise InvalidParameterError("all marginals must carry the same mass")
    return marginals


def _axis_sum(plan, axis):
    others = tuple(k for k in range(plan.ndim) if k != axis)
    return plan.sum(axis=others)


def kl_project(plan, marginal, axis):
    """KL projection of a dense plan onto ``{plan : marginal_axis = rho}``.

    Each fibre orthogonal to ``axis`` is rescaled by ``rho / partial_sum``.
    Fibres with zero target mass are zeroed.

    Parameters
    ----------
    plan : TransportPlan or ndarray
        Dense nonnegative plan.
    marginal : DiscreteDensity or ndarray
        Target weights for ``axis``.
    axis : int

    Returns
    -------
    Projected plan, of the same type as ``plan``.
    """
    wrap = isinstance(plan, TransportPlan)
    arr = plan.dense() if wrap else np.asarray(plan, dtype=float)
    rho = np.asarray(getattr(marginal, "weights", marginal), dtype=float)
    partial = _axis_sum(arr, axis)
    bad = np.nonzero((partial <= 0) & (rho > 0))[0]
    if bad.size:
        raise InfeasibleError(
            f"zero partial sum at index {int(bad[0])} of axis {axis} with positive target mass",
            axis=axis, index=int(bad[0]),
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(rho > 0, rho / partial, 0.0)
    shape = [1] * arr.ndim
    shape[axis] = -1
    out = arr * scale.reshape(shape)
    if wrap:
        return TransportPlan.from_dense(out, plan.epsilon_used)
    return out


@dataclass
class BregmanResult:
    plan: TransportPlan
    residual: MarginalResidual
    history: list
    converged: bool
    sweeps: int


def bregman_solve(kernel, marginals, config, sweeps=None):
    """Cyclic KL projections starting from the Gibbs kernel.

    Parameters
    ----------
    kernel : GibbsKernel, ReducedKernel3, TransportPlan or ndarray
        Starting plan; kernels are expanded to their dense ``M**N`` tensor.
    marginals : density, array or list of them (one per axis)
    config : SolverConfig
    sweeps : int, optional
        Run exactly this many cycles, ignoring the tolerance.

    Returns
    -------
    BregmanResult
    """
    if isinstance(kernel, TransportPlan):
        gamma = kernel.dense().copy()
    elif isinstance(kernel, np.ndarray):
        gamma = np.array(kernel, dtype=float)
    else:
        gamma = kernel.dense()
    N = gamma.ndim
    rho = _as_marginals(marginals, N)
    tol = config.resolved_tolerance(rho)
    limit = sweeps if sweeps is not None else config.max_sweeps
    history = []
    converged = False
    n = 0
    for n in range(1, limit + 1):
        for axis in range(N):
            gamma = kl_project(gamma, rho[axis], axis)
        res = MarginalResidual.from_marginals([_axis_sum(gamma, k) for k in range(N)], rho)
        if config.record_history:
            _, _, obj, _ = _dense_objective(gamma, None, config.epsilon, kernel)
            history.append(_history_row(n, res, obj))
        if sweeps is None and res.max_linf < tol:
            converged = True
            break
    res = MarginalResidual.from_marginals([_axis_sum(gamma, k) for k in range(N)], rho)
    converged = converged or res.max_linf < tol
    return BregmanResult(TransportPlan.from_dense(gamma, config.epsilon), res, history,
                         converged, n)


def _history_row(sweep, res, objective):
    return {
        "sweep": int(sweep),
        "residual_linf": res.max_linf,
        "residual_l1": res.max_l1,
        "objective": None if objective is None else float(objective),
    }


# -- contractions -----------------------------------------------------------

def _kernel_N(kernel):
    return getattr(kernel, "N", None) or kernel.spec.N


def _contract_linear(kernel, a, j):
    """``s_j[i] = sum over the other indices of K * prod_{k != j} a_k``."""
    N = len(a)
    if N == 2 and hasattr(kernel, "factor"):
        K = kernel.factor
        return K @ a[1] if j == 0 else K.T @ a[0]
    if N == 3 and hasattr(kernel, "factor"):
        K = kernel.factor
        if j == 0:
            B = (K * a[2]) @ K.T
            return (K * B) @ a[1]
        if j == 1:
            B = (K * a[2]) @ K.T
            return (K * B).T @ a[0]
        C = a[0][:, None] * K * a[1][None, :]
        return ((C @ K) * K).sum(axis=0)
    if N == 3:
        M = kernel.size
        s = np.zeros(M)
        for i in range(M):
            S = kernel.slice(i)
            if j == 0:
                s[i] = a[1] @ S @ a[2]
            elif a[0][i] != 0:
                s += a[0][i] * (S @ a[2] if j == 1 else a[1] @ S)
        return s
    T = _dense_cache(kernel)
    for k in reversed(range(N)):
        if k != j:
            T = np.tensordot(T, a[k], axes=([k], [0]))
    return T


def _contract_log(kernel, f, j):
    """Log-domain version of :func:`_contract_linear`."""
    N = len(f)
    with np.errstate(invalid="ignore", divide="ignore"):
        if N == 2 and hasattr(kernel, "log_factor"):
            L = kernel.log_factor
            if j == 0:
                return logsumexp(L + f[1][None, :], axis=1)
            return logsumexp(L + f[0][:, None], axis=0)
        if N == 3:
            M = kernel.size
            if j == 0:
                return np.array([
                    logsumexp(kernel.log_slice(i) + f[1][:, None] + f[2][None, :])
                    for i in range(M)
                ])
            acc = np.full(M, -np.inf)
            for i in range(M):
                if f[0][i] == -np.inf:
                    continue
                T = kernel.log_slice(i) + f[0][i]
                if j == 1:
                    row = logsumexp(T + f[2][None, :], axis=1)
                else:
                    row = logsumexp(T + f[1][:, None], axis=0)
                acc = np.logaddexp(acc, row)
            return acc
        T = kernel.log_dense()
        for k in range(N):
            if k != j:
                shape = [1] * N
                shape[k] = -1
                T = T + f[k].reshape(shape)
        others = tuple(k for k in range(N) if k != j)
        return logsumexp(T, axis=others)


_DENSE = {}


def _dense_cache(kernel):
    key = id(kernel)
    hit = _DENSE.get(key)
    if hit is None or hit[0] is not kernel:
        _DENSE.clear()
        hit = (kernel, kernel.dense())
        _DENSE[key] = hit
    return hit[1]


class _Underflow(Exception):
    pass


def _linear_update(kernel, a, rho, j, s=None):
    if s is None:
        s = _contract_linear(kernel, a, j)
    pos = rho > 0
    if np.any((s <= 0) & pos) or not np.all(np.isfinite(s)):
        raise _Underflow(j)
    with np.errstate(divide="ignore", invalid="ignore"):
        new = np.where(pos, rho / s, 0.0)
    if not np.all(np.isfinite(new)):
        raise _Underflow(j)
    return new


def _log_update(kernel, f, logrho, j, ls=None):
    if ls is None:
        ls = _contract_log(kernel, f, j)
    pos = logrho > -np.inf
    bad = np.nonzero(pos & ~(ls > -np.inf))[0]
    if bad.size:
        raise InfeasibleError(
            f"marginal {j}: index {int(bad[0])} has positive mass but no admissible "
            f"kernel support", axis=j, index=int(bad[0]),
        )
    return np.where(pos, logrho - ls, -np.inf)


def _objective_from_marginals(margs, logs, epsilon):
    # eps * (sum_j <m_j, log a_j>) equals <c, g> + eps * sum g log g
    total = 0.0
    for m, f in zip(margs, logs):
        keep = m > 0
        total += float(np.dot(m[keep], f[keep]))
    return epsilon * total


@dataclass
class IPFPResult:
    """Converged (or stopped) scaling vectors with the kernel they scale."""

    state: ScalingState
    kernel: object
    marginals: list
    residual: MarginalResidual
    history: list = field(default_factory=list)
    converged: bool = False
    evaluation_mode: str = "linear"

    @property
    def epsilon(self):
        return self.kernel.epsilon

    @property
    def sweeps(self):
        return self.state.sweep_count

    @property
    def N(self):
        return len(self.state.vectors)

    def marginal(self, j):
        return _state_marginals(self.kernel, self.state)[j]

    def plan_slices(self):
        """Yield ``(i, P_i)`` slices along the first axis (``N == 3``)."""
        if self.N != 3:
            raise InvalidParameterError("slices are defined for three marginals")
        if self.state.log:
            f = self.state.vectors
            for i in range(self.kernel.size):
                if f[0][i] == -np.inf:
                    yield i, np.zeros((self.kernel.size,) * 2)
                    continue
                with np.errstate(invalid="ignore"):
                    L = self.kernel.log_slice(i) + f[0][i] + f[1][:, None] + f[2][None, :]
                yield i, np.exp(L)
        else:
            a = self.state.vectors
            for i in range(self.kernel.size):
                yield i, a[0][i] * self.kernel.slice(i) * a[1][:, None] * a[2][None, :]

    def plan(self):
        """Dense plan ``prod_j a_j * K``; ``M**N`` memory."""
        N = self.N
        if self.state.log:
            T = self.kernel.log_dense()
            for k, f in enumerate(self.state.vectors):
                shape = [1] * N
                shape[k] = -1
                with np.errstate(invalid="ignore"):
                    T = T + f.reshape(shape)
            P = np.exp(T)
        else:
            P = self.kernel.dense() if N != 2 else self.kernel.factor.copy()
            for k, a in enumerate(self.state.vectors):
                shape = [1] * N
                shape[k] = -1
                P = P * a.reshape(shape)
        return TransportPlan.from_dense(np.nan_to_num(P, nan=0.0), self.epsilon)

    def pair_marginal(self, i, j):
        """Two-marginal projection of the plan without materializing it."""
        if self.N == 2:
            P = self.plan().weights
            return P if i < j else P.T
        if self.N != 3:
            return self.plan().pair_marginal(i, j)
        M = self.kernel.size
        out = np.zeros((M, M))
        key = tuple(sorted((i, j)))
        for r, P in self.plan_slices():
            if key == (0, 1):
                out[r, :] = P.sum(axis=1)
            elif key == (0, 2):
                out[r, :] = P.sum(axis=0)
            else:
                out += P
        return out if i < j else out.T

    def transport_cost(self):
        """``<c, plan>`` with the convention ``0 * inf = 0``."""
        if self.N == 2:
            P = self.plan().weights
            return _masked_dot(self.kernel.pair_cost, P)
        if self.N == 3 and hasattr(self.kernel, "pair_cost"):
            c = self.kernel.pair_cost
            return sum(_masked_dot(c, self.pair_marginal(p, q))
                       for p, q in ((0, 1), (0, 2), (1, 2)))
        if self.N == 3:
            return sum(_masked_dot(self.kernel.cost_slice(i), P) for i, P in self.plan_slices())
        return _masked_dot(self.kernel.cost_dense(), self.plan().weights)

    def regularized_objective(self):
        margs = _state_marginals(self.kernel, self.state)
        return _objective_from_marginals(margs, self.state.log_vectors(), self.epsilon)

    def entropy(self):
        """``sum g log g`` of the plan."""
        return (self.regularized_objective() - self.transport_cost()) / self.epsilon


def _masked_dot(cost, plan):
    with np.errstate(invalid="ignore"):
        prod = np.where(plan > 0, cost * plan, 0.0)
    return float(prod.sum())


def _state_marginals(kernel, state):
    N = len(state.vectors)
    if state.log:
        f = state.vectors
        return [np.exp(np.where(f[j] > -np.inf, f[j] + _contract_log(kernel, f, j), -np.inf))
                for j in range(N)]
    a = state.vectors
    return [a[j] * _contract_linear(kernel, a, j) for j in range(N)]


def _initial_state(rho, log):
    # a_1 = rho (never read before its first update), a_j = 1 otherwise
    N = len(rho)
    vecs = [rho[0].copy()] + [np.where(rho[k] > 0, 1.0, 0.0) for k in range(1, N)]
    state = ScalingState(vecs, 0, False)
    if log:
        state = ScalingState(state.log_vectors(), 0, True)
    return state


def ipfp_solve(kernel, marginals, config, init=None, sweeps=None):
    """Iterative proportional fitting on scaling vectors.

    Each update sets ``a_j = rho / s_j`` where ``s_j`` contracts the kernel
    against all other scaling vectors (already-updated ones first). For two
    marginals this is a matrix-vector product; for three separable marginals
    it is evaluated with nested pairwise contractions in ``O(M**3)``.

    In linear mode an underflow or overflow triggers a restart of the current
    sweep in log mode, with a warning.

    Parameters
    ----------
    kernel : GibbsKernel or ReducedKernel3
    marginals : density, array or list of them
    config : SolverConfig
    init : ScalingState, optional
        Warm start; defaults to ``a_1 = rho`` and ``a_j = 1`` for ``j >= 2``.
    sweeps : int, optional
        Run exactly this many sweeps, ignoring the tolerance.

    Returns
    -------
    IPFPResult
    """
    N = _kernel_N(kernel)
    rho = _as_marginals(marginals, N)
    if any(m.size != kernel.size for m in rho):
        raise InvalidParameterError("marginal length does not match the kernel grid")
    tol = config.resolved_tolerance(rho)
    log = config.evaluation_mode == "log"
    state = init.copy() if init is not None else _initial_state(rho, log)
    if state.log != log:
        state = ScalingState(state.log_vectors() if log else state.linear_vectors(),
                             state.sweep_count, log)
    with np.errstate(divide="ignore"):
        logrho = [np.log(m) for m in rho]
    limit = sweeps if sweeps is not None else config.max_sweeps
    history = []
    converged = False
    mode = "log" if log else "linear"
    for _ in range(limit):
        backup = state.copy()
        try:
            _sweep(kernel, state, rho, logrho)
            margs = _state_marginals(kernel, state)
            if not all(np.all(np.isfinite(m)) for m in margs):
                raise _Underflow(-1)
        except _Underflow:
            warnings.warn("linear-domain IPFP under/overflowed; restarting in log domain",
                          RuntimeWarning, stacklevel=2)
            logger.warning("switching to log-domain evaluation at sweep %d", backup.sweep_count)
            state = ScalingState(backup.log_vectors(), backup.sweep_count, True)
            mode = "log"
            _sweep(kernel, state, rho, logrho)
            margs = _state_marginals(kernel, state)
        state.sweep_count += 1
        res = MarginalResidual.from_marginals(margs, rho)
        if config.record_history:
            obj = _objective_from_marginals(margs, state.log_vectors(), config.epsilon)
            history.append(_history_row(state.sweep_count, res, obj))
        if sweeps is None and res.max_linf < tol:
            converged = True
            break
    else:
        res = MarginalResidual.from_marginals(_state_marginals(kernel, state), rho)
        converged = res.max_linf < tol
    return IPFPResult(state, kernel, rho, res, history, converged, mode)


def _sweep(kernel, state, rho, logrho):
    vecs = state.vectors
    for j in range(len(vecs)):
        if state.log:
            vecs[j] = _log_update(kernel, vecs, logrho[j], j)
        else:
            vecs[j] = _linear_update(kernel, vecs, rho[j], j)


# -- sparse (masked) IPFP ---------------------------------------------------

@dataclass
class SparseIPFPResult:
    coords: np.ndarray
    log_kernel: np.ndarray
    shape: tuple
    state: ScalingState
    marginals: list
    residual: MarginalResidual
    epsilon: float
    history: list = field(default_factory=list)
    converged: bool = False

    @property
    def sweeps(self):
        return self.state.sweep_count

    def plan(self):
        logs = self.state.log_vectors()
        L = self.log_kernel.copy()
        for k, f in enumerate(logs):
            L = L + f[self.coords[:, k]]
        with np.errstate(invalid="ignore"):
            vals = np.nan_to_num(np.exp(L), nan=0.0)
        return TransportPlan.from_coords(self.shape, self.coords, vals, self.epsilon)


def _group_lse(idx, vals, size):
    mx = np.full(size, -np.inf)
    np.maximum.at(mx, idx, vals)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(invalid="ignore", under="ignore"):
        s = np.bincount(idx, weights=np.exp(vals - safe[idx]), minlength=size)
    with np.errstate(divide="ignore"):
        return np.where(s > 0, np.log(s) + safe, -np.inf)


def ipfp_solve_sparse(coords, log_kernel, shape, marginals, config, init=None):
    """IPFP restricted to a set of active cells.

    Cells outside ``coords`` are structural zeros and never enter the
    contractions. Contractions run in the log domain over the active list.

    Parameters
    ----------
    coords : (n, N) int array of active cells
    log_kernel : (n,) array of ``-c/eps`` at those cells
    shape : per-axis grid sizes
    marginals : list of N weight arrays
    config : SolverConfig
    init : ScalingState, optional
    """
    coords = np.asarray(coords)
    log_kernel = np.asarray(log_kernel, dtype=float)
    N = len(shape)
    rho = [np.asarray(getattr(m, "weights", m), dtype=float) for m in marginals]
    tol = config.resolved_tolerance(rho)
    with np.errstate(divide="ignore"):
        logrho = [np.log(m) for m in rho]
    if init is None:
        f = [np.where(r > 0, 0.0, -np.inf) for r in rho]
    else:
        f = [np.array(v, dtype=float) for v in init.log_vectors()]
    state = ScalingState(f, 0 if init is None else init.sweep_count, True)

    def contract(j):
        L = log_kernel.copy()
        for k in range(N):
            if k != j:
                L = L + state.vectors[k][coords[:, k]]
        return _group_lse(coords[:, j], L, shape[j])

    def margs():
        out = []
        for j in range(N):
            with np.errstate(invalid="ignore"):
                out.append(np.exp(contract(j) + state.vectors[j]))
        return [np.nan_to_num(m, nan=0.0) for m in out]

    history = []
    converged = False
    for _ in range(config.max_sweeps):
        for j in range(N):
            ls = contract(j)
            pos = rho[j] > 0
            bad = np.nonzero(pos & ~(ls > -np.inf))[0]
            if bad.size:
                raise InfeasibleError(
                    f"marginal {j}: index {int(bad[0])} has positive mass but no active cell",
                    axis=j, index=int(bad[0]),
                )
            state.vectors[j] = np.where(pos, logrho[j] - ls, -np.inf)
        state.sweep_count += 1
        m = margs()
        res = MarginalResidual.from_marginals(m, rho)
        if config.record_history:
            obj = _objective_from_marginals(m, state.vectors, config.epsilon)
            history.append(_history_row(state.sweep_count, res, obj))
        if res.max_linf < tol:
            converged = True
            break
    return SparseIPFPResult(coords, log_kernel, tuple(shape), state, rho, res,
                            config.epsilon, history, converged)


# -- diagnostics --------------------------------------------------------------

def residuals(obj, marginals, kernel=None):
    """Marginal violations of a plan or of a scaling state.

    ``obj`` may be a :class:`TransportPlan`, a dense array, an
    :class:`IPFPResult`, or a :class:`ScalingState` (then ``kernel`` is
    required).
    """
    if isinstance(obj, (IPFPResult, SparseIPFPResult)):
        if isinstance(obj, SparseIPFPResult):
            plan = obj.plan()
            N = plan.N
            rho = _as_marginals(marginals, N)
            return MarginalResidual.from_marginals([plan.marginal(k) for k in range(N)], rho)
        kernel, obj = obj.kernel, obj.state
    if isinstance(obj, ScalingState):
        if kernel is None:
            raise InvalidParameterError("a kernel is needed to evaluate a scaling state")
        rho = _as_marginals(marginals, len(obj.vectors))
        return MarginalResidual.from_marginals(_state_marginals(kernel, obj), rho)
    plan = obj if isinstance(obj, TransportPlan) else TransportPlan.from_dense(obj)
    rho = _as_marginals(marginals, plan.N)
    return MarginalResidual.from_marginals([plan.marginal(k) for k in range(plan.N)], rho)


def _dense_objective(gamma, cost, epsilon, kernel=None):
    if cost is None:
        cost = kernel.cost_dense() if hasattr(kernel, "cost_dense") else None
    if cost is None:
        return None, None, None, False
    return _entropic_terms(gamma, cost, epsilon)


def _entropic_terms(gamma, cost, epsilon):
    gamma = np.asarray(gamma, dtype=float)
    cost = np.asarray(cost, dtype=float)
    flagged = bool(np.any((gamma > 0) & np.isinf(cost)))
    if flagged:
        transport = math.inf
    else:
        with np.errstate(invalid="ignore"):
            transport = float(np.where(gamma > 0, cost * gamma, 0.0).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = float(np.where(gamma > 0, gamma * np.log(gamma), 0.0).sum())
    obj = transport + epsilon * ent if epsilon is not None else None
    return transport, ent, obj, flagged


def entropic_cost(plan, cost, epsilon=None):
    """Transport cost, entropy ``sum g log g`` and regularized objective.

    Parameters
    ----------
    plan : TransportPlan or ndarray
    cost : ndarray of the same shape, a kernel (its cost tensor is used), or
        a :class:`~mmot.cost.CoulombCostSpec` together with a sparse plan
        carrying ``positions`` via the kernel.
    epsilon : float, optional
        Defaults to ``plan.epsilon_used``.

    Returns
    -------
    (transport_cost, entropy, objective, flagged) where ``flagged`` marks
    positive mass on an infinite-cost cell (transport cost is then ``inf``).
    """
    if isinstance(plan, TransportPlan):
        if epsilon is None:
            epsilon = plan.epsilon_used
        if plan.is_sparse and hasattr(cost, "tuple_cost"):
            c = cost.tuple_cost(plan.coords)
            return _entropic_terms(plan.values, c, epsilon)
        gamma = plan.dense()
    else:
        gamma = np.asarray(plan, dtype=float)
    if hasattr(cost, "cost_dense"):
        if epsilon is None:
            epsilon = cost.epsilon
        cost = cost.cost_dense()
    return _entropic_terms(gamma, cost, epsilon)


def write_history(history, path):
    """One JSON object per sweep."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row) + "\n")
