"""Stiff integration of moment differential equations between samples.

Three systems are integrated with the Radau IIA core in :mod:`._radau`:

* the linearized moment equations used by the extended Kalman filters,
  ``m' = f(t, m)``, ``P' = J P + P J^T + G Q G^T``;
* the sigma-point moment equations, where the drift is averaged over a
  point set regenerated from ``(m, P)`` at every evaluation;
* a bundle of independent points sharing one adaptive step grid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

from . import _radau
from .errors import ConfigurationError
from .models import DriftModel


class Status(str, enum.Enum):
    CONVERGED = "converged"
    BUDGET_EXHAUSTED = "budget_exhausted"
    NONFINITE = "nonfinite"


_STATUS = {
    _radau.STATUS_CONVERGED: Status.CONVERGED,
    _radau.STATUS_BUDGET: Status.BUDGET_EXHAUSTED,
    _radau.STATUS_NONFINITE: Status.NONFINITE,
}


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and limits for one integration call.

    ``max_rhs_evals`` is the budget per sampling interval; running out of it
    is reported as ``budget_exhausted``. ``newton_tol`` is measured in the
    error-weighted norm and is floored at ``10 eps / rtol``, the roundoff
    level of that norm.
    """

    rtol: float = 1e-12
    atol: float = 1e-12
    max_step: float = 0.1
    max_rhs_evals: int = 2_000_000
    newton_tol: float = 1e-10
    newton_max_iters: int = 20

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigurationError("rtol and atol must be positive")
        if not self.max_step > 0:
            raise ConfigurationError("max_step must be positive")
        if self.max_rhs_evals < 1 or self.newton_max_iters < 1:
            raise ConfigurationError("evaluation and iteration limits must be positive")


@dataclass(frozen=True)
class IntegrationOutcome:
    y_final: np.ndarray
    rhs_evals: int
    steps_accepted: int
    steps_rejected: int
    status: Status

    @property
    def ok(self) -> bool:
        return self.status is Status.CONVERGED


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Mean and covariance of a Gaussian state estimate."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).ravel()
        cov = np.array(self.cov, dtype=float).reshape(mean.size, mean.size)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self) -> int:
        return self.mean.size

    def min_eigenvalue(self) -> float:
        if self.n == 0:
            return 0.0
        return float(np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T)).min())

    def is_valid(self, sym_tol: float = 1e-12, eig_tol: float = 1e-10) -> bool:
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.cov))):
            return False
        if np.max(np.abs(self.cov - self.cov.T), initial=0.0) > sym_tol * max(1.0, np.abs(self.cov).max(initial=0.0)):
            return False
        return self.min_eigenvalue() >= -eig_tol * max(np.trace(self.cov), 0.0)


DEFAULT_CONFIG = IntegratorConfig()


# --------------------------------------------------------------------------
# Compiled systems
# --------------------------------------------------------------------------


@njit(cache=True)
def psd_cholesky(P):
    """Lower factor ``L`` with ``L L^T = P`` for symmetric PSD ``P``.

    Non-positive or roundoff-level pivots produce a zero column, so a
    singular (or slightly indefinite) matrix yields a factor with zero
    spread along the lost directions instead of a failure.
    """
    n = P.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = P[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 8.0 * n * _radau.EPS * abs(P[j, j]) or d <= 0.0:
            continue
        r = np.sqrt(d)
        L[j, j] = r
        for i in range(j + 1, n):
            s = P[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / r
    return L


@njit
def moment_rhs(t, y, drift, djac, args):
    params, gqg = args
    n = gqg.shape[0]
    x = y[:n].copy()
    P = y[n:].copy().reshape((n, n))
    A = djac(t, x, params)
    fx = drift(t, x, params)
    out = np.empty(n + n * n)
    for i in range(n):
        out[i] = fx[i]
    for i in range(n):
        for j in range(n):
            s = gqg[i, j]
            for k in range(n):
                s += A[i, k] * P[k, j] + P[i, k] * A[j, k]
            out[n + i * n + j] = s
    return out


@njit
def sigma_moment_rhs(t, y, drift, djac, args):
    # unit: n x p directions (already scaled), w: p weights.
    params, gqg, unit, w = args
    n = gqg.shape[0]
    m = y[:n].copy()
    P = y[n:].copy().reshape((n, n))
    L = psd_cholesky(0.5 * (P + P.T))
    dm = np.zeros(n)
    dP = gqg.copy()
    X = np.empty(n)
    dev = np.empty(n)
    for p in range(unit.shape[1]):
        for i in range(n):
            s = 0.0
            for k in range(n):
                s += L[i, k] * unit[k, p]
            dev[i] = s
            X[i] = m[i] + s
        F = drift(t, X, params)
        wp = w[p]
        for i in range(n):
            dm[i] += wp * F[i]
            for j in range(n):
                dP[i, j] += wp * (dev[i] * F[j] + F[i] * dev[j])
    out = np.empty(n + n * n)
    out[:n] = dm
    out[n:] = dP.ravel()
    return out


@njit
def bundle_rhs(t, y, drift, djac, args):
    params, n = args
    out = np.empty_like(y)
    for p in range(y.shape[0] // n):
        out[p * n : (p + 1) * n] = drift(t, y[p * n : (p + 1) * n].copy(), params)
    return out


@njit
def bundle_jac(t, y, drift, djac, args):
    params, n = args
    N = y.shape[0]
    out = np.zeros((N, N))
    for p in range(N // n):
        out[p * n : (p + 1) * n, p * n : (p + 1) * n] = djac(t, y[p * n : (p + 1) * n].copy(), params)
    return out


@njit
def user_rhs(t, y, drift, djac, args):
    return drift(t, y, args)


@njit
def user_jac(t, y, drift, djac, args):
    return djac(t, y, args)


def _outcome(result) -> IntegrationOutcome:
    y, nfev, nacc, nrej, status = result
    return IntegrationOutcome(np.asarray(y), int(nfev), int(nacc), int(nrej), _STATUS[int(status)])


def _solve(fun, jac, has_jac, drift, djac, args, y0, t0, t1, cfg, sym_off=0, sym_n=0):
    if not t1 > t0:
        raise ConfigurationError(f"integration interval [{t0}, {t1}] is empty")
    y0 = np.ascontiguousarray(y0, dtype=float).copy()
    if not np.all(np.isfinite(y0)):
        raise ConfigurationError("initial state must be finite")
    return _outcome(
        _radau.radau_solve(
            fun, jac, has_jac, drift, djac, args, y0, float(t0), float(t1),
            float(cfg.rtol), float(cfg.atol), float(cfg.max_step), int(cfg.max_rhs_evals),
            float(cfg.newton_tol), int(cfg.newton_max_iters), int(sym_off), int(sym_n),
        )
    )


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------


def integrate_stiff(rhs, y0, t0, t1, cfg: IntegratorConfig = DEFAULT_CONFIG, rhs_jacobian=None, params=None) -> IntegrationOutcome:
    """Integrate ``y' = rhs(t, y)`` over ``[t0, t1]`` with Radau IIA.

    Numba-jitted right-hand sides are called as ``rhs(t, y, params)`` and run
    compiled; any other callable runs interpreted, as ``rhs(t, y)`` (or
    ``rhs(t, y, params)`` when ``params`` is given). Without
    ``rhs_jacobian`` the Newton matrix comes from forward differences.
    """
    has_jac = rhs_jacobian is not None
    if isinstance(rhs, CPUDispatcher):
        if has_jac and not isinstance(rhs_jacobian, CPUDispatcher):
            raise ConfigurationError("a jitted rhs needs a jitted rhs_jacobian")
        args = np.zeros(0) if params is None else params
        jac = rhs_jacobian if has_jac else _radau.no_jacobian
        return _solve(user_rhs, user_jac if has_jac else _radau.no_jacobian, has_jac, rhs, jac, args, y0, t0, t1, cfg)

    if params is None:
        fun = lambda t, y, d, dj, a: np.asarray(rhs(t, y), dtype=float)  # noqa: E731
        jfun = (lambda t, y, d, dj, a: np.asarray(rhs_jacobian(t, y), dtype=float)) if has_jac else None  # noqa: E731
    else:
        fun = lambda t, y, d, dj, a: np.asarray(rhs(t, y, a), dtype=float)  # noqa: E731
        jfun = (lambda t, y, d, dj, a: np.asarray(rhs_jacobian(t, y, a), dtype=float)) if has_jac else None  # noqa: E731
    if not has_jac:
        jfun = lambda t, y, d, dj, a: None  # noqa: E731
    if not t1 > t0:
        raise ConfigurationError(f"integration interval [{t0}, {t1}] is empty")
    y0 = np.array(y0, dtype=float).ravel()
    if not np.all(np.isfinite(y0)):
        raise ConfigurationError("initial state must be finite")
    return _outcome(
        _radau.radau_solve.py_func(
            fun, jfun, has_jac, None, None, params, y0, float(t0), float(t1),
            cfg.rtol, cfg.atol, cfg.max_step, cfg.max_rhs_evals, cfg.newton_tol,
            cfg.newton_max_iters, 0, 0,
        )
    )


def _model_args(drift: DriftModel):
    return np.array(drift.params, dtype=float), np.ascontiguousarray(drift.noise_intensity())


def propagate_moments(drift: DriftModel, belief: GaussianBelief, t0: float, t1: float, cfg: IntegratorConfig = DEFAULT_CONFIG):
    """Integrate the linearized mean/covariance equations over ``[t0, t1]``.

    Returns the predicted belief and the integration outcome. The covariance
    is re-symmetrized after every accepted step and once more on return.
    """
    n = drift.n
    y0 = np.concatenate([belief.mean, belief.cov.ravel()])
    out = _solve(
        moment_rhs, _radau.no_jacobian, False, drift.drift_kernel, drift.jacobian_kernel,
        _model_args(drift), y0, t0, t1, cfg, sym_off=n, sym_n=n,
    )
    P = out.y_final[n:].reshape(n, n)
    return GaussianBelief(out.y_final[:n], 0.5 * (P + P.T)), out


def propagate_sigma_moments(drift: DriftModel, belief: GaussianBelief, unit_points, weights, t0: float, t1: float, cfg: IntegratorConfig = DEFAULT_CONFIG):
    """Integrate the sigma-point moment equations over ``[t0, t1]``.

    ``unit_points`` (n x p) are the point offsets for unit covariance; at each
    evaluation they are mapped through the current covariance factor.
    """
    n = drift.n
    params, gqg = _model_args(drift)
    args = (params, gqg, np.ascontiguousarray(unit_points, dtype=float), np.ascontiguousarray(weights, dtype=float))
    y0 = np.concatenate([belief.mean, belief.cov.ravel()])
    out = _solve(
        sigma_moment_rhs, _radau.no_jacobian, False, drift.drift_kernel, drift.jacobian_kernel,
        args, y0, t0, t1, cfg, sym_off=n, sym_n=n,
    )
    P = out.y_final[n:].reshape(n, n)
    return GaussianBelief(out.y_final[:n], 0.5 * (P + P.T)), out


def propagate_point_bundle(drift: DriftModel, points, t0: float, t1: float, cfg: IntegratorConfig = DEFAULT_CONFIG):
    """Advance every point through ``x' = f(t, x)`` on one shared step grid."""
    n = drift.n
    pts = np.asarray(points, dtype=float).reshape(-1, n)
    out = _solve(
        bundle_rhs, bundle_jac, True, drift.drift_kernel, drift.jacobian_kernel,
        (np.array(drift.params, dtype=float), n), pts.ravel(), t0, t1, cfg,
    )
    return list(out.y_final.reshape(-1, n)), out
