"""Drift, diffusion and measurement models for continuous-discrete systems.

A system is ``dx = f(t, x) dt + G dw`` with ``w`` a Brownian motion of
intensity ``Q``, observed at sampling instants through ``z = h(x) + v``,
``v ~ N(0, R)``.

Drift models carry numba-compiled kernels ``f(t, x, params)`` and
``J(t, x, params)`` so the stiff integrator can run them in nopython mode.
New drift families are added by writing two such kernels and wrapping them
in a :class:`DriftModel`; measurement models are plain Python callables.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .errors import ConfigurationError


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# Compiled drift kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def dahlquist_drift(t, x, p):
    out = np.empty(1)
    out[0] = p[0] * x[0] ** int(p[1])
    return out


@njit(cache=True)
def dahlquist_jacobian(t, x, p):
    j = int(p[1])
    out = np.empty((1, 1))
    out[0, 0] = j * p[0] * x[0] ** (j - 1)
    return out


@njit(cache=True)
def vanderpol_drift(t, x, p):
    mu = p[0]
    out = np.empty(2)
    out[0] = x[1]
    out[1] = mu * ((1.0 - x[0] * x[0]) * x[1] - x[0])
    return out


@njit(cache=True)
def vanderpol_jacobian(t, x, p):
    mu = p[0]
    out = np.empty((2, 2))
    out[0, 0] = 0.0
    out[0, 1] = 1.0
    out[1, 0] = mu * (-2.0 * x[0] * x[1] - 1.0)
    out[1, 1] = mu * (1.0 - x[0] * x[0])
    return out


@njit(cache=True)
def linear_drift(t, x, p):
    # p holds the n x n system matrix row-major.
    n = x.shape[0]
    out = np.zeros(n)
    for i in range(n):
        for k in range(n):
            out[i] += p[i * n + k] * x[k]
    return out


@njit(cache=True)
def linear_jacobian(t, x, p):
    n = x.shape[0]
    return p[: n * n].copy().reshape((n, n))


# --------------------------------------------------------------------------
# Model types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DriftModel:
    """Drift ``f``, its Jacobian, and a time-invariant diffusion ``G`` / ``Q``.

    ``drift_kernel`` and ``jacobian_kernel`` must be numba-jitted functions of
    ``(t, x, params)``.
    """

    n: int
    drift_kernel: Callable
    jacobian_kernel: Callable
    params: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "params", np.array(self.params, dtype=float).ravel())
        G = np.array(self.G, dtype=float).reshape(self.n, -1)
        G.setflags(write=False)
        object.__setattr__(self, "G", G)
        Q = np.array(self.Q, dtype=float).reshape(G.shape[1], G.shape[1])
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12):
            raise ConfigurationError("process noise Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12 * max(1.0, np.trace(Q)):
            raise ConfigurationError("process noise Q must be positive semidefinite")

    @property
    def q(self) -> int:
        return self.G.shape[1]

    def f(self, t: float, x) -> np.ndarray:
        return self.drift_kernel(float(t), np.asarray(x, dtype=float).reshape(self.n), self.params)

    def jacobian(self, t: float, x) -> np.ndarray:
        return self.jacobian_kernel(float(t), np.asarray(x, dtype=float).reshape(self.n), self.params)

    def diffusion(self, t: float = 0.0) -> np.ndarray:
        return self.G

    def process_noise(self, t: float = 0.0) -> np.ndarray:
        return self.Q

    def noise_intensity(self) -> np.ndarray:
        """``G Q G^T``, the covariance injected per unit time."""
        GQG = self.G @ self.Q @ self.G.T
        return 0.5 * (GQG + GQG.T)

    def with_diffusion(self, G) -> "DriftModel":
        G = np.asarray(G, dtype=float).reshape(self.n, -1)
        Q = self.Q if G.shape[1] == self.q else np.eye(G.shape[1])
        return replace(self, G=G, Q=Q)


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Discrete measurement ``z = h(x) + v`` with ``v ~ N(0, R)``."""

    m: int
    h: Callable[[np.ndarray], np.ndarray]
    H: Callable[[np.ndarray], np.ndarray]
    R: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(self.m, self.m)
        R.setflags(write=False)
        object.__setattr__(self, "R", R)
        if self.m and not np.allclose(R, R.T, rtol=0.0, atol=1e-12):
            raise ConfigurationError("measurement noise R must be symmetric")
        if self.m and np.linalg.eigvalsh(R).min() <= 0.0:
            raise ConfigurationError("measurement noise R must be positive definite")

    def predict(self, x) -> np.ndarray:
        return np.asarray(self.h(np.asarray(x, dtype=float)), dtype=float).reshape(self.m)

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.H(x), dtype=float).reshape(self.m, x.size)

    def with_noise(self, R) -> "MeasurementModel":
        return replace(self, R=np.asarray(R, dtype=float))


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything needed to reproduce one experiment family."""

    drift: DriftModel
    measurement: MeasurementModel
    x0: np.ndarray
    P0: np.ndarray
    t_end: float
    delta_grid: tuple
    mc_runs: int = 10
    seed: int = 0
    label: str = "scenario"
    sigma: float | None = None
    filters: tuple = ("CD_EKF", "CD_UKF", "CD_CKF", "CD_GBN_EKF")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.drift.n
        object.__setattr__(self, "x0", _frozen(self.x0).reshape(n))
        P0 = np.array(self.P0, dtype=float).reshape(n, n)
        P0.setflags(write=False)
        object.__setattr__(self, "P0", P0)
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in self.delta_grid))
        if self.t_end <= 0.0:
            raise ConfigurationError("t_end must be positive")
        for d in self.delta_grid:
            if d <= 0.0:
                raise ConfigurationError(f"sampling period {d} must be positive")
            if d > self.t_end + 1e-9:
                raise ConfigurationError(f"sampling period {d} exceeds t_end={self.t_end}")
        if self.mc_runs < 1:
            raise ConfigurationError("mc_runs must be at least 1")
        if not np.allclose(P0, P0.T, rtol=0.0, atol=1e-12):
            raise ConfigurationError("P0 must be symmetric")
        if np.linalg.eigvalsh(P0).min() <= 0.0:
            raise ConfigurationError("P0 must be positive definite")
        if self.measurement.m and self.measurement.jacobian(self.x0).shape[1] != n:
            raise ConfigurationError("measurement model does not match the state dimension")

    def n_samples(self, delta: float) -> int:
        """Number of sampling instants ``k delta <= t_end``, ``k >= 1``."""
        return int(np.floor(self.t_end / delta + 1e-9))


# --------------------------------------------------------------------------
# Factories
# --------------------------------------------------------------------------


def dahlquist(mu: float, j: int) -> DriftModel:
    """Scalar ``dx = mu x^j dt + dw`` with unit-intensity noise."""
    if j not in (1, 2, 3):
        raise ConfigurationError(f"Dahlquist exponent must be 1, 2 or 3, got {j!r}")
    if not np.isfinite(mu):
        raise ConfigurationError("mu must be finite")
    return DriftModel(
        n=1,
        drift_kernel=dahlquist_drift,
        jacobian_kernel=dahlquist_jacobian,
        params=[mu, j],
        G=[[1.0]],
        Q=[[1.0]],
        name=f"dahlquist(mu={mu:g}, j={j})",
    )


def vanderpol(mu: float) -> DriftModel:
    """Van der Pol oscillator with noise entering the velocity only."""
    if not (np.isfinite(mu) and mu > 0):
        raise ConfigurationError("Van der Pol mu must be positive")
    return DriftModel(
        n=2,
        drift_kernel=vanderpol_drift,
        jacobian_kernel=vanderpol_jacobian,
        params=[mu],
        G=[[0.0, 0.0], [0.0, 1.0]],
        Q=np.eye(2),
        name=f"vanderpol(mu={mu:g})",
    )


def linear(A, G=None, Q=None) -> DriftModel:
    """Linear drift ``f(t, x) = A x``; zero diffusion unless ``G`` is given."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    G = np.zeros((n, n)) if G is None else G
    G = np.asarray(G, dtype=float).reshape(n, -1)
    Q = np.eye(G.shape[1]) if Q is None else Q
    return DriftModel(n, linear_drift, linear_jacobian, A.ravel(), G, Q, name="linear")


def linear_measurement(M, R, name: str = "linear") -> MeasurementModel:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    M.setflags(write=False)
    return MeasurementModel(
        m=M.shape[0],
        h=lambda x: M @ x,
        H=lambda x: M,
        R=R,
        name=name,
    )


def scalar_identity_measurement(r: float = 0.04) -> MeasurementModel:
    """``z = x_1 + v`` on a scalar state."""
    return linear_measurement([[1.0]], [[r]], name="identity")


def sum_measurement(r: float = 0.04) -> MeasurementModel:
    """``z = x_1 + x_2 + v``."""
    return linear_measurement([[1.0, 1.0]], [[r]], name="sum")


def ill_conditioned_measurement(sigma: float, r: float = 0.04) -> MeasurementModel:
    """``z = [[1, 1], [1, 1 + sigma]] x + v`` with ``v ~ N(0, r I)``."""
    if not (np.isfinite(sigma) and sigma > 0):
        raise ConfigurationError(f"sigma must be positive, got {sigma!r}")
    return linear_measurement(
        [[1.0, 1.0], [1.0, 1.0 + sigma]], r * np.eye(2), name=f"ill(sigma={sigma:g})"
    )


def no_measurement(n: int) -> MeasurementModel:
    return MeasurementModel(
        m=0,
        h=lambda x: np.zeros(0),
        H=lambda x: np.zeros((0, n)),
        R=np.zeros((0, 0)),
        name="none",
    )


def finite_difference_jacobian(fun: Callable, x: Sequence[float], rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at ``x`` with step ``rel_step (1 + |x|)``."""
    x = np.asarray(x, dtype=float)
    step = rel_step * (1.0 + np.linalg.norm(x))
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2.0 * step))
    return np.stack(cols, axis=-1)
