"""Reference trajectories and measurements for Monte-Carlo runs.

Every random draw comes from a Philox counter-based generator keyed by
``(seed, run_index, channel)``, so a run is reproduced exactly from those
three integers and all filters under comparison see the same noise.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigurationError, SimulationError
from .models import Scenario


class Channel(enum.IntEnum):
    PROCESS = 0
    MEASUREMENT = 1
    INIT = 2


def noise_stream(seed: int, run_index: int, channel: Channel) -> np.random.Generator:
    """Independent standard-normal source for one (seed, run, channel) triple."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(run_index), int(channel)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class TruthRun:
    times: np.ndarray
    states: np.ndarray
    measurements: np.ndarray
    run_index: int
    seed: int
    delta: float
    x_init: np.ndarray

    def __len__(self) -> int:
        return self.times.size


@njit
def _implicit_step(drift, djac, params, x, t_new, h, dw, theta, tol, max_iter):
    n = x.shape[0]
    explicit = x + dw
    if theta < 1.0:
        explicit += (1.0 - theta) * h * drift(t_new - h, x, params)
    y = explicit.copy()
    eye = np.eye(n)
    for _ in range(max_iter):
        g = y - explicit - theta * h * drift(t_new, y, params)
        A = eye - theta * h * djac(t_new, y, params)
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(g)):
            return y, False
        if abs(np.linalg.det(A)) < 1e-300:
            return y, False
        step = np.linalg.solve(A, g)
        y = y - step
        if np.sqrt(np.sum(step * step)) <= tol * (1.0 + np.sqrt(np.sum(y * y))):
            return y, True
    return y, False


@njit
def _drift_implicit_em(drift, djac, params, x0, gain, xi, h, steps_per_sample, n_samples, theta, tol, max_iter):
    """Drift-implicit theta Euler-Maruyama; returns states at the sample instants.

    When Newton fails on a step, the step is retried as 2, 4, ... 1024 equal
    substeps that share the step's Brownian increment evenly. Returns the
    index of the first unrecoverable step, or -1.
    """
    n = x0.shape[0]
    out = np.empty((n_samples, n))
    x = x0.copy()
    sqh = np.sqrt(h)
    idx = 0
    for k in range(n_samples):
        for s in range(steps_per_sample):
            dw = (gain @ xi[idx]) * sqh
            t = (idx + 1) * h
            y, ok = _implicit_step(drift, djac, params, x, t, h, dw, theta, tol, max_iter)
            r = 1
            while not ok and r < 1024:
                r *= 2
                y = x.copy()
                ok = True
                for q in range(r):
                    tq = idx * h + (q + 1) * h / r
                    y, ok = _implicit_step(drift, djac, params, y, tq, h / r, dw / r, theta, tol, max_iter)
                    if not ok:
                        break
            if not ok or not np.all(np.isfinite(y)):
                return out, idx
            x = y
            idx += 1
        out[k] = x
    return out, -1


def _sqrt_psd(M: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    return U * np.sqrt(np.clip(w, 0.0, None))


def simulate_truth(
    scenario: Scenario,
    delta: float,
    run_index: int,
    max_step: float = 1e-4,
    min_substeps: int = 1000,
    theta: float = 0.5,
    newton_tol: float = 1e-13,
) -> TruthRun:
    """Reference trajectory sampled every ``delta`` plus noisy measurements.

    The SDE is stepped with ``h = min(max_step, delta / min_substeps)``,
    shrunk so it divides ``delta``, by the drift-implicit theta scheme::

        x+ = x + h ((1 - theta) f(x) + theta f(x+)) + G dW

    ``theta = 1/2`` (the default) is A-stable and reproduces the exact
    stationary variance of linear drifts at any ``h``; ``theta = 1`` is
    backward Euler, which damps it. The initial state is drawn from
    ``N(x0, P0)``.
    """
    if not 0.5 <= theta <= 1.0:
        raise ConfigurationError("theta must lie in [0.5, 1]")
    if not 0.0 < delta <= scenario.t_end + 1e-9:
        raise ConfigurationError(f"delta={delta} is outside (0, t_end]")
    K = scenario.n_samples(delta)
    drift = scenario.drift
    meas = scenario.measurement
    n = drift.n

    sps = int(np.ceil(delta / min(max_step, delta / min_substeps) - 1e-9))
    h = delta / sps

    rng_init = noise_stream(scenario.seed, run_index, Channel.INIT)
    x_init = scenario.x0 + _sqrt_psd(scenario.P0) @ rng_init.standard_normal(n)

    gain = np.ascontiguousarray(drift.G @ _sqrt_psd(drift.Q))
    rng_proc = noise_stream(scenario.seed, run_index, Channel.PROCESS)
    xi = rng_proc.standard_normal((K * sps, gain.shape[1]))

    states, fail = _drift_implicit_em(
        drift.drift_kernel, drift.jacobian_kernel, np.array(drift.params, dtype=float),
        np.array(x_init, dtype=float), gain, xi, h, sps, K, float(theta), newton_tol, 50,
    )
    if fail >= 0:
        raise SimulationError(f"reference trajectory diverged at step {fail} (t={(fail + 1) * h:.6g})")

    rng_meas = noise_stream(scenario.seed, run_index, Channel.MEASUREMENT)
    m = meas.m
    v = rng_meas.standard_normal((K, m)) @ _sqrt_psd(meas.R).T if m else np.zeros((K, 0))
    z = np.array([meas.predict(x) for x in states]).reshape(K, m) + v

    times = delta * np.arange(1, K + 1)
    return TruthRun(times, states, z, run_index, scenario.seed, float(delta), x_init)


def truth_to_csv(truth: TruthRun, path) -> None:
    """Write ``t, x1..xn, z1..zm`` rows for inspection."""
    n = truth.states.shape[1]
    m = truth.measurements.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(m)])
        for t, x, z in zip(truth.times, truth.states, truth.measurements):
            w.writerow([repr(float(t))] + [repr(float(a)) for a in x] + [repr(float(a)) for a in z])
