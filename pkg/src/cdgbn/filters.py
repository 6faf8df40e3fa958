"""Continuous-discrete filters: CD-EKF, CD-UKF, CD-CKF and CD-GBN-EKF.

All four alternate a prediction over each sampling interval with a
measurement update at the sampling instant.

* CD-EKF and CD-GBN-EKF predict with the linearized moment equations.
* CD-UKF and CD-CKF predict with the sigma-point moment equations (points
  regenerated from the running mean and covariance) and update with
  point-based innovation statistics.
* CD-EKF updates in covariance form through a Cholesky solve against the
  innovation covariance; CD-GBN-EKF updates by arc reversal and evidence
  absorption, with no inversion or solve.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import gbn
from .errors import ConfigurationError, ContradictionError, DomainError, UpdateError
from .integrate import (
    DEFAULT_CONFIG,
    GaussianBelief,
    IntegrationOutcome,
    IntegratorConfig,
    propagate_moments,
    propagate_point_bundle,
    propagate_sigma_moments,
    psd_cholesky,
)
from .models import DriftModel, MeasurementModel, Scenario


class FilterKind(str, enum.Enum):
    CD_EKF = "CD_EKF"
    CD_UKF = "CD_UKF"
    CD_CKF = "CD_CKF"
    CD_GBN_EKF = "CD_GBN_EKF"

    @classmethod
    def parse(cls, name) -> "FilterKind":
        """Accept ``CD_EKF``, ``cd-ekf``, ``ekf``, ``gbn-ekf`` and so on."""
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_")
        if not key.startswith("CD_"):
            key = "CD_" + key
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"unknown filter {name!r} (choose from {choices})") from None

    @property
    def is_sigma_point(self) -> bool:
        return self in (FilterKind.CD_UKF, FilterKind.CD_CKF)


class Failure(str, enum.Enum):
    BUDGET_EXHAUSTED = "budget_exhausted"
    NONFINITE = "nonfinite"
    UPDATE_ERROR = "update_error"


@dataclass(eq=False)
class FilterRun:
    """Posterior estimates at ``t_1 .. t_K``, truncated at the first failure.

    ``failed_at`` is the 1-based sampling index whose prediction or update
    failed; estimates stop at ``failed_at - 1``.
    """

    kind: FilterKind
    delta: float
    run_index: int
    means: np.ndarray
    covs: np.ndarray
    failed_at: int | None = None
    reason: Failure | None = None
    message: str = ""
    rhs_evals: int = 0
    info: dict = field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return self.failed_at is None

    @property
    def estimates(self) -> list:
        return [GaussianBelief(m, P) for m, P in zip(self.means, self.covs)]

    def __len__(self) -> int:
        return self.means.shape[0]


# --------------------------------------------------------------------------
# Measurement updates
# --------------------------------------------------------------------------


def _sym(P):
    return 0.5 * (P + P.T)


def _gain_update(mean, P, innov, Pxz, S):
    try:
        c = cho_factor(S, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise UpdateError(f"innovation covariance is not positive definite: {exc}") from None
    Kt = cho_solve(c, Pxz.T)
    return GaussianBelief(mean + Kt.T @ innov, _sym(P - Kt.T @ S @ Kt))


def ekf_update(pred: GaussianBelief, meas: MeasurementModel, z) -> GaussianBelief:
    """Covariance-form EKF update ``K = P H^T S^-1`` with ``S`` Cholesky-factored."""
    if meas.m == 0:
        return pred
    z = np.asarray(z, dtype=float).reshape(meas.m)
    H = meas.jacobian(pred.mean)
    PHt = pred.cov @ H.T
    S = _sym(H @ PHt + meas.R)
    try:
        c = cho_factor(S, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise UpdateError(f"innovation covariance is not positive definite: {exc}") from None
    Kt = cho_solve(c, PHt.T)
    mean = pred.mean + Kt.T @ (z - meas.predict(pred.mean))
    return GaussianBelief(mean, _sym(pred.cov - Kt.T @ (H @ pred.cov)))


def gbn_ekf_update(pred: GaussianBelief, meas: MeasurementModel, z, order=None) -> GaussianBelief:
    """EKF update carried out on the Gaussian-network form of the prior.

    The prior is decomposed into arcs and conditional variances, the
    measurements linearized at the prior mean are appended as child nodes,
    the observed values are entered as evidence, and the posterior
    covariance is rebuilt from the remaining network.
    """
    if meas.m == 0:
        return pred
    z = np.asarray(z, dtype=float).reshape(meas.m)
    H = meas.jacobian(pred.mean)
    try:
        prior = gbn.decompose(pred.mean, pred.cov)
        aug = gbn.augment(prior, H, meas.predict(pred.mean), meas.R)
        post = gbn.enter_evidence(aug, z, order=order)
    except ContradictionError as exc:
        raise UpdateError(str(exc)) from exc
    except DomainError as exc:
        raise UpdateError(f"prior cannot be converted to network form: {exc}") from exc
    mean, cov = gbn.reconstruct(post)
    return GaussianBelief(mean, cov)


# --------------------------------------------------------------------------
# Point rules
# --------------------------------------------------------------------------


def default_kappa(n: int) -> float:
    return 3.0 - n


def _check_kappa(n, kappa):
    kappa = default_kappa(n) if kappa is None else float(kappa)
    if not n + kappa > 0:
        raise ConfigurationError(f"n + kappa must be positive (n={n}, kappa={kappa})")
    return kappa


def ukf_unit_points(n: int, kappa=None):
    """Unscented offsets for unit covariance (n x (2n+1)) and weights."""
    kappa = _check_kappa(n, kappa)
    s = np.sqrt(n + kappa)
    U = np.hstack([np.zeros((n, 1)), s * np.eye(n), -s * np.eye(n)])
    w = np.full(2 * n + 1, 0.5 / (n + kappa))
    w[0] = kappa / (n + kappa)
    return U, w


def ckf_unit_points(n: int):
    """Third-degree spherical-radial cubature offsets (n x 2n) and weights."""
    s = np.sqrt(n)
    U = np.hstack([s * np.eye(n), -s * np.eye(n)])
    return U, np.full(2 * n, 0.5 / n)


def _points(belief: GaussianBelief, U):
    L = psd_cholesky(_sym(belief.cov))
    return belief.mean[:, None] + L @ U


def ukf_sigma_points(belief: GaussianBelief, kappa=None):
    """Returns ``(points, weights)``, points as rows (2n+1, n)."""
    U, w = ukf_unit_points(belief.n, kappa)
    return _points(belief, U).T, w


def ckf_cubature_points(belief: GaussianBelief):
    """Returns ``(points, weights)``, points as rows (2n, n)."""
    U, w = ckf_unit_points(belief.n)
    return _points(belief, U).T, w


def unit_points(kind: FilterKind, n: int, kappa=None):
    kind = FilterKind.parse(kind)
    if kind is FilterKind.CD_UKF:
        return ukf_unit_points(n, kappa)
    if kind is FilterKind.CD_CKF:
        return ckf_unit_points(n)
    raise ConfigurationError(f"{kind.value} has no point rule")


def point_moments(points, weights):
    """Weighted mean and covariance of row points."""
    X = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    m = w @ X
    D = X - m
    return m, _sym((D * w[:, None]).T @ D)


# --------------------------------------------------------------------------
# Sigma-point prediction and update
# --------------------------------------------------------------------------


def sigma_point_predict(
    drift: DriftModel,
    belief: GaussianBelief,
    rule: FilterKind,
    t0: float,
    t1: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    mode: str = "mde",
    kappa=None,
):
    """Predict the belief at ``t1`` with a sigma-point or cubature rule.

    ``mode="mde"`` integrates the point-averaged moment equations, in which
    the points follow the covariance as it evolves. ``mode="bundle"``
    instead pushes the initial point set through the drift, rebuilds the
    moments at ``t1`` and adds ``(t1 - t0) G Q G^T``. The bundle variant
    cannot represent dissipation of the injected noise, so under stiff
    contraction it overstates the covariance.
    """
    U, w = unit_points(rule, belief.n, kappa)
    if mode == "mde":
        return propagate_sigma_moments(drift, belief, U, w, t0, t1, cfg)
    if mode == "bundle":
        pts = _points(belief, U).T
        moved, out = propagate_point_bundle(drift, pts, t0, t1, cfg)
        m, P = point_moments(np.array(moved), w)
        P = P + (t1 - t0) * drift.noise_intensity()
        return GaussianBelief(m, P), out
    raise ConfigurationError(f"unknown sigma-point prediction mode {mode!r}")


def sigma_point_update(pred: GaussianBelief, meas: MeasurementModel, z, rule: FilterKind, kappa=None) -> GaussianBelief:
    """Update from the innovation moments of the rule's points."""
    if meas.m == 0:
        return pred
    z = np.asarray(z, dtype=float).reshape(meas.m)
    U, w = unit_points(rule, pred.n, kappa)
    X = _points(pred, U).T
    Z = np.array([meas.predict(x) for x in X])
    zhat = w @ Z
    dX = X - pred.mean
    dZ = Z - zhat
    Pzz = _sym((dZ * w[:, None]).T @ dZ + meas.R)
    Pxz = (dX * w[:, None]).T @ dZ
    return _gain_update(pred.mean, pred.cov, z - zhat, Pxz, Pzz)


# --------------------------------------------------------------------------
# Full filter
# --------------------------------------------------------------------------


def _finite(b: GaussianBelief) -> bool:
    return bool(np.all(np.isfinite(b.mean)) and np.all(np.isfinite(b.cov)))


def run_filter(
    scenario: Scenario,
    delta: float,
    kind,
    truth,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    kappa=None,
    sigma_mode: str = "mde",
) -> FilterRun:
    """Filter one truth run; failures are recorded rather than raised."""
    kind = FilterKind.parse(kind)
    drift, meas = scenario.drift, scenario.measurement
    if kind is FilterKind.CD_UKF:
        _check_kappa(drift.n, kappa)
    K = len(truth)
    n = drift.n
    means = np.empty((K, n))
    covs = np.empty((K, n, n))
    belief = GaussianBelief(scenario.x0, scenario.P0)
    t0 = 0.0
    nfev = 0
    failed_at = reason = None
    message = ""
    for k in range(K):
        t1 = float(truth.times[k])
        if kind.is_sigma_point:
            pred, out = sigma_point_predict(drift, belief, kind, t0, t1, cfg, mode=sigma_mode, kappa=kappa)
        else:
            pred, out = propagate_moments(drift, belief, t0, t1, cfg)
        nfev += out.rhs_evals
        if not out.ok or not _finite(pred):
            failed_at = k + 1
            reason = Failure.BUDGET_EXHAUSTED if out.status.value == "budget_exhausted" else Failure.NONFINITE
            message = f"prediction over [{t0:g}, {t1:g}] ended with {out.status.value} after {out.rhs_evals} evaluations"
            break
        try:
            if kind is FilterKind.CD_GBN_EKF:
                post = gbn_ekf_update(pred, meas, truth.measurements[k])
            elif kind is FilterKind.CD_EKF:
                post = ekf_update(pred, meas, truth.measurements[k])
            else:
                post = sigma_point_update(pred, meas, truth.measurements[k], kind, kappa)
        except UpdateError as exc:
            failed_at, reason, message = k + 1, Failure.UPDATE_ERROR, str(exc)
            break
        if not _finite(post):
            failed_at, reason, message = k + 1, Failure.NONFINITE, f"non-finite posterior at t={t1:g}"
            break
        means[k] = post.mean
        covs[k] = post.cov
        belief = post
        t0 = t1
    stop = K if failed_at is None else failed_at - 1
    return FilterRun(
        kind, float(delta), int(truth.run_index), means[:stop].copy(), covs[:stop].copy(),
        failed_at, reason, message, nfev,
    )
