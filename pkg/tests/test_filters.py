import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdgbn import filters as F
from cdgbn import models
from cdgbn.errors import ConfigurationError, UpdateError
from cdgbn.integrate import GaussianBelief, propagate_moments
from cdgbn.sim import simulate_truth


def belief(mean, cov):
    return GaussianBelief(mean, cov)


def random_belief(rng, n):
    A = rng.standard_normal((n, n))
    return GaussianBelief(rng.standard_normal(n), A @ A.T + 0.1 * np.eye(n))


def dahlquist_scenario(j, grid=(0.5,), t_end=2.0, r=0.04):
    return models.Scenario(
        models.dahlquist(-1e4, j), models.scalar_identity_measurement(r), [1.0], [[1e-2]], t_end, grid
    )


# --------------------------------------------------------------------------
# Updates
# --------------------------------------------------------------------------


@pytest.mark.parametrize("update", [F.ekf_update, F.gbn_ekf_update])
def test_scalar_update(update):
    post = update(belief([0.0], [[1.0]]), models.scalar_identity_measurement(1.0), [2.0])
    np.testing.assert_allclose(post.mean, [1.0], rtol=1e-12)
    np.testing.assert_allclose(post.cov, [[0.5]], rtol=1e-12)


@pytest.mark.parametrize("update", [F.ekf_update, F.gbn_ekf_update])
def test_uninformative_measurement(update):
    prior = belief([0.3], [[0.2]])
    post = update(prior, models.scalar_identity_measurement(1e16), [5.0])
    np.testing.assert_allclose(post.mean, prior.mean, atol=1e-6)
    np.testing.assert_allclose(post.cov, prior.cov, atol=1e-6)


@pytest.mark.parametrize("update", [F.ekf_update, F.gbn_ekf_update])
def test_zero_innovation_keeps_mean(update):
    prior = belief([0.3, -0.2], [[0.2, 0.05], [0.05, 0.1]])
    meas = models.sum_measurement()
    post = update(prior, meas, meas.predict(prior.mean))
    np.testing.assert_allclose(post.mean, prior.mean, rtol=0, atol=1e-15)


@pytest.mark.parametrize("update", [F.ekf_update, F.gbn_ekf_update, lambda b, m, z: F.sigma_point_update(b, m, z, "ukf")])
def test_no_measurement_is_identity(update):
    prior = belief([0.3, -0.2], np.eye(2))
    assert update(prior, models.no_measurement(2), np.zeros(0)) is prior


def test_gbn_matches_ekf_on_random_linear_updates():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n, m = rng.integers(1, 5), rng.integers(1, 4)
        prior = random_belief(rng, n)
        meas = models.linear_measurement(rng.standard_normal((m, n)), np.diag(rng.uniform(0.05, 1.0, m)))
        z = rng.standard_normal(m)
        a = F.ekf_update(prior, meas, z)
        b = F.gbn_ekf_update(prior, meas, z)
        np.testing.assert_allclose(b.mean, a.mean, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(b.cov, a.cov, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("sigma", [1e-6, 1e-8, 1e-10, 1e-12])
def test_gbn_update_stays_psd_under_ill_conditioning(sigma):
    meas = models.ill_conditioned_measurement(sigma)
    post = F.gbn_ekf_update(belief([0.0, 0.0], np.eye(2)), meas, [1.0, 1.0])
    assert post.min_eigenvalue() >= 0.0
    assert post.is_valid()


def test_ekf_update_error_on_indefinite_innovation():
    # An indefinite prior (as left behind by a bad earlier update) gives S < 0.
    meas = models.linear_measurement([[1.0, 0.0]], [[0.5]])
    prior = belief([0.0, 0.0], [[-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(UpdateError):
        F.ekf_update(prior, meas, [1.0])


def test_gbn_update_error_on_indefinite_prior():
    meas = models.linear_measurement([[1.0, 0.0]], [[0.5]])
    prior = belief([0.0, 0.0], [[-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(UpdateError):
        F.gbn_ekf_update(prior, meas, [1.0])


def test_sigma_point_update_is_exact_for_linear_measurement():
    rng = np.random.default_rng(5)
    prior = random_belief(rng, 2)
    meas = models.sum_measurement()
    a = F.ekf_update(prior, meas, [0.7])
    for rule in ("ukf", "ckf"):
        b = F.sigma_point_update(prior, meas, [0.7], rule)
        np.testing.assert_allclose(b.mean, a.mean, rtol=1e-10)
        np.testing.assert_allclose(b.cov, a.cov, rtol=1e-9, atol=1e-14)


# --------------------------------------------------------------------------
# Point rules
# --------------------------------------------------------------------------


def test_ukf_points_scalar():
    pts, w = F.ukf_sigma_points(belief([0.0], [[1.0]]), kappa=2.0)
    np.testing.assert_allclose(pts[:, 0], [0.0, np.sqrt(3.0), -np.sqrt(3.0)])
    np.testing.assert_allclose(w, [2 / 3, 1 / 6, 1 / 6])


def test_ckf_points_2d():
    pts, w = F.ckf_cubature_points(belief([0.0, 0.0], np.eye(2)))
    s = np.sqrt(2.0)
    np.testing.assert_allclose(pts, [[s, 0.0], [0.0, s], [-s, 0.0], [0.0, -s]])
    np.testing.assert_allclose(w, [0.25] * 4)


def test_default_kappa():
    _, w = F.ukf_sigma_points(belief([0.0, 0.0], np.eye(2)))
    np.testing.assert_allclose(w[0], 1.0 / 3.0)


@pytest.mark.parametrize("kappa", [-1.0, -3.0])
def test_kappa_must_keep_spread_positive(kappa):
    with pytest.raises(ConfigurationError):
        F.ukf_sigma_points(belief([0.0], [[1.0]]), kappa=kappa)


def test_ukf_with_zero_kappa_is_ckf_plus_center():
    b = belief([0.5, -1.0], [[2.0, 0.3], [0.3, 0.5]])
    up, uw = F.ukf_sigma_points(b, kappa=0.0)
    cp, cw = F.ckf_cubature_points(b)
    assert uw[0] == 0.0
    np.testing.assert_allclose(up[1:], cp)
    np.testing.assert_allclose(uw[1:], cw)


@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.sampled_from(["ukf", "ckf"]))
def test_point_sets_match_moments(n, seed, rule):
    rng = np.random.default_rng(seed)
    b = random_belief(rng, n)
    pts, w = F.ukf_sigma_points(b) if rule == "ukf" else F.ckf_cubature_points(b)
    m, P = F.point_moments(pts, w)
    np.testing.assert_allclose(m, b.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(P, b.cov, rtol=1e-12, atol=1e-12 * np.abs(b.cov).max())


def test_points_of_singular_covariance():
    b = belief([1.0, 2.0], [[1.0, 1.0], [1.0, 1.0]])
    pts, w = F.ckf_cubature_points(b)
    _, P = F.point_moments(pts, w)
    np.testing.assert_allclose(P, b.cov, atol=1e-14)


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------


@pytest.mark.parametrize("rule", ["ukf", "ckf"])
def test_sigma_prediction_linear_matches_ekf(rule):
    d = models.dahlquist(-1e4, 1)
    prior = belief([1.0], [[1e-2]])
    a, _ = propagate_moments(d, prior, 0.0, 0.2)
    b, out = F.sigma_point_predict(d, prior, rule, 0.0, 0.2)
    assert out.ok
    np.testing.assert_allclose(b.mean, a.mean, atol=1e-6)
    np.testing.assert_allclose(b.cov, a.cov, rtol=1e-6)


@pytest.mark.parametrize("mode", ["mde", "bundle"])
def test_zero_drift_zero_noise_prediction(mode):
    d = models.linear(np.zeros((2, 2)))
    prior = belief([1.0, -1.0], [[0.3, 0.1], [0.1, 0.2]])
    b, _ = F.sigma_point_predict(d, prior, "ckf", 0.0, 1.0, mode=mode)
    np.testing.assert_allclose(b.mean, prior.mean, atol=1e-14)
    np.testing.assert_allclose(b.cov, prior.cov, atol=1e-14)


@pytest.mark.parametrize("mode", ["mde", "bundle"])
def test_cubic_drift_mean_correction_sign(mode):
    # f = mu x^3 with mu < 0 has f'' = 6 mu x < 0 at x > 0, so the spread
    # pulls the sigma-point mean below the linearized one.
    d = models.dahlquist(-1.0, 3)
    prior = belief([1.0], [[0.1]])
    a, _ = propagate_moments(d.with_diffusion([[0.0]]), prior, 0.0, 0.1)
    b, _ = F.sigma_point_predict(d.with_diffusion([[0.0]]), prior, "ukf", 0.0, 0.1, mode=mode)
    assert b.mean[0] < a.mean[0]


def test_bundle_mode_adds_noise_over_interval():
    d = models.linear(np.zeros((1, 1)), [[1.0]], [[2.0]])
    b, _ = F.sigma_point_predict(d, belief([0.0], [[1.0]]), "ckf", 0.0, 0.5, mode="bundle")
    np.testing.assert_allclose(b.cov, [[2.0]])


def test_unknown_mode():
    with pytest.raises(ConfigurationError):
        F.sigma_point_predict(models.dahlquist(-1.0, 1), belief([1.0], [[1.0]]), "ukf", 0.0, 1.0, mode="x")


# --------------------------------------------------------------------------
# Full runs
# --------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["ekf", "CD-UKF", "cd_ckf", "GBN-EKF", "CD_GBN_EKF"])
def test_kind_parsing(name):
    assert isinstance(F.FilterKind.parse(name), F.FilterKind)


def test_kind_parsing_rejects_unknown():
    with pytest.raises(ConfigurationError):
        F.FilterKind.parse("pf")


def test_linear_case_all_filters_agree():
    sc = dahlquist_scenario(1, grid=(0.25,), t_end=1.0)
    tr = simulate_truth(sc, 0.25, 0)
    runs = {k: F.run_filter(sc, 0.25, k, tr) for k in F.FilterKind}
    ref = runs[F.FilterKind.CD_EKF]
    assert ref.completed and len(ref) == 4
    for k, r in runs.items():
        assert r.completed
        np.testing.assert_allclose(r.means, ref.means, rtol=1e-4, atol=1e-12)
        np.testing.assert_allclose(r.covs, ref.covs, rtol=1e-4)


def test_uninformative_run_equals_prediction():
    sc = dahlquist_scenario(1, grid=(0.5,), t_end=1.0, r=1e16)
    tr = simulate_truth(sc, 0.5, 0)
    run = F.run_filter(sc, 0.5, "ekf", tr)
    b = GaussianBelief(sc.x0, sc.P0)
    for k in range(2):
        b, _ = propagate_moments(sc.drift, b, 0.5 * k, 0.5 * (k + 1))
        np.testing.assert_allclose(run.means[k], b.mean, atol=1e-6)
        np.testing.assert_allclose(run.covs[k], b.cov, atol=1e-6)


def test_run_covariances_valid():
    sc = dahlquist_scenario(3, grid=(0.5,), t_end=2.0)
    tr = simulate_truth(sc, 0.5, 1)
    for k in F.FilterKind:
        r = F.run_filter(sc, 0.5, k, tr)
        for b in r.estimates:
            assert b.is_valid()


def test_budget_failure_is_recorded():
    from cdgbn.integrate import IntegratorConfig

    sc = dahlquist_scenario(1, grid=(0.5,), t_end=1.0)
    tr = simulate_truth(sc, 0.5, 0)
    r = F.run_filter(sc, 0.5, "ukf", tr, IntegratorConfig(max_rhs_evals=20))
    assert r.failed_at == 1
    assert r.reason is F.Failure.BUDGET_EXHAUSTED
    assert len(r) == 0 and r.means.shape == (0, 1)
    assert not r.completed
