import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdgbn import gbn
from cdgbn.errors import ContradictionError, DomainError


def random_spd(rng, n, cond=1e3):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.logspace(0, -np.log10(cond), n) if n > 1 else np.array([1.0])
    return (Q * ev) @ Q.T


def kalman(mu, P, H, R, z):
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    return mu + K @ (z - H @ mu), P - K @ H @ P


def joint_in_label_order(g, labels):
    mu, S = gbn.reconstruct(g)
    idx = [g.position(lbl) for lbl in labels]
    return mu[idx], S[np.ix_(idx, idx)]


# --------------------------------------------------------------------------
# Conversion
# --------------------------------------------------------------------------


def test_decompose_two_by_two():
    g = gbn.decompose([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(g.B, [[0.0, 0.5], [0.0, 0.0]])
    np.testing.assert_allclose(g.V, [1.0, 0.75])


def test_decompose_chain():
    # x2 = 2 x1 + e, var(x1) = 1, var(e) = 1
    g = gbn.decompose([0.0, 0.0], [[1.0, 2.0], [2.0, 5.0]])
    np.testing.assert_allclose(g.B[0, 1], 2.0)
    np.testing.assert_allclose(g.V, [1.0, 1.0])


def test_decompose_diagonal_has_no_arcs():
    g = gbn.decompose([1.0, 2.0, 3.0], np.diag([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(g.B, np.zeros((3, 3)))
    np.testing.assert_array_equal(g.V, [1.0, 2.0, 3.0])


def test_reconstruct_from_arcs():
    g = gbn.GbnForm([0.0, 0.0], [[0.0, 2.0], [0.0, 0.0]], [1.0, 1.0])
    _, S = gbn.reconstruct(g)
    np.testing.assert_allclose(S, [[1.0, 2.0], [2.0, 5.0]])


def test_singular_covariance_gets_zero_variance():
    # x2 = x1 exactly
    g = gbn.decompose([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
    np.testing.assert_allclose(g.V, [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(g.B[0, 1], 1.0)
    _, S = gbn.reconstruct(g)
    np.testing.assert_allclose(S, np.ones((2, 2)))


def test_roundoff_negative_pivot_is_zero_variance():
    # Predicted covariance from a stiff run: smallest eigenvalue -1e-11 against
    # a trace of 148, but the second pivot comes out at -4e-5.
    S = np.array([[5.0938098774902163e-05, 8.6901791712374360e-02], [8.6901791712374360e-02, 1.4825679797172643e02]])
    g = gbn.decompose([0.0, 0.0], S)
    assert g.V[1] == 0.0
    _, S2 = gbn.reconstruct(g)
    np.testing.assert_allclose(S2, S, rtol=1e-6)


@pytest.mark.parametrize(
    "Sigma",
    [
        [[1.0, 2.0], [2.0, 1.0]],
        [[-1.0]],
        [[1.0, 0.0], [0.5, 1.0]],
        [[1.0, np.nan], [np.nan, 1.0]],
    ],
)
def test_decompose_rejects_invalid(Sigma):
    with pytest.raises(DomainError):
        gbn.decompose(np.zeros(len(Sigma)), Sigma)


def test_form_validation():
    with pytest.raises(DomainError):
        gbn.GbnForm([0.0, 0.0], [[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0])
    with pytest.raises(DomainError):
        gbn.GbnForm([0.0, 0.0], np.zeros((2, 2)), [1.0, -1.0])


@given(st.integers(1, 8), st.floats(0, 12), st.integers(0, 2**31 - 1))
def test_round_trip(n, log_cond, seed):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, n, 10**log_cond) * 10 ** rng.uniform(-3, 3)
    mu = rng.standard_normal(n)
    g = gbn.decompose(mu, S)
    m2, S2 = gbn.reconstruct(g)
    np.testing.assert_array_equal(m2, mu)
    assert np.linalg.norm(S2 - S) <= 1e-8 * np.linalg.norm(S)


# --------------------------------------------------------------------------
# Arc reversal
# --------------------------------------------------------------------------


def test_reverse_single_arc():
    g = gbn.GbnForm([0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]], [1.0, 1.0], nodes=("a", "b"))
    r = gbn.reverse_arc(g, "a", "b")
    assert r.nodes == ("b", "a")
    np.testing.assert_allclose(r.V, [2.0, 0.5])
    np.testing.assert_allclose(r.B[0, 1], 0.5)
    _, S = joint_in_label_order(r, ("a", "b"))
    np.testing.assert_allclose(S, [[1.0, 1.0], [1.0, 2.0]])


def test_reverse_needs_order():
    g = gbn.decompose([0.0, 0.0], np.eye(2))
    with pytest.raises(DomainError):
        gbn.reverse_arc(g, 1, 0)


def test_reverse_refuses_cycle():
    # a -> b -> c and a -> c: reversing a -> c would close a -> b -> c -> a
    B = np.array([[0.0, 1.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    g = gbn.GbnForm(np.zeros(3), B, np.ones(3), nodes=("a", "b", "c"))
    with pytest.raises(DomainError):
        gbn.reverse_arc(g, "a", "c")


def test_reverse_non_adjacent_reorders_free_nodes():
    B = np.array([[0.0, 0.0, 0.7], [0.0, 0.0, 0.3], [0.0, 0.0, 0.0]])
    g = gbn.GbnForm([1.0, 2.0, 3.0], B, [1.0, 2.0, 0.5], nodes=("a", "b", "c"))
    r = gbn.reverse_arc(g, "a", "c")
    assert r.nodes.index("c") < r.nodes.index("a")
    m0, S0 = joint_in_label_order(g, "abc")
    m1, S1 = joint_in_label_order(r, "abc")
    np.testing.assert_allclose(m1, m0)
    np.testing.assert_allclose(S1, S0, atol=1e-14)


@given(st.integers(2, 6), st.data())
def test_arc_reversal_preserves_distribution(d, data):
    seed = data.draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    S = random_spd(rng, d, 10 ** rng.uniform(0, 4))
    g = gbn.decompose(rng.standard_normal(d), S)
    p = data.draw(st.integers(0, d - 2))
    r = gbn.reverse_arc(g, g.nodes[p], g.nodes[p + 1])
    assert np.all(r.V >= 0.0)
    assert np.all(np.tril(r.B) == 0.0)
    m0, S0 = joint_in_label_order(g, g.nodes)
    m1, S1 = joint_in_label_order(r, g.nodes)
    np.testing.assert_allclose(m1, m0)
    np.testing.assert_allclose(S1, S0, atol=1e-10 * np.abs(S0).max())


# --------------------------------------------------------------------------
# Augmentation and evidence
# --------------------------------------------------------------------------


def test_augmented_joint_cross_block():
    sigma = 1e-4
    P = np.array([[0.3, 0.1], [0.1, 0.2]])
    H = np.array([[1.0, 1.0], [1.0, 1.0 + sigma]])
    R = 0.04 * np.eye(2)
    aug = gbn.augment(gbn.decompose([0.0, 0.0], P), H, [0.0, 0.0], R)
    _, S = gbn.reconstruct(aug.gbn)
    np.testing.assert_allclose(S[:2, 2:], P @ H.T, rtol=1e-12)
    np.testing.assert_allclose(S[2:, 2:], H @ P @ H.T + R, rtol=1e-12)


def test_augment_with_correlated_noise():
    P = np.array([[0.3, 0.1], [0.1, 0.2]])
    H = np.array([[1.0, 0.0], [0.5, 2.0]])
    R = np.array([[0.05, 0.02], [0.02, 0.04]])
    aug = gbn.augment(gbn.decompose([0.0, 0.0], P), H, [0.0, 0.0], R)
    _, S = gbn.reconstruct(aug.gbn)
    np.testing.assert_allclose(S[:2, 2:], P @ H.T, rtol=1e-12)
    np.testing.assert_allclose(S[2:, 2:], H @ P @ H.T + R, rtol=1e-12)


def test_scalar_evidence():
    aug = gbn.augment(gbn.decompose([0.0], [[1.0]]), [[1.0]], [0.0], [[1.0]])
    post = gbn.enter_evidence(aug, [2.0])
    mu, S = gbn.reconstruct(post)
    np.testing.assert_allclose(mu, [1.0])
    np.testing.assert_allclose(S, [[0.5]])
    assert post.nodes == (0,)


@pytest.mark.parametrize("correlated", [False, True])
def test_evidence_matches_kalman(correlated):
    rng = np.random.default_rng(4)
    for _ in range(50):
        n, m = rng.integers(1, 5), rng.integers(1, 4)
        P = random_spd(rng, n, 100)
        H = rng.standard_normal((m, n))
        R = random_spd(rng, m, 10) if correlated else np.diag(rng.uniform(0.1, 1.0, m))
        mu = rng.standard_normal(n)
        z = rng.standard_normal(m)
        aug = gbn.augment(gbn.decompose(mu, P), H, H @ mu, R)
        m1, S1 = gbn.reconstruct(gbn.enter_evidence(aug, z))
        m0, S0 = kalman(mu, P, H, R, z)
        np.testing.assert_allclose(m1, m0, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(S1, S0, rtol=1e-9, atol=1e-12)


@given(st.integers(1, 4), st.integers(2, 3), st.integers(0, 2**31 - 1))
def test_evidence_order_invariance(n, m, seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, n, 100)
    H = rng.standard_normal((m, n))
    R = np.diag(rng.uniform(0.1, 1.0, m))
    mu = rng.standard_normal(n)
    z = rng.standard_normal(m)
    aug = gbn.augment(gbn.decompose(mu, P), H, H @ mu, R)
    ref = gbn.reconstruct(gbn.enter_evidence(aug, z))
    for order in itertools.permutations(range(m)):
        got = gbn.reconstruct(gbn.enter_evidence(aug, z, order=order))
        np.testing.assert_allclose(got[0], ref[0], rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(got[1], ref[1], rtol=1e-9, atol=1e-12)


def test_zero_variance_evidence():
    # z = x exactly, prior mean 0: consistent evidence collapses the state
    aug = gbn.augment(gbn.decompose([0.0], [[0.0]]), [[1.0]], [0.0], [[0.0]])
    post = gbn.enter_evidence(aug, [0.0])
    assert post.mu[0] == 0.0
    with pytest.raises(ContradictionError):
        gbn.enter_evidence(aug, [1.0])


def test_evidence_argument_checks():
    aug = gbn.augment(gbn.decompose([0.0], [[1.0]]), [[1.0]], [0.0], [[1.0]])
    with pytest.raises(DomainError):
        gbn.enter_evidence(aug, [1.0, 2.0])
    with pytest.raises(DomainError):
        gbn.enter_evidence(aug, [np.inf])
    with pytest.raises(DomainError):
        gbn.enter_evidence(aug, [1.0], order=[1])


def test_format_gbn():
    text = gbn.format_gbn(gbn.decompose([0.0, 1.0], [[1.0, 0.5], [0.5, 1.0]]))
    lines = text.splitlines()
    assert len(lines) == 3
    assert "mu" in lines[0] and "V" in lines[0]
    assert "0.75" in lines[2]
