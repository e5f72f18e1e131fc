import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_promp
from promp.basis import BasisConfig
from promp.errors import InputError, NumericalError
from promp.experiments import correlated_promp, generating_promp, synthetic_demos, GeneratorConfig
from promp.model import Demonstration, ProMP, demo_stats, weight_posteriors
from promp.training import (MLE, MLE_BLOCKDIAG, NIWPrior, TrainOptions, _Mode, blockdiag, e_step,
                            em_train, em_train_approx, least_squares_train, m_step)


def small_data(N=8, D=2, seed=0, noise=0.05, n_steps=20):
    p = random_promp(3, D, seed, noise=noise)
    return p, synthetic_demos(p, N, n_steps, seed)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- E-step -----------------------------------------------------------------

def test_empty_demo_posterior_is_prior():
    p = random_promp()
    post = e_step(p, Demonstration(np.zeros(0), np.zeros((0, 2)), t0=0.0, T=1.0))
    np.testing.assert_allclose(post.mean, p.mu_w, atol=1e-12)
    np.testing.assert_allclose(post.cov, p.Sigma_w, atol=1e-12)


def test_tiny_noise_gives_least_squares_fit():
    p = random_promp(3, 2, 1)
    q = p.replace(Sigma_y=1e-12 * np.eye(2))
    rng = np.random.default_rng(0)
    z = np.linspace(0, 1, 12)
    d = Demonstration.from_phases(z, rng.standard_normal((12, 2)))
    F = np.vstack([p.Phi(zi) for zi in z])
    w_ls = np.linalg.lstsq(F, d.joints.reshape(-1), rcond=None)[0]
    np.testing.assert_allclose(e_step(q, d).mean, w_ls, atol=1e-5)


def test_e_step_dense_bayes_oracle():
    p = random_promp(2, 2, 3)
    rng = np.random.default_rng(3)
    z = np.array([0.1, 0.5, 0.7])
    d = Demonstration.from_phases(z, rng.standard_normal((3, 2)))
    F = np.vstack([p.Phi(zi) for zi in z])
    Syy = F @ p.Sigma_w @ F.T + np.kron(np.eye(3), p.Sigma_y)
    Swy = p.Sigma_w @ F.T
    gain = np.linalg.solve(Syy, Swy.T).T
    mean = p.mu_w + gain @ (d.joints.reshape(-1) - F @ p.mu_w)
    cov = p.Sigma_w - gain @ Swy.T
    post = e_step(p, d)
    np.testing.assert_allclose(post.mean, mean, atol=1e-8)
    np.testing.assert_allclose(post.cov, cov, atol=1e-8)


def test_precision_route_matches_covariance_route():
    p, demos = small_data()
    stats = demo_stats(p.basis, demos)
    a = weight_posteriors(stats, p.mu_w, p.Sigma_w, p.Sigma_y)
    b = weight_posteriors(stats, p.mu_w, None, p.Sigma_y, precision=np.linalg.inv(p.Sigma_w))
    np.testing.assert_allclose(a.means, b.means, atol=1e-9)
    np.testing.assert_allclose(a.covs, b.covs, atol=1e-9)


def test_singular_precision_raises():
    p = random_promp()
    d = Demonstration.from_phases([0.5], [[0.0, 0.0]])
    stats = demo_stats(p.basis, [d])
    with pytest.raises(NumericalError):
        weight_posteriors(stats, p.mu_w, None, p.Sigma_y, precision=np.zeros((p.KD, p.KD)))


# -- EM -----------------------------------------------------------------------

def test_no_demos():
    with pytest.raises(InputError):
        em_train([], BasisConfig.default(), 2)


def test_mle_mean_is_average_of_posterior_means():
    p, demos = small_data()
    stats = demo_stats(p.basis, demos)
    post = weight_posteriors(stats, p.mu_w, p.Sigma_w, p.Sigma_y)
    for mode in (_Mode("mle"), _Mode("map", v0=p.KD + 1.0)):
        mu = m_step(stats, post, mode, p.D)[0]
        assert mu.tobytes() == post.means.mean(axis=0).tobytes()


def test_map_update_identity_every_iteration():
    p, demos = small_data(N=5)
    stats = demo_stats(p.basis, demos)
    KD, N = p.KD, 5
    N0 = 2.0 * (KD + 1)
    mode = _Mode("map", v0=KD + 1.0, s0_rule="every")
    mu, Sw, Sy = np.zeros(KD), np.eye(KD), np.eye(p.D)
    for _ in range(5):
        post = weight_posteriors(stats, mu, Sw, Sy)
        mu, Sw, Sy, Smle, _ = m_step(stats, post, mode, p.D)
        closed = (N0 * blockdiag(Smle, p.D) + N * Smle) / (N + N0)
        np.testing.assert_allclose(Sw, closed, rtol=1e-12, atol=1e-14)


def test_first_rule_freezes_scale_after_first_iteration():
    p, demos = small_data(N=5)
    _, rep = em_train(demos, p.basis, p.D, NIWPrior(), TrainOptions(max_iter=4, min_iter=4, tol=0))
    assert rep.iterations == 4
    assert np.all(np.diff(rep.objective_trace) >= -1e-8 * np.abs(rep.objective_trace[1:]))


@pytest.mark.parametrize("N", [1, 2, 3])
def test_map_covariance_positive_definite_for_tiny_N(N):
    p, demos = small_data(N=N, D=3)
    q, _ = em_train(demos, p.basis, p.D)
    assert np.min(np.linalg.eigvalsh(q.Sigma_w)) > 0


@settings(max_examples=15)
@given(st.integers(0, 1000), st.integers(1, 12),
       st.sampled_from([NIWPrior(), MLE, MLE_BLOCKDIAG]))
def test_objective_is_non_decreasing(seed, N, prior):
    p, demos = small_data(N=N, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        _, rep = em_train(demos, p.basis, p.D, prior, TrainOptions(max_iter=60))
    tr = np.array(rep.objective_trace)
    assert rep.monotone
    assert np.all(np.diff(tr) >= -1e-8 * np.maximum(1.0, np.abs(tr[:-1])))


def test_map_approaches_mle_as_n_grows():
    truth = correlated_promp(seed=2)
    demos = synthetic_demos(truth, 200, 50, 2)
    gaps = []
    for N in (10, 50, 200):
        a, _ = em_train(demos[:N], truth.basis, 4)
        b, _ = em_train(demos[:N], truth.basis, 4, MLE)
        gaps.append(rel(a.Sigma_w, b.Sigma_w))
    assert gaps[0] > gaps[1] > gaps[2]


def test_blockdiag_mle_zeroes_cross_blocks():
    p, demos = small_data(N=10, D=3)
    q, _ = em_train(demos, p.basis, 3, MLE_BLOCKDIAG)
    np.testing.assert_array_equal(q.Sigma_w, blockdiag(q.Sigma_w, 3))


def test_diagonal_noise_option():
    p, demos = small_data(N=6)
    q, _ = em_train(demos, p.basis, p.D, opts=TrainOptions(diag_sigma_y=True))
    assert q.Sigma_y[0, 1] == 0.0


def test_training_is_deterministic():
    p, demos = small_data(N=6)
    a, _ = em_train(demos, p.basis, p.D)
    b, _ = em_train(demos, p.basis, p.D)
    assert a.Sigma_w.tobytes() == b.Sigma_w.tobytes()


def test_prior_validation():
    with pytest.raises(InputError):
        NIWPrior(v0=3).resolve(10)
    with pytest.raises(InputError):
        NIWPrior(S0=-np.eye(4)).resolve(4)
    with pytest.raises(InputError):
        NIWPrior(k0=-1).resolve(4)
    with pytest.raises(InputError):
        em_train([Demonstration.from_phases([0, 1], np.zeros((2, 1)))], BasisConfig.default(), 1,
                 "bogus")


def test_explicit_s0_and_informative_mean():
    p, demos = small_data(N=4)
    m0 = np.ones(p.KD)
    q, rep = em_train(demos, p.basis, p.D, NIWPrior(k0=1e6, m0=m0, S0=np.eye(p.KD)))
    np.testing.assert_allclose(q.mu_w, m0, atol=1e-3)
    assert rep.monotone


@pytest.mark.parametrize("noise, sigma_tol", [(1e-3, 1e-4), (1e-4, 1e-6), (1e-5, 1e-8)])
def test_exact_optimum_is_a_fixed_point_of_point_estimate_em(noise, sigma_tol):
    # On clean complete data the two updates differ only by the posterior
    # covariance, which vanishes with the noise, so the exact optimum is
    # (nearly) stationary for the point-estimate iteration.
    truth = generating_promp(GeneratorConfig(D=2, noise_std=noise), 0)
    demos = synthetic_demos(truth, 30, 100, 0)
    a, _ = em_train(demos, truth.basis, 2, MLE)
    warm = TrainOptions(init_mu=a.mu_w, init_Sigma_w=a.Sigma_w, init_Sigma_y=a.Sigma_y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        b, _ = em_train_approx(demos, truth.basis, 2, MLE, warm)
    assert rel(b.mu_w, a.mu_w) < 1e-8
    assert rel(b.Sigma_w, a.Sigma_w) < sigma_tol


def test_point_estimate_from_default_start_can_stall_below_exact_optimum():
    # With an ill-conditioned basis and the unit-noise start, the point
    # estimates shrink weak weight directions to zero and the iteration
    # settles on a lower-likelihood fixed point.
    truth = generating_promp(GeneratorConfig(D=2, noise_std=1e-3), 0)
    demos = synthetic_demos(truth, 30, 100, 0)
    _, a = em_train(demos, truth.basis, 2, MLE)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        _, b = em_train_approx(demos, truth.basis, 2, MLE)
        _, c = em_train_approx(demos, truth.basis, 2, MLE,
                               TrainOptions(max_iter=300, min_iter=300, tol=0))
    assert a.loglik_trace[0] == b.loglik_trace[0]
    assert a.loglik_trace[-1] > b.loglik_trace[-1]
    assert c.loglik_trace[-1] == pytest.approx(b.loglik_trace[-1], rel=1e-9)


def test_exact_em_beats_point_estimate_with_missing_data():
    from promp.experiments import missing_data_demos
    truth = generating_promp(GeneratorConfig(D=2, rank=3), 4)
    demos = missing_data_demos(truth, 30, 60, noise_std=0.1, seed=4)
    opts = TrainOptions(max_iter=30, min_iter=30, tol=0)
    _, a = em_train(demos, truth.basis, 2, MLE, opts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        _, b = em_train_approx(demos, truth.basis, 2, MLE, opts)
    assert a.loglik_trace[-1] >= b.loglik_trace[-1]


# -- least squares -------------------------------------------------------------

def test_ls_interpolates_square_systems():
    basis = BasisConfig.default(3, 1)
    rng = np.random.default_rng(0)
    z = np.linspace(0, 1, basis.K)
    demos = [Demonstration.from_phases(z, rng.standard_normal((basis.K, 2))) for _ in range(3)]
    _, rep = least_squares_train(demos, basis, 2, 0.0)
    for d, post in zip(demos, rep.per_demo_posteriors):
        W = post.mean.reshape(2, basis.K)
        from promp.basis import feature_matrix
        np.testing.assert_allclose(feature_matrix(basis, z) @ W.T, d.joints, atol=1e-10)


def test_ls_singular_without_ridge():
    basis = BasisConfig.default(3, 1)
    d = Demonstration.from_phases([0.0, 0.5, 1.0], np.zeros((3, 1)))
    with pytest.raises(NumericalError):
        least_squares_train([d], basis, 1, 0.0)


def test_ls_rank_deficiency_reported():
    truth = generating_promp(GeneratorConfig(), 0)
    p, rep = least_squares_train(synthetic_demos(truth, 2), truth.basis, 7, 0.0)
    assert rep.rank <= 2 and rep.rank_deficient
    assert rep.condition_number == float("inf")


@pytest.mark.parametrize("lam", [0.0, 0.1, 1.0])
def test_ls_is_one_point_estimate_iteration(lam):
    truth = correlated_promp(seed=1)
    demos = synthetic_demos(truth, 12, 30, 1)
    a, _ = least_squares_train(demos, truth.basis, 4, lam)
    KD = truth.KD
    opts = TrainOptions(max_iter=1, min_iter=1, init_precision=lam * np.eye(KD),
                        init_Sigma_y=np.eye(4))
    b, _ = em_train_approx(demos, truth.basis, 4, MLE, opts)
    for x, y in ((a.mu_w, b.mu_w), (a.Sigma_w, b.Sigma_w), (a.Sigma_y, b.Sigma_y)):
        assert rel(x, y) < 1e-10
