import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_promp
from promp.adaptation import (JointTarget, LaplaceOptions, TaskTarget, condition_gaussian,
                              condition_point, condition_task, task_distribution)
from promp.errors import AdaptationError, DimensionError, InputError, NumericalError
from promp.kinematics import ForwardKinematics, LinearKinematics, PlanarArm
from promp.model import GaussianState, marginal_at


def info_condition(p, z, mean, cov, order=0):
    """Dense information-form conditioning, used as an independent oracle."""
    Phi = p.Phi(z, order)
    Py = np.linalg.inv(p.Sigma_y)
    Tw = np.linalg.inv(np.linalg.inv(p.Sigma_w) + Phi.T @ Py @ Phi)
    m = Tw @ (np.linalg.solve(p.Sigma_w, p.mu_w) + Phi.T @ Py @ mean)
    S = Tw + Tw @ Phi.T @ Py @ cov @ Py @ Phi @ Tw
    return m, S


def tiny_promp(seed=0, noise=0.5):
    # K = 2 features (constant + one RBF) and D = 2, so KD = 4
    p = random_promp(1, 2, seed, poly_degree=0)
    return p.replace(Sigma_y=noise ** 2 * np.eye(2))


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- joint space ----------------------------------------------------------------

@pytest.mark.parametrize("order", [0, 1, 2])
def test_condition_point_matches_information_form(order):
    p = random_promp(3, 3, 2)
    y = np.array([0.3, -1.0, 2.0])
    q = condition_point(p, JointTarget(0.37, value=y, order=order))
    m, S = info_condition(p, 0.37, y, np.zeros((3, 3)), order)
    np.testing.assert_allclose(q.mu_w, m, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(q.Sigma_w, S, rtol=1e-7, atol=1e-10)


def test_information_additivity():
    p = random_promp(3, 2, 3)
    q = condition_point(p, JointTarget(0.6, value=np.ones(2)))
    Phi = p.Phi(0.6)
    lhs = np.linalg.inv(q.Sigma_w)
    rhs = np.linalg.inv(p.Sigma_w) + Phi.T @ np.linalg.solve(p.Sigma_y, Phi)
    assert rel(lhs, rhs) < 1e-8


def test_self_consistent_target_keeps_mean():
    p = random_promp(3, 2, 4)
    y = p.Phi(0.25) @ p.mu_w
    q = condition_point(p, JointTarget(0.25, value=y))
    np.testing.assert_allclose(q.mu_w, p.mu_w, atol=1e-12)
    assert np.trace(q.Sigma_w) < np.trace(p.Sigma_w)


def test_near_noiseless_conditioning_interpolates():
    p = random_promp(3, 2, 5).replace(Sigma_y=1e-8 * np.eye(2))
    y = np.array([1.5, -0.7])
    q = condition_point(p, JointTarget(0.8, value=y))
    assert np.max(np.abs(q.Phi(0.8) @ q.mu_w - y)) < 1e-3


def test_conditioning_is_pure():
    p = random_promp(3, 2, 6)
    before = (p.mu_w.copy(), p.Sigma_w.copy(), p.Sigma_y.copy())
    condition_point(p, JointTarget(0.5, value=np.zeros(2)))
    condition_gaussian(p, JointTarget(0.5, dist=GaussianState(np.zeros(2), np.eye(2))))
    for a, b in zip(before, (p.mu_w, p.Sigma_w, p.Sigma_y)):
        np.testing.assert_array_equal(a, b)


def test_point_posterior_matches_importance_sampling():
    p = tiny_promp(0)
    z, y = 0.4, np.array([0.8, -0.5])
    q = condition_point(p, JointTarget(z, value=y))
    rng = np.random.default_rng(0)
    W = rng.multivariate_normal(p.mu_w, p.Sigma_w, 1_000_000)
    r = W @ p.Phi(z).T - y
    logw = -0.5 * np.sum(r * np.linalg.solve(p.Sigma_y, r.T).T, axis=1)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    mean = w @ W
    se_mean = np.sqrt((w ** 2) @ (W - mean) ** 2)
    assert np.all(np.abs(mean - q.mu_w) < 4 * se_mean)
    dev = W - mean
    outer = dev[:, :, None] * dev[:, None, :]
    cov = np.einsum("n,nij->ij", w, outer)
    se_cov = np.sqrt(np.einsum("n,nij->ij", w ** 2, (outer - cov) ** 2))
    assert np.all(np.abs(cov - q.Sigma_w) < 4 * se_cov)


def test_gaussian_target_matches_mixture_of_point_conditionings():
    p = tiny_promp(1)
    z = 0.7
    dist = GaussianState(np.array([0.2, 0.4]), np.array([[0.3, 0.1], [0.1, 0.2]]))
    q = condition_gaussian(p, JointTarget(z, dist=dist))
    rng = np.random.default_rng(1)
    Ys = rng.multivariate_normal(dist.mean, dist.cov, 1_000_000)
    # posterior mean is affine in the target; the information form gives the map
    m0, S0 = info_condition(p, z, np.zeros(2), np.zeros((2, 2)))
    m1 = np.stack([info_condition(p, z, e, np.zeros((2, 2)))[0] - m0 for e in np.eye(2)], 1)
    M = m0 + Ys @ m1.T
    mean = M.mean(0)
    se = M.std(0) / np.sqrt(len(M))
    assert np.all(np.abs(mean - q.mu_w) < 4 * se)
    dev = M - mean
    outer = dev[:, :, None] * dev[:, None, :]
    cov = S0 + outer.mean(0)
    se_cov = outer.std(0) / np.sqrt(len(M))
    assert np.all(np.abs(cov - q.Sigma_w) < 4 * se_cov + 1e-12)


def test_zero_target_covariance_is_point_conditioning():
    p = random_promp(3, 2, 7)
    y = np.array([0.1, 0.2])
    a = condition_point(p, JointTarget(0.3, value=y))
    b = condition_gaussian(p, JointTarget(0.3, dist=GaussianState(y, np.zeros((2, 2)))))
    np.testing.assert_allclose(b.mu_w, a.mu_w, atol=1e-12)
    np.testing.assert_allclose(b.Sigma_w, a.Sigma_w, atol=1e-12)


@pytest.mark.parametrize("k", [4, 8, 12])
def test_gaussian_conditioning_is_continuous_at_zero_covariance(k):
    p = random_promp(3, 2, 8)
    y = np.array([-0.4, 0.9])
    a = condition_point(p, JointTarget(0.55, value=y))
    b = condition_gaussian(p, JointTarget(0.55, dist=GaussianState(y, 10.0 ** -k * np.eye(2))))
    tol = 10.0 ** -k * 100
    assert np.max(np.abs(b.Sigma_w - a.Sigma_w)) < max(tol, 1e-9)
    np.testing.assert_allclose(b.mu_w, a.mu_w, atol=1e-12)


def test_tiny_target_covariance_matches_point_to_1e_9():
    p = random_promp(3, 2, 9)
    y = np.array([0.5, 0.5])
    a = condition_point(p, JointTarget(0.2, value=y))
    b = condition_gaussian(p, JointTarget(0.2, dist=GaussianState(y, 1e-12 * np.eye(2))))
    assert rel(b.mu_w, a.mu_w) < 1e-9
    assert rel(b.Sigma_w, a.Sigma_w) < 1e-9


@given(st.integers(0, 10_000))
def test_uncertain_targets_never_tighten_below_exact(seed):
    p = random_promp(3, 2, seed % 50)
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((2, 2))
    y = rng.standard_normal(2)
    a = condition_point(p, JointTarget(0.5, value=y))
    b = condition_gaussian(p, JointTarget(0.5, dist=GaussianState(y, B @ B.T)))
    w = np.linalg.eigvalsh(b.Sigma_w - a.Sigma_w)
    assert w[0] > -1e-10 * max(1.0, w[-1])


def test_target_validation():
    p = random_promp()
    with pytest.raises(InputError):
        JointTarget(0.5)
    with pytest.raises(InputError):
        JointTarget(0.5, value=np.zeros(2), dist=GaussianState(np.zeros(2), np.eye(2)))
    with pytest.raises(InputError):
        JointTarget(0.5, value=np.zeros(2), order=3)
    with pytest.raises(DimensionError):
        condition_point(p, JointTarget(0.5, value=np.zeros(3)))
    with pytest.raises(InputError):
        condition_point(p, JointTarget(0.5, dist=GaussianState(np.zeros(2), np.eye(2))))


def test_singular_marginal_raises():
    p = random_promp(3, 2, 0, rank=1).replace(Sigma_y=np.zeros((2, 2)))
    with pytest.raises(NumericalError):
        condition_point(p, JointTarget(0.5, value=np.zeros(2)))


# -- task space -------------------------------------------------------------------

def test_identity_kinematics_task_distribution():
    p = random_promp(3, 2, 10)
    td = task_distribution(p, 0.3, LinearKinematics(np.eye(2)))
    Phi = p.Phi(0.3)
    np.testing.assert_allclose(td.mean, marginal_at(p, 0.3).mean)
    np.testing.assert_allclose(td.cov, Phi @ p.Sigma_w @ Phi.T, atol=1e-14)


def test_linear_task_distribution_is_exact():
    p = random_promp(3, 3, 11)
    rng = np.random.default_rng(11)
    A, c = rng.standard_normal((2, 3)), rng.standard_normal(2)
    td = task_distribution(p, 0.6, LinearKinematics(A, c))
    Phi = p.Phi(0.6)
    np.testing.assert_allclose(td.mean, A @ Phi @ p.mu_w + c, atol=1e-12)
    np.testing.assert_allclose(td.cov, A @ Phi @ p.Sigma_w @ Phi.T @ A.T, atol=1e-12)


def test_planar_task_distribution_against_monte_carlo():
    p = random_promp(3, 3, 12).replace()
    p = p.replace(Sigma_w=0.01 * p.Sigma_w)
    arm = PlanarArm([1.0, 0.8, 0.6])
    z = 0.5
    td = task_distribution(p, z, arm)
    rng = np.random.default_rng(12)
    W = rng.multivariate_normal(p.mu_w, p.Sigma_w, 100_000)
    Y = W @ p.Phi(z).T
    th = np.cumsum(Y, axis=1)
    X = np.stack([np.cos(th) @ arm.link_lengths, np.sin(th) @ arm.link_lengths], 1)
    # second-order bias bound: half the largest curvature times the joint variance
    joint_var = np.trace(p.Phi(z) @ p.Sigma_w @ p.Phi(z).T)
    bound = 0.5 * arm.reach * 3 * joint_var
    assert np.linalg.norm(X.mean(0) - td.mean) < bound
    assert rel(td.cov, np.cov(X.T)) < 0.15


def exact_task_oracle(p, z, A, c, mu_x, Sigma_x):
    Phi = p.Phi(z)
    C = Phi @ p.Sigma_w @ Phi.T + p.Sigma_y
    Ci = np.linalg.inv(C)
    Pq = Ci + A.T @ np.linalg.solve(Sigma_x, A)
    Sq = np.linalg.inv(Pq)
    mq = Sq @ (Ci @ Phi @ p.mu_w + A.T @ np.linalg.solve(Sigma_x, mu_x - c))
    return info_condition(p, z, mq, Sq)


@pytest.mark.parametrize("seed", range(5))
def test_laplace_is_exact_for_linear_kinematics(seed):
    rng = np.random.default_rng(seed)
    p = random_promp(3, 3, seed)
    A, c = rng.standard_normal((2, 3)), rng.standard_normal(2)
    mu_x = rng.standard_normal(2)
    B = rng.standard_normal((2, 2))
    Sx = 0.1 * B @ B.T + 0.01 * np.eye(2)
    q, rep = condition_task(p, TaskTarget(0.45, GaussianState(mu_x, Sx)), LinearKinematics(A, c))
    m, S = exact_task_oracle(p, 0.45, A, c, mu_x, Sx)
    assert rel(q.mu_w, m) < 1e-8
    assert rel(q.Sigma_w, S) < 1e-8
    assert rep.grad_norm <= 1e-8 * max(1.0, rep.grad_norm0)


def test_task_target_at_prior_mean_keeps_mean_trajectory():
    p = random_promp(3, 3, 13)
    arm = PlanarArm([0.5, 0.4, 0.3])
    x0 = task_distribution(p, 0.5, arm).mean
    q, rep = condition_task(p, TaskTarget(0.5, GaussianState(x0, 0.01 * np.eye(2))), arm)
    assert rep.iterations == 0
    np.testing.assert_allclose(rep.mu_q, p.Phi(0.5) @ p.mu_w, atol=1e-12)
    np.testing.assert_allclose(q.Phi(0.5) @ q.mu_w, p.Phi(0.5) @ p.mu_w, atol=1e-10)


def test_planar_arm_reaches_nearby_targets():
    p = random_promp(3, 3, 14)
    p = p.replace(Sigma_w=0.05 * p.Sigma_w, Sigma_y=1e-4 * np.eye(3))
    arm = PlanarArm([0.5, 0.4, 0.3])
    rng = np.random.default_rng(14)
    x0 = task_distribution(p, 0.5, arm).mean
    targets = x0 + rng.normal(0, 0.15, (60, 2))
    targets = targets[np.linalg.norm(targets, axis=1) < 0.95 * arm.reach][:20]
    assert len(targets) == 20
    for target in targets:
        q, rep = condition_task(p, TaskTarget(0.5, GaussianState(target, 1e-6 * np.eye(2))), arm)
        assert np.linalg.norm(arm(q.Phi(0.5) @ q.mu_w) - target) < 1e-2
        assert rep.full_hessian
        assert np.all(np.linalg.eigvalsh(np.linalg.inv(rep.Sigma_q)) > 0)


def test_gauss_newton_fallback_also_converges():
    p = random_promp(3, 3, 15)
    arm = PlanarArm([0.5, 0.4, 0.3])
    x0 = task_distribution(p, 0.5, arm).mean
    t = TaskTarget(0.5, GaussianState(x0 + 0.1, 1e-3 * np.eye(2)))
    a, ra = condition_task(p, t, arm)
    b, rb = condition_task(p, t, arm, LaplaceOptions(use_hessian=False))
    assert ra.full_hessian and not rb.full_hessian
    # the redundant direction is weakly curved, so the modes agree only loosely
    np.testing.assert_allclose(rb.mu_q, ra.mu_q, atol=1e-5)
    assert rb.grad_norm <= 1e-8 * max(1.0, rb.grad_norm0)


class _Wavy(ForwardKinematics):
    """Highly oscillatory map that defeats a short iteration budget."""
    D, X = 2, 2

    def evaluate(self, y):
        return np.array([np.sin(40 * y[0]), np.sin(40 * y[1])])

    def jacobian(self, y):
        return np.diag([40 * np.cos(40 * y[0]), 40 * np.cos(40 * y[1])])


def test_nonconvergence_reports_best_iterate():
    p = random_promp(3, 2, 16)
    t = TaskTarget(0.5, GaussianState(np.array([0.99, -0.99]), 1e-8 * np.eye(2)))
    with pytest.raises(AdaptationError) as exc:
        condition_task(p, t, _Wavy(), LaplaceOptions(max_iter=1, use_hessian=False))
    assert exc.value.best is not None and exc.value.best.shape == (2,)


class _Saddle(ForwardKinematics):
    """``f(y) = y0^2 - y1^2`` observed very precisely at 0 from the origin."""
    D, X = 2, 1

    def evaluate(self, y):
        return np.array([y[0] ** 2 - y[1] ** 2])

    def jacobian(self, y):
        return np.array([[2 * y[0], -2 * y[1]]])

    def hessians(self, y):
        return np.array([[[2.0, 0.0], [0.0, -2.0]]])


def test_saddle_is_detected():
    p = random_promp(3, 2, 17)
    Phi = p.Phi(0.5)
    p = p.replace(mu_w=p.mu_w - np.linalg.pinv(Phi) @ (Phi @ p.mu_w),
                  Sigma_y=np.eye(2), Sigma_w=1e-6 * np.eye(p.K * 2))
    # at y = 0 the gradient vanishes; a large negative curvature term makes it a saddle
    t = TaskTarget(0.5, GaussianState(np.array([1.0]), 1e-3 * np.eye(1)))
    with pytest.raises(NumericalError):
        condition_task(p, t, _Saddle())


def test_task_input_validation():
    p = random_promp(3, 2)
    with pytest.raises(DimensionError):
        condition_task(p, TaskTarget(0.5, GaussianState(np.zeros(2), np.eye(2))),
                       PlanarArm([1, 1, 1]))
    with pytest.raises(DimensionError):
        condition_task(p, TaskTarget(0.5, GaussianState(np.zeros(3), np.eye(3))),
                       PlanarArm([1, 1]))
    with pytest.raises(InputError):
        condition_task(p, TaskTarget(0.5, GaussianState(np.zeros(2), np.zeros((2, 2)))),
                       PlanarArm([1, 1]))
