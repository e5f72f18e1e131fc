"""Conditioning operators in joint space and task space.

Joint-space conditioning is computed in gain form, which only factorises a
``D x D`` matrix and never inverts ``Sigma_w``; it is algebraically identical
to the information form ``S = (Sigma_w^-1 + Phi^T Sigma_y^-1 Phi)^-1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _linalg
from .basis import feature_matrix
from .errors import AdaptationError, DimensionError, InputError, NumericalError
from .kinematics import ForwardKinematics
from .model import GaussianState, ProMP


@dataclass(frozen=True)
class JointTarget:
    """Desired joint value ``value`` or distribution ``dist`` at phase ``z``."""

    z: float
    value: Optional[np.ndarray] = None
    dist: Optional[GaussianState] = None
    order: int = 0

    def __post_init__(self):
        if (self.value is None) == (self.dist is None):
            raise InputError("give exactly one of value or dist")
        if self.order not in (0, 1, 2):
            raise InputError("order must be 0, 1 or 2")


@dataclass(frozen=True)
class TaskTarget:
    z: float
    dist: GaussianState


@dataclass
class LaplaceOptions:
    grad_tol: float = 1e-8
    max_iter: int = 100
    use_hessian: bool = True


@dataclass
class LaplaceReport:
    iterations: int
    grad_norm: float
    grad_norm0: float
    hessian_cond: float
    mu_q: np.ndarray
    Sigma_q: np.ndarray
    full_hessian: bool
    objective: float


def _phi_sigma(p: ProMP, phi):
    """``Phi @ Sigma_w`` for the block-diagonal ``Phi = kron(I_D, phi^T)``."""
    return np.einsum("k,dkj->dj", phi, p.Sigma_w.reshape(p.D, p.K, -1))


def _gain(p: ProMP, z, order):
    """Whitened cross term ``B = L^-1 Phi Sigma_w`` with ``L L^T = Phi Sigma_w Phi^T + Sigma_y``.

    The gain is ``B^T L^-1`` and the covariance reduction is ``B^T B``.
    """
    phi = feature_matrix(p.basis, z, order)[0]
    PS = _phi_sigma(p, phi)                       # D x KD
    PSPt = PS.reshape(p.D, p.D, p.K) @ phi        # D x D
    C = _linalg.symmetrize(PSPt + p.Sigma_y)
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise NumericalError("Phi Sigma_w Phi^T + Sigma_y is singular",
                             {"z": float(z), "order": order}) from None
    Li = np.linalg.inv(L)                         # D x D, cheap
    mean_z = p.mu_w.reshape(p.D, p.K) @ phi
    return Li @ PS, Li, mean_z


def _check_dim(p, v, what):
    if v.shape != (p.D,):
        raise DimensionError(f"{what} must have length D={p.D}, got shape {v.shape}")


def condition_point(p: ProMP, t: JointTarget) -> ProMP:
    """Condition the weights on reaching ``t.value`` exactly at phase ``t.z``."""
    if t.value is None:
        raise InputError("condition_point needs an exact target value")
    y = np.asarray(t.value, dtype=float)
    _check_dim(p, y, "target")
    B, Li, mean_z = _gain(p, t.z, t.order)
    mu = p.mu_w + B.T @ (Li @ (y - mean_z))
    # B.T @ B goes through a symmetric rank-k update, so S stays exactly symmetric;
    # subtracting in place avoids a second large temporary
    S = B.T @ B
    np.subtract(p.Sigma_w, S, out=S)
    return p.replace(mu_w=mu, Sigma_w=S)


def condition_gaussian(p: ProMP, t: JointTarget) -> ProMP:
    """Condition on a Gaussian-distributed target, marginalising the target value."""
    dist = t.dist if t.dist is not None else GaussianState(t.value, np.zeros((p.D, p.D)))
    _check_dim(p, dist.mean, "target mean")
    B, Li, mean_z = _gain(p, t.z, t.order)
    mu = p.mu_w + B.T @ (Li @ (dist.mean - mean_z))
    W = np.eye(p.D) - Li @ dist.cov @ Li.T
    S = B.T @ (_linalg.symmetrize(W) @ B)
    np.subtract(p.Sigma_w, S, out=S)
    S += S.T
    S *= 0.5
    return p.replace(mu_w=mu, Sigma_w=S)


def task_distribution(p: ProMP, z, fk: ForwardKinematics) -> GaussianState:
    """Task-space Gaussian from linearising ``fk`` at the mean joint state."""
    if fk.D != p.D:
        raise DimensionError(f"kinematics expects D={fk.D}, model has D={p.D}")
    phi = feature_matrix(p.basis, z)[0]
    y = p.mu_w.reshape(p.D, p.K) @ phi
    J = np.asarray(fk.jacobian(y))
    Phi = np.kron(np.eye(p.D), phi[None, :])
    G = J @ Phi
    return GaussianState(np.asarray(fk.evaluate(y)), _linalg.symmetrize(G @ p.Sigma_w @ G.T))


def condition_task(p: ProMP, t: TaskTarget, fk: ForwardKinematics,
                   opts: Optional[LaplaceOptions] = None):
    """Adapt ``p`` towards a task-space target via a Laplace approximation.

    The joint state at ``t.z`` is given the posterior ``N(Phi mu, Phi Sigma Phi^T
    + Sigma_y) * N(f(y); mu_x, Sigma_x)``; its mode and curvature become a
    Gaussian joint target for :func:`condition_gaussian`.
    """
    opts = opts or LaplaceOptions()
    if fk.D != p.D:
        raise DimensionError(f"kinematics expects D={fk.D}, model has D={p.D}")
    mu_x, Sigma_x = t.dist.mean, t.dist.cov
    if mu_x.shape != (fk.X,):
        raise DimensionError(f"task target must have length {fk.X}")
    try:
        cx = cho_factor(Sigma_x)
    except np.linalg.LinAlgError:
        raise InputError("task covariance must be positive definite") from None
    Px = cho_solve(cx, np.eye(fk.X))

    phi = feature_matrix(p.basis, t.z)[0]
    PS = _phi_sigma(p, phi)
    Cm = PS.reshape(p.D, p.D, p.K) @ phi + p.Sigma_y
    try:
        cm = cho_factor(_linalg.symmetrize(Cm))
    except np.linalg.LinAlgError:
        raise NumericalError("joint marginal covariance is singular", {"z": t.z}) from None
    Cinv = cho_solve(cm, np.eye(p.D))
    m = p.mu_w.reshape(p.D, p.K) @ phi

    def parts(y):
        r = np.asarray(fk.evaluate(y)) - mu_x
        J = np.asarray(fk.jacobian(y))
        dy = y - m
        Pr = Px @ r
        obj = -0.5 * dy @ Cinv @ dy - 0.5 * r @ Pr
        grad = -Cinv @ dy - J.T @ Pr
        H_gn = Cinv + J.T @ Px @ J
        H = None
        if opts.use_hessian:
            h2 = fk.hessians(y)
            if h2 is not None:
                H = H_gn + np.einsum("x,xjk->jk", Pr, h2)
        return obj, grad, H_gn, H

    y = m.copy()
    obj, grad, H_gn, H = parts(y)
    g0 = float(np.linalg.norm(grad))
    target = opts.grad_tol * max(1.0, g0)
    it = 0
    while np.linalg.norm(grad) > target:
        if it >= opts.max_iter:
            raise AdaptationError(
                f"Laplace mode search did not converge in {opts.max_iter} iterations",
                best=y, diagnostics={"grad_norm": float(np.linalg.norm(grad)), "target": target})
        it += 1
        step = None
        if H is not None:
            try:
                step = cho_solve(cho_factor(_linalg.symmetrize(H)), grad)
            except np.linalg.LinAlgError:
                step = None
        if step is None:
            step = cho_solve(cho_factor(_linalg.symmetrize(H_gn)), grad)
        alpha = 1.0
        improved = False
        for _ in range(40):
            cand = y + alpha * step
            c_obj, c_grad, c_Hgn, c_H = parts(cand)
            if c_obj >= obj + 1e-4 * alpha * float(grad @ step) or (
                    c_obj >= obj and np.linalg.norm(c_grad) < np.linalg.norm(grad)):
                improved = True
                break
            alpha *= 0.5
        if not improved:
            # no ascent possible at working precision
            if np.linalg.norm(grad) <= max(target, 1e-6 * max(1.0, g0)):
                break
            raise AdaptationError("line search failed in Laplace mode search", best=y,
                                  diagnostics={"grad_norm": float(np.linalg.norm(grad))})
        y, obj, grad, H_gn, H = cand, c_obj, c_grad, c_Hgn, c_H

    Lam = H if H is not None else H_gn
    Lam = _linalg.symmetrize(Lam)
    w = np.linalg.eigvalsh(Lam)
    if w[0] <= 0:
        raise NumericalError("negative Hessian is not positive definite at the mode (saddle)",
                             {"min_eig": float(w[0]), "mode": y.tolist()})
    Sigma_q = _linalg.symmetrize(np.linalg.inv(Lam))
    report = LaplaceReport(it, float(np.linalg.norm(grad)), g0, float(w[-1] / w[0]), y,
                           Sigma_q, H is not None, float(obj))
    adapted = condition_gaussian(p, JointTarget(t.z, dist=GaussianState(y, Sigma_q)))
    return adapted, report
