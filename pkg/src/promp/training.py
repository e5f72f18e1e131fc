"""Trainers: EM for MAP / MLE, the point-estimate EM variant, and least squares."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _linalg
from .basis import BasisConfig
from .errors import InputError, NumericalError
from .model import (
    DemoStats, GaussianState, ProMP, Posteriors, _unvec, _vec, demo_stats,
    loglik_terms, residual_scatter, weight_posteriors,
)

log = logging.getLogger(__name__)

MLE = "mle"
MLE_BLOCKDIAG = "mle-blockdiag"


@dataclass(frozen=True)
class NIWPrior:
    """Normal-Inverse-Wishart prior over ``(mu_w, Sigma_w)``.

    ``v0=None`` means ``KD + 1``. ``S0=None`` selects the adaptive scale
    ``(v0 + KD + 1) * blockdiag(Sigma_MLE)``. With ``s0_rule="first"`` it is
    built from the first iteration's MLE covariance and then held fixed, so
    EM climbs a single posterior; ``"every"`` rebuilds it at each M-step.
    """

    k0: float = 0.0
    m0: Optional[np.ndarray] = None
    v0: Optional[float] = None
    S0: Optional[np.ndarray] = None
    proper: bool = True
    s0_rule: str = "first"

    def resolve(self, KD):
        if self.k0 < 0:
            raise InputError("k0 must be >= 0")
        v0 = float(KD + 1 if self.v0 is None else self.v0)
        if self.proper and v0 < KD + 1:
            raise InputError(f"a proper prior needs v0 >= KD + 1 = {KD + 1}, got {v0}")
        m0 = np.zeros(KD) if self.m0 is None else np.asarray(self.m0, dtype=float)
        if m0.shape != (KD,):
            raise InputError(f"m0 must have length {KD}")
        S0 = None
        if self.S0 is not None:
            S0 = np.asarray(self.S0, dtype=float)
            if S0.shape != (KD, KD) or not _linalg.is_psd(S0):
                raise InputError("explicit S0 must be a symmetric PSD KD x KD matrix")
        if self.s0_rule not in ("first", "every"):
            raise InputError("s0_rule must be 'first' or 'every'")
        return float(self.k0), m0, v0, S0


@dataclass
class TrainOptions:
    tol: float = 1e-6
    max_iter: int = 200
    min_iter: int = 3
    diag_sigma_y: bool = False
    init_mu: Optional[np.ndarray] = None
    init_Sigma_w: Optional[np.ndarray] = None
    init_Sigma_y: Optional[np.ndarray] = None
    # prior precision for the first E-step instead of init_Sigma_w; may be singular
    init_precision: Optional[np.ndarray] = None
    monotone_rtol: float = 1e-8


@dataclass
class TrainReport:
    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    loglik_trace: list = field(default_factory=list)
    converged: bool = False
    per_demo_posteriors: list = field(default_factory=list)
    Sigma_mle: Optional[np.ndarray] = None
    rank: Optional[int] = None
    rank_deficient: bool = False
    condition_number: Optional[float] = None
    monotone: bool = True
    diagnostics: dict = field(default_factory=dict)


def blockdiag(S, D):
    """Keep the D diagonal K x K blocks of S, zeroing cross-DoF blocks."""
    KD = S.shape[-1]
    K = KD // D
    mask = np.kron(np.eye(D, dtype=bool), np.ones((K, K), dtype=bool))
    return np.where(mask, S, 0.0)


@dataclass
class _Mode:
    kind: str                 # "map" | "mle"
    blockdiag: bool = False
    k0: float = 0.0
    m0: Optional[np.ndarray] = None
    v0: float = 0.0
    S0: Optional[np.ndarray] = None
    s0_rule: str = "every"


def _resolve_mode(prior, KD):
    if prior is None:
        prior = NIWPrior()
    if isinstance(prior, str):
        if prior == MLE:
            return _Mode("mle")
        if prior == MLE_BLOCKDIAG:
            return _Mode("mle", blockdiag=True)
        raise InputError(f"unknown prior mode {prior!r}")
    k0, m0, v0, S0 = prior.resolve(KD)
    return _Mode("map", False, k0, m0, v0, S0, prior.s0_rule)


def m_step(stats: DemoStats, post: Posteriors, mode: _Mode, D, use_cov=True, diag_sigma_y=False):
    """Closed-form parameter update from per-demo weight posteriors.

    Returns ``(mu_w, Sigma_w, Sigma_y, Sigma_mle, S0_used)``. With
    ``use_cov=False`` the posterior covariances are ignored (point-estimate EM).
    """
    N = stats.N
    KD = post.means.shape[1]
    K = KD // D
    m = post.means
    mu_mle = m.mean(axis=0)
    if mode.kind == "map" and mode.k0 != 0.0:
        mu = (mode.k0 * mode.m0 + N * mu_mle) / (N + mode.k0)
    else:
        mu = mu_mle
    dev = m - mu
    Sigma_mle = dev.T @ dev / N
    if use_cov:
        Sigma_mle = Sigma_mle + (post.covs[0] if stats.shared else post.covs.mean(axis=0))
    Sigma_mle = _linalg.symmetrize(Sigma_mle)

    S0 = None
    if mode.kind == "mle":
        Sigma_w = Sigma_mle.copy()
        if mode.blockdiag:
            Sigma_w = blockdiag(Sigma_w, D)
    else:
        S0 = mode.S0 if mode.S0 is not None else (mode.v0 + KD + 1) * blockdiag(Sigma_mle, D)
        Sigma_w = (S0 + N * Sigma_mle) / (N + mode.v0 + KD + 1)
    Sigma_w = _linalg.symmetrize(Sigma_w)

    W = _unvec(m, K, D)
    E = residual_scatter(stats, W).sum(axis=0)
    if use_cov:
        S4 = post.covs.reshape(N, D, K, D, K) if not stats.shared else post.covs[:1].reshape(1, D, K, D, K)
        G = stats.G[:1] if stats.shared else stats.G
        C = np.einsum("ndkel,nkl->de", S4, G)
        if stats.shared:
            C = C * N
        E = E + C
    L = float(stats.n.sum())
    if L <= 0:
        raise InputError("the demonstrations contain no samples")
    Sigma_y = _linalg.symmetrize(E / L)
    if diag_sigma_y:
        Sigma_y = np.diag(np.diag(Sigma_y))
    return mu, Sigma_w, Sigma_y, Sigma_mle, S0


def log_prior(mu, Sigma_w, mode: _Mode, S0):
    """Unnormalised log NIW density (zero in MLE mode)."""
    if mode.kind == "mle":
        return 0.0
    KD = Sigma_w.shape[0]
    Lc = _linalg.cholesky(Sigma_w, "Sigma_w")
    logdet = 2.0 * np.sum(np.log(np.diag(Lc)))
    Li = np.linalg.inv(Lc)
    Sinv = Li.T @ Li
    val = -0.5 * (mode.v0 + KD + 1) * logdet
    if S0 is not None:
        val -= 0.5 * float(np.sum(S0 * Sinv))
    if mode.k0 > 0:
        d = mu - mode.m0
        val += -0.5 * (logdet - KD * np.log(mode.k0)) - 0.5 * mode.k0 * float(d @ Sinv @ d)
    return float(val)


def _initial(KD, D, opts: TrainOptions):
    mu = np.zeros(KD) if opts.init_mu is None else np.asarray(opts.init_mu, dtype=float)
    Sw = np.eye(KD) if opts.init_Sigma_w is None else np.asarray(opts.init_Sigma_w, dtype=float)
    Sy = np.eye(D) if opts.init_Sigma_y is None else np.asarray(opts.init_Sigma_y, dtype=float)
    return mu, Sw, Sy


def _run_em(demos, basis: BasisConfig, D, prior, opts: Optional[TrainOptions], use_cov):
    opts = opts or TrainOptions()
    demos = list(demos)
    if not demos:
        raise InputError("at least one demonstration is required")
    if D is None:
        D = demos[0].D
    stats = demo_stats(basis, demos, D)
    KD = basis.K * D
    mode = _resolve_mode(prior, KD)
    mu, Sw, Sy = _initial(KD, D, opts)
    report = TrainReport()
    diag = report.diagnostics
    precision = None if opts.init_precision is None else np.asarray(opts.init_precision, dtype=float)

    def objective(mu, Sw, Sy, S0):
        ll = float(np.sum(loglik_terms(stats, mu, Sw, Sy)))
        return ll, ll + log_prior(mu, Sw, mode, S0)

    # With the "first" rule S0 is unknown until the first M-step; the initial
    # objective is rescored with it afterwards so the trace is one objective.
    rescore = mode.kind == "map" and mode.S0 is None and mode.s0_rule == "first"
    init = (mu, Sw, Sy)
    if precision is None:
        ll0, obj0 = objective(mu, Sw, Sy, mode.S0)
        report.loglik_trace.append(ll0)
        report.objective_trace.append(obj0)
    else:
        report.loglik_trace.append(float("nan"))
        report.objective_trace.append(float("nan"))

    post = None
    for it in range(1, opts.max_iter + 1):
        try:
            post = weight_posteriors(stats, mu, Sw, Sy, precision=precision, diagnostics=diag)
            precision = None
            mu, Sw, Sy, Sigma_mle, S0 = m_step(stats, post, mode, D, use_cov, opts.diag_sigma_y)
            if rescore and it == 1:
                mode.S0 = S0
                if np.isfinite(report.loglik_trace[0]):
                    report.objective_trace[0] = report.loglik_trace[0] + log_prior(init[0], init[1], mode, S0)
            ll, obj = objective(mu, Sw, Sy, S0)
        except NumericalError as exc:
            exc.diagnostics["iteration"] = it
            raise
        report.iterations = it
        report.Sigma_mle = Sigma_mle
        report.loglik_trace.append(ll)
        report.objective_trace.append(obj)
        prev = report.objective_trace[-2]
        if np.isfinite(prev):
            if obj < prev - opts.monotone_rtol * max(1.0, abs(prev)):
                report.monotone = False
            if it >= opts.min_iter and abs(obj - prev) < opts.tol * max(1.0, abs(prev)):
                report.converged = True
                break
    if not report.monotone:
        msg = "objective decreased during EM" + ("" if use_cov else " (point-estimate E-step)")
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        log.warning(msg)
    # final E-step outputs under the returned parameters
    post = weight_posteriors(stats, mu, Sw, Sy)
    covs = post.covs if use_cov else np.zeros_like(post.covs)
    report.per_demo_posteriors = [GaussianState(m, c) for m, c in zip(post.means, covs)]
    return ProMP(mu, Sw, Sy, basis, D), report


def em_train(demos, basis: BasisConfig, D=None, prior: Union[NIWPrior, str, None] = None,
             opts: Optional[TrainOptions] = None):
    """EM for the MAP (default prior) or MLE (``prior="mle"``) ProMP parameters."""
    return _run_em(demos, basis, D, prior, opts, use_cov=True)


def em_train_approx(demos, basis: BasisConfig, D=None, prior: Union[NIWPrior, str, None] = None,
                    opts: Optional[TrainOptions] = None):
    """EM with the E-step collapsed onto the posterior mean of each demo's weights."""
    return _run_em(demos, basis, D, prior, opts, use_cov=False)


def e_step(p: ProMP, demo) -> GaussianState:
    """Posterior over one demo's weights under the current parameters."""
    stats = demo_stats(p.basis, [demo], p.D)
    post = weight_posteriors(stats, p.mu_w, p.Sigma_w, p.Sigma_y)
    return GaussianState(post.means[0], np.array(post.covs[0]))


def least_squares_train(demos, basis: BasisConfig, D=None, lam=0.0):
    """Per-demo ridge fit followed by the empirical mean and covariance."""
    demos = list(demos)
    if not demos:
        raise InputError("at least one demonstration is required")
    if lam < 0:
        raise InputError("ridge parameter must be >= 0")
    D = demos[0].D if D is None else D
    K = basis.K
    stats = demo_stats(basis, demos, D)
    N = stats.N
    W = np.empty((N, K, D))
    A = stats.G + lam * np.eye(K)[None]
    for n in range(N):
        if np.linalg.matrix_rank(A[n]) < K:
            raise NumericalError(f"ridge system for demonstration {n} is singular",
                                 {"demo": n, "samples": int(stats.n[n]), "K": K, "lambda": lam})
        W[n] = np.linalg.solve(A[n], stats.B[n])
    w = _vec(W)
    mu = w.mean(axis=0)
    dev = w - mu
    Sigma_w = _linalg.symmetrize(dev.T @ dev / N)
    Sigma_y = _linalg.symmetrize(residual_scatter(stats, W).sum(axis=0) / stats.n.sum())
    report = TrainReport(iterations=1, converged=True)
    report.per_demo_posteriors = [GaussianState(x, np.zeros((K * D, K * D))) for x in w]
    report.Sigma_mle = Sigma_w
    report.rank = int(np.linalg.matrix_rank(Sigma_w)) if N > 1 else 0
    report.rank_deficient = report.rank < K * D
    report.condition_number = _linalg.condition_number(Sigma_w)
    return ProMP(mu, Sigma_w, Sigma_y, basis, D), report
