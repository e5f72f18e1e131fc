"""The trajectory distribution: Gaussian weights pushed through the basis."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _linalg
from .basis import BasisConfig, block_feature_matrix, feature_matrix
from .errors import DimensionError, InputError, NumericalError, TimeOrderError

FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionError(f"mean {mean.shape} and cov {cov.shape} do not match")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size

    @property
    def std(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass(frozen=True)
class Demonstration:
    """One recorded trajectory. ``joints`` has one row per time stamp."""

    times: np.ndarray
    joints: np.ndarray
    t0: float = None
    T: float = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        joints = np.asarray(self.joints, dtype=float)
        if joints.ndim == 1:
            joints = joints[:, None]
        if joints.ndim != 2 or joints.shape[0] != times.size:
            raise DimensionError(
                f"{times.size} time stamps but joint array has shape {joints.shape}")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(joints))):
            raise InputError("demonstration contains non-finite values")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise TimeOrderError("time stamps must be strictly increasing")
        t0 = self.t0 if self.t0 is not None else (times[0] if times.size else 0.0)
        T = self.T if self.T is not None else (times[-1] - times[0] if times.size > 1 else 1.0)
        if not T > 0:
            raise InputError("demonstration duration T must be positive")
        z = (times - t0) / T
        eps = 1e-9
        if z.size and (z[0] < -eps or z[-1] > 1 + eps):
            raise InputError("phase (t - t0)/T leaves [0, 1] for some samples")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "joints", _frozen(joints))
        object.__setattr__(self, "t0", float(t0))
        object.__setattr__(self, "T", float(T))

    @classmethod
    def from_phases(cls, z, joints):
        return cls(np.asarray(z, dtype=float), joints, t0=0.0, T=1.0)

    @property
    def D(self):
        return self.joints.shape[1]

    @property
    def n_samples(self):
        return self.times.size

    @property
    def phases(self):
        return (self.times - self.t0) / self.T


@dataclass(frozen=True)
class ProMP:
    """Weight mean ``mu_w`` (KD, DoF-major), weight covariance and noise covariance."""

    mu_w: np.ndarray
    Sigma_w: np.ndarray
    Sigma_y: np.ndarray
    basis: BasisConfig
    D: int

    def __post_init__(self):
        K, D = self.basis.K, int(self.D)
        KD = K * D
        mu = np.asarray(self.mu_w, dtype=float).reshape(-1)
        Sw = np.asarray(self.Sigma_w, dtype=float)
        Sy = np.atleast_2d(np.asarray(self.Sigma_y, dtype=float))
        if mu.size != KD or Sw.shape != (KD, KD) or Sy.shape != (D, D):
            raise DimensionError(
                f"expected mu_w ({KD},), Sigma_w ({KD},{KD}), Sigma_y ({D},{D}); "
                f"got {mu.shape}, {Sw.shape}, {Sy.shape}")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "mu_w", _frozen(mu))
        object.__setattr__(self, "Sigma_w", _frozen(Sw))
        object.__setattr__(self, "Sigma_y", _frozen(Sy))

    @property
    def K(self):
        return self.basis.K

    @property
    def KD(self):
        return self.basis.K * self.D

    def replace(self, **kw):
        fields = dict(mu_w=self.mu_w, Sigma_w=self.Sigma_w, Sigma_y=self.Sigma_y,
                      basis=self.basis, D=self.D)
        fields.update(kw)
        return ProMP(**fields)

    def Phi(self, z, order=0):
        return block_feature_matrix(self.basis, z, self.D, order)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "D": self.D,
            "basis": self.basis.to_dict(),
            "mu_w": self.mu_w.tolist(),
            "Sigma_w": self.Sigma_w.reshape(-1).tolist(),
            "Sigma_y": self.Sigma_y.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        version = d.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise InputError(f"unsupported model format_version {version}")
        try:
            D = int(d["D"])
            basis = BasisConfig.from_dict(d["basis"])
            KD = basis.K * D
            return cls(np.asarray(d["mu_w"], dtype=float),
                       np.asarray(d["Sigma_w"], dtype=float).reshape(KD, KD),
                       np.asarray(d["Sigma_y"], dtype=float).reshape(D, D), basis, D)
        except KeyError as exc:
            raise InputError(f"model document lacks field {exc}") from None
        except ValueError as exc:
            raise DimensionError(f"malformed model document: {exc}") from None


def marginal_at(p: ProMP, z, order=0):
    """Distribution of the joint state (or its phase derivative) at phase ``z``.

    Position marginals include the observation noise; derivative marginals
    do not, since the noise model only covers positions.
    """
    Phi = p.Phi(z, order)
    mean = Phi @ p.mu_w
    cov = Phi @ p.Sigma_w @ Phi.T
    if order == 0:
        cov = cov + p.Sigma_y
    return GaussianState(mean, _linalg.symmetrize(cov))


def marginal_trajectory(p: ProMP, z, order=0):
    """Vectorised per-phase means and standard deviations, shape ``(len(z), D)``."""
    F = feature_matrix(p.basis, z, order)
    W = p.mu_w.reshape(p.D, p.K)
    mean = F @ W.T
    S4 = p.Sigma_w.reshape(p.D, p.K, p.D, p.K)
    var = np.einsum("tk,dkdl,tl->td", F, S4, F)
    if order == 0:
        var = var + np.diag(p.Sigma_y)[None, :]
    return mean, np.sqrt(np.clip(var, 0.0, None))


def _factor(S, name):
    # eigen factor rather than Cholesky: exact for singular covariances
    return _linalg.psd_factor(S, name)


def sample_weights(p: ProMP, rng_seed=None, size=None):
    """Draw weight vectors ``w ~ N(mu_w, Sigma_w)``; ``size`` adds a leading axis."""
    rng = np.random.default_rng(rng_seed)
    A = _factor(p.Sigma_w, "Sigma_w")
    n = 1 if size is None else int(size)
    w = p.mu_w + rng.standard_normal((n, A.shape[1])) @ A.T
    return w[0] if size is None else w


def sample_trajectory(p: ProMP, phases, rng_seed=None):
    """One trajectory sample at the given phases, including observation noise."""
    rng = np.random.default_rng(rng_seed)
    A = _factor(p.Sigma_w, "Sigma_w")
    w = p.mu_w + A @ rng.standard_normal(A.shape[1])
    F = feature_matrix(p.basis, phases)
    Y = F @ w.reshape(p.D, p.K).T
    L = _factor(p.Sigma_y, "Sigma_y")
    return Y + rng.standard_normal((Y.shape[0], L.shape[1])) @ L.T


# ---------------------------------------------------------------------------
# Sufficient statistics and batched weight posteriors. Everything the E-step
# and the marginal likelihood need reduces to per-demo Gram matrices, so the
# cost per demo is linear in its length.


@dataclass
class DemoStats:
    G: np.ndarray       # (N, K, K)  sum_t phi phi^T
    B: np.ndarray       # (N, K, D)  sum_t phi y^T
    Q: np.ndarray       # (N, D, D)  sum_t y y^T
    n: np.ndarray       # (N,)       samples per demo
    shared: bool        # all G identical (common phase grid)
    F: list = None      # per-demo feature matrices, kept for residuals
    Y: list = None      # per-demo samples

    @property
    def N(self):
        return self.G.shape[0]


def demo_stats(basis: BasisConfig, demos, D=None) -> DemoStats:
    demos = list(demos)
    if not demos:
        raise InputError("at least one demonstration is required")
    D = demos[0].D if D is None else D
    K = basis.K
    N = len(demos)
    G = np.empty((N, K, K))
    B = np.empty((N, K, D))
    Q = np.empty((N, D, D))
    n = np.empty(N)
    Fs, Ys = [], []
    for i, d in enumerate(demos):
        if d.D != D:
            raise DimensionError(f"demonstration {i} has D={d.D}, expected {D}")
        F = feature_matrix(basis, d.phases) if d.n_samples else np.zeros((0, K))
        G[i] = F.T @ F
        B[i] = F.T @ d.joints
        Q[i] = d.joints.T @ d.joints
        n[i] = d.n_samples
        Fs.append(F)
        Ys.append(d.joints)
    shared = bool(np.all(G == G[0]))
    if shared and all(np.array_equal(F, Fs[0]) for F in Fs):
        Fs, Ys = np.stack(Fs), np.stack(Ys)
    return DemoStats(G, B, Q, n, shared, Fs, Ys)


def _vec(M):
    """(N, K, D) per-DoF columns -> (N, KD) DoF-major vectors."""
    return np.swapaxes(M, -1, -2).reshape(M.shape[0], -1)


def _unvec(w, K, D):
    """(N, KD) -> (N, K, D)."""
    return np.swapaxes(w.reshape(w.shape[0], D, K), -1, -2)


def _kron_batch(Ry, G):
    N, K, _ = G.shape
    D = Ry.shape[0]
    return np.einsum("de,nkl->ndkel", Ry, G).reshape(N, K * D, K * D)


@dataclass
class Posteriors:
    means: np.ndarray    # (N, KD)
    covs: np.ndarray     # (N, KD, KD), possibly a broadcast view
    logdet_M: np.ndarray  # (N,) log|I + A^T H A| (covariance route only)
    g: np.ndarray        # (N, KD) data gradient at the prior mean
    prior_quad: np.ndarray = None  # (N,) (m - mu)^T Sigma_w^+ (m - mu)


def weight_posteriors(stats: DemoStats, mu, Sigma_w, Sigma_y, precision=None,
                      diagnostics=None) -> Posteriors:
    """Gaussian posteriors over each demo's weights.

    The covariance route never inverts ``Sigma_w`` (it may be singular);
    pass ``precision`` instead to condition on a prior given by its inverse,
    which may itself be singular.
    """
    K = stats.G.shape[1]
    D = stats.B.shape[2]
    Ry = _linalg.inv_spd(np.asarray(Sigma_y), "Sigma_y")
    mu = np.asarray(mu, dtype=float)
    W0 = mu.reshape(D, K).T
    g = _vec((stats.B - stats.G @ W0) @ Ry)
    G = stats.G[:1] if stats.shared else stats.G
    H = _kron_batch(Ry, G)

    if precision is not None:
        Lam = precision[None] + H
        try:
            S = np.linalg.inv(Lam)
        except np.linalg.LinAlgError:
            raise NumericalError("accumulated weight precision is singular",
                                 {"min_eig": float(np.min(np.linalg.eigvalsh(_linalg.symmetrize(Lam))))}) from None
        if not np.all(np.isfinite(S)):
            raise NumericalError("accumulated weight precision is singular")
        S = _linalg.symmetrize(S)
        means = mu[None] + np.einsum("nij,nj->ni", np.broadcast_to(S, (stats.N,) + S.shape[1:]), g)
        covs = np.broadcast_to(S, (stats.N,) + S.shape[1:])
        return Posteriors(means, covs, np.full(stats.N, np.nan), g)

    A = _linalg.psd_factor(Sigma_w, "Sigma_w")
    r = A.shape[1]
    if r:
        M = np.eye(r)[None] + (A.T[None] @ H) @ A[None]
        L = _linalg.cholesky(_linalg.symmetrize(M), "posterior system", diagnostics)
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
        Linv_At = np.linalg.solve(L, np.broadcast_to(A.T, L.shape[:1] + A.T.shape))
        S = np.swapaxes(Linv_At, -1, -2) @ Linv_At
        if stats.shared:
            L = np.broadcast_to(L, (stats.N,) + L.shape[1:])
        # u = M^{-1} A^T g, so m - mu = A u and the prior quadratic is |u|^2
        Atg = g @ A
        u = np.linalg.solve(np.swapaxes(L, -1, -2), np.linalg.solve(L, Atg[..., None]))[..., 0]
        means = mu[None] + u @ A.T
        prior_quad = np.sum(u * u, axis=1)
    else:
        logdet = np.zeros(H.shape[0])
        S = np.zeros(H.shape)
        means = np.broadcast_to(mu, g.shape).copy()
        prior_quad = np.zeros(stats.N)
    if stats.shared:
        S = np.broadcast_to(S, (stats.N,) + S.shape[1:])
        logdet = np.broadcast_to(logdet, (stats.N,))
    return Posteriors(means, S, np.asarray(logdet, dtype=float), g, prior_quad)


def residual_scatter(stats: DemoStats, W):
    """Per-demo ``sum_t (y_t - Phi_t w)(y_t - Phi_t w)^T`` for weights ``W`` (N, K, D).

    Residuals are formed from the samples themselves; expanding through the
    Gram matrices would cancel most significant digits for good fits.
    """
    if stats.F is None:
        BW = np.swapaxes(stats.B, -1, -2) @ W
        return stats.Q - BW - np.swapaxes(BW, -1, -2) + np.swapaxes(W, -1, -2) @ stats.G @ W
    if isinstance(stats.F, np.ndarray):
        R = stats.Y - stats.F @ W
        return np.swapaxes(R, -1, -2) @ R
    out = np.empty((len(stats.F),) + (W.shape[-1],) * 2)
    for i, (F, Y) in enumerate(zip(stats.F, stats.Y)):
        R = Y - F @ W[i]
        out[i] = R.T @ R
    return out


def loglik_terms(stats: DemoStats, mu, Sigma_w, Sigma_y, post: Posteriors = None):
    """Per-demo log marginal likelihoods, shape ``(N,)``."""
    K = stats.G.shape[1]
    D = stats.B.shape[2]
    if post is None:
        post = weight_posteriors(stats, mu, Sigma_w, Sigma_y)
    Ry = _linalg.inv_spd(np.asarray(Sigma_y), "Sigma_y")
    logdet_y = _linalg.logdet_spd(np.asarray(Sigma_y), "Sigma_y")
    # r^T (R + Phi Sigma Phi^T)^{-1} r as the minimised penalised residual at
    # the posterior mean; avoids cancelling two large terms
    R = residual_scatter(stats, _unvec(post.means, K, D))
    quad = np.einsum("de,ned->n", Ry, R) + post.prior_quad
    return -0.5 * (stats.n * D * LOG_2PI + stats.n * logdet_y + post.logdet_M + quad)


def log_marginal_likelihood(p: ProMP, demos) -> float:
    """``sum_n log int N(w; mu_w, Sigma_w) prod_t N(y_nt; Phi_nt w, Sigma_y) dw``."""
    stats = demo_stats(p.basis, demos, p.D)
    return float(np.sum(loglik_terms(stats, p.mu_w, p.Sigma_w, p.Sigma_y)))
