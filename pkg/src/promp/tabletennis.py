"""Simulated table-tennis striking with hit-likelihood start-time selection.

A Kalman filter predicts the ball, the racket's task-space distribution is
compared with that prediction to choose when to start moving, and the
primitive is adapted in task space towards the predicted ball. Everything
runs on a simulated clock, so trials are reproducible from their seeds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _linalg
from .adaptation import JointTarget, LaplaceOptions, TaskTarget, condition_point, condition_task
from .basis import BasisConfig, feature_matrix
from .errors import AdaptationError, InputError, NumericalError
from .kinematics import ForwardKinematics, PlanarArm, PlaneEmbedding
from .model import Demonstration, GaussianState, ProMP

GRAVITY = 9.81


@dataclass(frozen=True)
class BallObservation:
    t: float
    pos: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.pos, dtype=float).reshape(-1)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise InputError("ball position must be a finite 3-vector")
        object.__setattr__(self, "pos", pos)


@dataclass(frozen=True)
class BallModel:
    """Filter and prediction constants. Table surface is the plane ``z = table_height``."""

    gravity: float = GRAVITY
    process_noise: float = 0.1      # white-acceleration std, m/s^2
    sigma_obs: float = 0.01         # m
    restitution: float = 0.87
    table_height: float = 0.0
    table_x: tuple = (0.0, 2.74)
    init_vel_std: float = 10.0
    pred_dt: float = 0.002


def _free_flight(mean, cov, h, m: BallModel):
    """Closed-form propagation for an array of horizons ``h`` (no bounce).

    Continuous white acceleration noise of spectral density ``q^2`` composes
    exactly across steps, so one call covers the whole horizon.
    """
    h = np.asarray(h, dtype=float)[:, None]
    q2 = m.process_noise ** 2
    g = np.array([0.0, 0.0, -m.gravity])
    p, v = mean[:3], mean[3:]
    pos = p + v * h + 0.5 * g * h * h
    vel = v + g * h
    Ppp, Ppv, Pvv = cov[:3, :3], cov[:3, 3:], cov[3:, 3:]
    hh = h[:, :, None]
    I = np.eye(3)
    Cpp = Ppp + hh * (Ppv + Ppv.T) + hh * hh * Pvv + q2 * hh ** 3 / 3 * I
    Cpv = Ppv + hh * Pvv + q2 * hh * hh / 2 * I
    Cvv = Pvv + q2 * hh * I
    covs = np.concatenate([np.concatenate([Cpp, Cpv], 2),
                           np.concatenate([np.swapaxes(Cpv, 1, 2), Cvv], 2)], 1)
    return np.hstack([pos, vel]), covs


def _bounce_time(mean, m: BallModel):
    """Time until the mean next lands on the table, or ``inf``."""
    z0 = mean[2] - m.table_height
    vz = mean[5]
    if z0 < 0 or m.gravity <= 0:
        return math.inf
    tau = (vz + math.sqrt(vz * vz + 2 * m.gravity * z0)) / m.gravity
    if tau <= 1e-9 and vz >= 0:
        return math.inf
    x = mean[0] + mean[3] * tau
    return tau if m.table_x[0] <= x <= m.table_x[1] else math.inf


def _propagate(mean, cov, hs, m: BallModel, max_bounces=4):
    """Predicted states at increasing horizons ``hs``, bouncing on the table."""
    hs = np.asarray(hs, dtype=float)
    out_m = np.empty((hs.size, 6))
    out_c = np.empty((hs.size, 6, 6))
    R = np.eye(6)
    R[5, 5] = -m.restitution
    offset, lo = 0.0, 0
    for _ in range(max_bounces + 1):
        tau = _bounce_time(mean, m)
        hi = hs.size if not math.isfinite(tau) else int(np.searchsorted(hs, offset + tau, "right"))
        if hi > lo:
            out_m[lo:hi], out_c[lo:hi] = _free_flight(mean, cov, hs[lo:hi] - offset, m)
        lo = hi
        if lo >= hs.size or not math.isfinite(tau):
            break
        bm, bc = _free_flight(mean, cov, [tau], m)
        mean = R @ bm[0]
        mean[2] = m.table_height + 1e-12
        cov = R @ bc[0] @ R.T
        offset += tau
    if lo < hs.size:
        out_m[lo:], out_c[lo:] = _free_flight(mean, cov, hs[lo:] - offset, m)
    return out_m, _linalg.symmetrize(out_c)


class BallTrajectoryEstimate:
    """Filtered and predicted ball state on a dense time grid."""

    def __init__(self, times, means, covs):
        self.times = np.asarray(times)
        self.means = np.asarray(means)
        self.covs = np.asarray(covs)

    @property
    def t_last(self):
        return float(self.times[-1])

    def query_many(self, t):
        """Position means ``(..., 3)`` and covariances ``(..., 3, 3)`` at times ``t``."""
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, self.times[0], self.times[-1])
        i = np.clip(np.searchsorted(self.times, tc, side="right") - 1, 0, len(self.times) - 2)
        t_a, t_b = self.times[i], self.times[i + 1]
        w = ((tc - t_a) / np.where(t_b > t_a, t_b - t_a, 1.0))[..., None]
        mean = (1 - w) * self.means[i, :3] + w * self.means[i + 1, :3]
        cov = (1 - w[..., None]) * self.covs[i, :3, :3] + w[..., None] * self.covs[i + 1, :3, :3]
        return mean, cov

    def query(self, t) -> GaussianState:
        mean, cov = self.query_many(float(t))
        return GaussianState(mean, cov)

    def velocity(self, t):
        mean = self.means[np.argmin(np.abs(self.times - t))]
        return mean[3:].copy()


def kf_predict(obs: List[BallObservation], horizon: float, model: BallModel = BallModel()):
    """Filter the observations, then predict open loop for ``horizon`` seconds."""
    obs = list(obs)
    if len(obs) < 2:
        raise InputError("ball prediction needs at least two observations")
    ts = np.array([o.t for o in obs])
    if np.any(np.diff(ts) < 0):
        raise InputError("ball observations must be ordered in time")
    if horizon < 0:
        raise InputError("horizon must be non-negative")
    R = model.sigma_obs ** 2 * np.eye(3)
    H = np.hstack([np.eye(3), np.zeros((3, 3))])
    mean = np.concatenate([obs[0].pos, np.zeros(3)])
    cov = np.diag([model.sigma_obs ** 2] * 3 + [model.init_vel_std ** 2] * 3)
    times, means, covs = [obs[0].t], [mean], [cov]
    for o in obs[1:]:
        dt = o.t - times[-1]
        if dt > 0:
            pm, pc = _propagate(mean, cov, [dt], model)
            mean, cov = pm[0], pc[0]
        S = H @ cov @ H.T + R
        Kg = np.linalg.solve(S, H @ cov).T
        mean = mean + Kg @ (o.pos - H @ mean)
        IKH = np.eye(6) - Kg @ H
        cov = _linalg.symmetrize(IKH @ cov @ IKH.T + Kg @ R @ Kg.T)
        if dt > 0:
            times.append(o.t)
            means.append(mean)
            covs.append(cov)
        else:
            means[-1], covs[-1] = mean, cov
    hs = np.arange(1, int(math.ceil(horizon / model.pred_dt)) + 1) * model.pred_dt
    hs = np.minimum(hs, horizon) if hs.size else np.array([1e-9])
    pm, pc = _propagate(mean, cov, hs, model)
    times = np.concatenate([times, times[-1] + hs])
    means = np.concatenate([np.array(means), pm])
    covs = np.concatenate([np.array(covs), pc])
    return BallTrajectoryEstimate(times, means, covs)


def gaussian_overlap(a: GaussianState, b: GaussianState) -> float:
    """``integral N(x; mu_a, S_a) N(x; mu_b, S_b) dx = N(mu_a; mu_b, S_a + S_b)``."""
    if a.dim != b.dim:
        raise InputError("overlap needs equal dimensions")
    return float(_overlap_batch(a.mean, a.cov, b.mean, b.cov))


def _overlap_batch(ma, Sa, mb, Sb):
    S = Sa + Sb
    d = ma - mb
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError("summed covariance is not positive definite") from None
    u = np.linalg.solve(L, d[..., None])[..., 0]
    logdet = 2 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    k = d.shape[-1]
    return np.exp(-0.5 * (np.sum(u * u, axis=-1) + logdet + k * math.log(2 * math.pi)))


@dataclass(frozen=True)
class HitTimePrior:
    """Gaussian prior over the normalised hit phase; ``sigma_z=None`` means uniform."""

    mu_z: float = 0.5
    sigma_z: Optional[float] = 0.1

    def __post_init__(self):
        if self.sigma_z is not None and not self.sigma_z > 0:
            raise InputError("sigma_z must be positive")

    @classmethod
    def uniform(cls):
        return cls(0.5, None)

    def density(self, z):
        z = np.asarray(z, dtype=float)
        if self.sigma_z is None:
            return np.ones_like(z)
        s = self.sigma_z
        return np.exp(-0.5 * ((z - self.mu_z) / s) ** 2) / (s * math.sqrt(2 * math.pi))


class RacketGrid:
    """Task-space racket distributions on a fixed phase grid (independent of the ball)."""

    def __init__(self, p: ProMP, fk: ForwardKinematics, n_grid=64):
        if n_grid < 8:
            raise InputError("n_grid must be at least 8")
        self.z = np.linspace(0.0, 1.0, n_grid)
        F = feature_matrix(p.basis, self.z)
        Y = F @ p.mu_w.reshape(p.D, p.K).T
        means, covs = [], []
        for i in range(n_grid):
            J = np.asarray(fk.jacobian(Y[i]))
            G = np.einsum("xd,k->xdk", J, F[i]).reshape(J.shape[0], -1)
            means.append(fk.evaluate(Y[i]))
            covs.append(_linalg.symmetrize(G @ p.Sigma_w @ G.T))
        self.means = np.array(means)
        self.covs = np.array(covs)
        w = np.full(n_grid, self.z[1] - self.z[0])
        w[[0, -1]] *= 0.5
        self.weights = w

    def overlaps(self, ball: BallTrajectoryEstimate, t0s, T):
        """Overlap densities, shape ``(len(t0s), n_grid)``."""
        t0s = np.atleast_1d(np.asarray(t0s, dtype=float))
        bm, bc = ball.query_many(t0s[:, None] + self.z[None, :] * T)
        return _overlap_batch(self.means[None], self.covs[None], bm, bc)


def _likelihoods(grid: RacketGrid, ball, t0s, T, prior: HitTimePrior):
    ov = grid.overlaps(ball, t0s, T)
    return ov @ (grid.weights * prior.density(grid.z)), ov


def hit_likelihood(p: ProMP, fk, ball: BallTrajectoryEstimate, t0, T,
                   prior: HitTimePrior = HitTimePrior(), n_grid=64) -> float:
    """Hit-phase-marginalised overlap of racket and ball distributions."""
    if not T > 0:
        raise InputError("duration T must be positive")
    return float(_likelihoods(RacketGrid(p, fk, n_grid), ball, [t0], T, prior)[0][0])


def optimal_start_time(p: ProMP, fk, ball, T, prior: HitTimePrior = HitTimePrior(),
                       t0_range=(0.0, 1.0), n_grid=64, n_t0=101, grid: RacketGrid = None):
    """Grid search for the start time with the largest hit likelihood (earliest on ties)."""
    t0s = np.atleast_1d(np.asarray(t0_range, dtype=float))
    if t0s.size == 0:
        raise InputError("empty start-time range")
    if t0s.size == 2 and n_t0:
        t0s = np.linspace(t0s[0], t0s[1], n_t0)
    grid = grid or RacketGrid(p, fk, n_grid)
    H, _ = _likelihoods(grid, ball, t0s, T, prior)
    i = int(np.argmax(H))
    return float(t0s[i]), float(H[i])


def no_move_threshold(fk, factor=1e-6):
    """``factor`` times a Gaussian density whose scale is the arm's reach."""
    L = getattr(fk, "reach", None)
    if L is None:
        L = getattr(getattr(fk, "inner", None), "reach", 1.0)
    return factor / (2 * math.pi * L * L) ** 1.5


# ---------------------------------------------------------------------------
# Ball simulator


@dataclass
class BallSimulator:
    """Ground-truth ball with quadratic air drag and a table bounce.

    The filter's model has no drag, so long-horizon predictions are biased
    and later observations matter.
    """

    p0: np.ndarray
    v0: np.ndarray
    t_start: float = 0.0
    duration: float = 1.6
    drag: float = 0.03
    model: BallModel = BallModel()
    obs_rate: float = 60.0
    seed: int = 0
    dt: float = 0.0005

    def __post_init__(self):
        m = self.model
        n = int(round(self.duration / self.dt)) + 1
        self.times = self.t_start + np.arange(n) * self.dt
        pos = np.empty((n, 3))
        p = np.asarray(self.p0, dtype=float).copy()
        v = np.asarray(self.v0, dtype=float).copy()
        g = np.array([0.0, 0.0, -m.gravity])
        for k in range(n):
            pos[k] = p
            a = g - self.drag * np.linalg.norm(v) * v
            v_new = v + self.dt * a
            p_new = p + 0.5 * self.dt * (v + v_new)
            if (p[2] >= m.table_height > p_new[2] and m.table_x[0] <= p_new[0] <= m.table_x[1]):
                p_new[2] = 2 * m.table_height - p_new[2]
                v_new[2] = -m.restitution * v_new[2]
            p, v = p_new, v_new
        self.positions = pos
        rng = np.random.default_rng(self.seed)
        t_obs = np.arange(self.t_start, self.times[-1] + 1e-12, 1.0 / self.obs_rate)
        clean = self.position(t_obs)
        noisy = clean + m.sigma_obs * rng.standard_normal(clean.shape)
        self.observations = [BallObservation(t, x) for t, x in zip(t_obs, noisy)]

    def position(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.times, self.positions[:, j]) for j in range(3)], -1)

    @classmethod
    def through(cls, point, t_cross, v_cross, **kw):
        """Drag-free ball that passes ``point`` at ``t_cross`` with velocity ``v_cross``."""
        kw.setdefault("drag", 0.0)
        model = kw.get("model", BallModel())
        t_start = kw.pop("t_start", 0.0)
        h = t_cross - t_start
        g = np.array([0.0, 0.0, -model.gravity])
        v0 = np.asarray(v_cross, dtype=float) - g * h
        p0 = np.asarray(point, dtype=float) - v0 * h - 0.5 * g * h * h
        return cls(p0, v0, t_start=t_start, **kw)


# ---------------------------------------------------------------------------
# Trial loop


@dataclass
class TrialOptions:
    obs_rate: float = 60.0
    hit_radius: float = 0.08
    replan: bool = True
    single_shot_obs: int = 8
    min_obs: int = 4
    n_grid: int = 64
    n_t0: int = 121
    max_wait: float = 1.2
    hit_prior: HitTimePrior = HitTimePrior()
    threshold_factor: float = 1e-6
    ball_model: BallModel = BallModel()
    laplace: LaplaceOptions = field(default_factory=lambda: LaplaceOptions(max_iter=50))


@dataclass
class TrialOutcome:
    hit: bool
    min_distance: float
    replans: int
    start_time: float
    no_move: bool = False
    likelihood: float = 0.0


def _plan(p, fk, grid, ball, T, opts: TrialOptions, now, threshold):
    t0s = np.linspace(now, now + opts.max_wait, opts.n_t0)
    H, ov = _likelihoods(grid, ball, t0s, T, opts.hit_prior)
    i = int(np.argmax(H))
    if H[i] < threshold:
        return None, float(H[i])
    t0 = float(t0s[i])
    z_h = float(grid.z[int(np.argmax(ov[i] * opts.hit_prior.density(grid.z)))])
    target = ball.query(t0 + z_h * T)
    adapted, _ = condition_task(p, TaskTarget(z_h, target), fk, opts.laplace)
    return (t0, adapted), float(H[i])


def play_trial(p: ProMP, fk: ForwardKinematics, sim: BallSimulator, T: float,
               q_rest=None, opts: TrialOptions = None) -> TrialOutcome:
    """Observe, predict, pick a start time and adapt until it is time to move."""
    opts = opts or TrialOptions()
    grid = RacketGrid(p, fk, opts.n_grid)
    threshold = no_move_threshold(fk, opts.threshold_factor)
    obs = sim.observations
    plan, H, replans = None, 0.0, 0
    for k in range(len(obs)):
        now = obs[k].t
        if plan is not None and plan[0] <= now:
            break
        n_seen = k + 1
        if n_seen < opts.min_obs:
            continue
        if not opts.replan and (n_seen != opts.single_shot_obs):
            continue
        horizon = opts.max_wait + T
        ball = kf_predict(obs[:n_seen], horizon, opts.ball_model)
        try:
            new_plan, H = _plan(p, fk, grid, ball, T, opts, now, threshold)
        except (AdaptationError, NumericalError):
            new_plan = None
        if new_plan is not None:
            plan = new_plan
            replans += 1
        elif opts.replan:
            plan = None
    if plan is None:
        return TrialOutcome(False, float("inf"), replans, float("nan"), True, H)
    t0, adapted = plan
    if q_rest is not None:
        adapted = condition_point(adapted, JointTarget(0.0, value=np.asarray(q_rest, float)))
    z = np.linspace(0.0, 1.0, 400)
    Y = feature_matrix(adapted.basis, z) @ adapted.mu_w.reshape(adapted.D, adapted.K).T
    racket = np.array([fk.evaluate(y) for y in Y])
    ball_true = sim.position(t0 + z * T)
    d = float(np.min(np.linalg.norm(racket - ball_true, axis=1)))
    return TrialOutcome(d < opts.hit_radius, d, replans, t0, False, H)


# ---------------------------------------------------------------------------
# A default desk-scale scenario


@dataclass
class Scenario:
    promp: ProMP
    fk: ForwardKinematics
    T: float
    q_rest: np.ndarray
    hit_point: np.ndarray
    demos: list

    def ball(self, seed, spread=1.0, offset=(0.0, 0.0, 0.0), model: BallModel = BallModel(),
             obs_rate=60.0):
        """A served ball that bounces once and crosses the arm's plane near ``hit_point``."""
        rng = np.random.default_rng(seed)
        p0 = np.array([2.6, 0.0, 0.35]) + np.asarray(offset, float)
        p0 = p0 + spread * rng.normal(0.0, [0.03, 0.08, 0.03])
        v0 = np.array([-5.0, 0.0, 0.4]) + spread * rng.normal(0.0, [0.25, 0.12, 0.2])
        return BallSimulator(p0, v0, model=model, obs_rate=obs_rate, seed=seed)


def _strike_demos(n, seed, arm_offsets, T_range=(0.4, 0.6), rate=250.0):
    rng = np.random.default_rng(seed)
    q_a = np.array([-0.4, 1.2, 0.9])
    q_b = np.array([0.9, -0.5, -0.4])
    demos = []
    for _ in range(n):
        a = q_a + rng.normal(0, 0.1, 3)
        b = q_b + rng.normal(0, 0.1, 3)
        mid = rng.normal(0, 0.25, 3) + arm_offsets
        T = rng.uniform(*T_range)
        t = np.arange(0.0, T + 1e-12, 1.0 / rate)
        t[-1] = T
        s = t / T
        ease = 0.5 - 0.5 * np.cos(np.pi * s)
        bump = np.sin(np.pi * s)
        q = a + np.outer(ease, b - a) + np.outer(bump, mid)
        q += rng.normal(0, 1e-3, q.shape)
        demos.append(Demonstration(t, q))
    return demos


def default_scenario(seed=0, n_demos=30) -> Scenario:
    """Three-link arm in the vertical plane ``x = -0.2`` trained on synthetic strikes."""
    from .training import em_train

    arm = PlaneEmbedding(PlanarArm([0.35, 0.3, 0.25]), origin=(-0.2, -0.71, -0.21),
                         axes=((0.0, 1.0, 0.0), (0.0, 0.0, 1.0)))
    demos = _strike_demos(n_demos, seed, np.zeros(3))
    p, _ = em_train(demos, BasisConfig.default(3, 1), 3)
    T = float(np.mean([d.T for d in demos]))
    q_rest = p.Phi(0.0) @ p.mu_w
    y_mid = p.Phi(0.5) @ p.mu_w
    return Scenario(p, arm, T, q_rest, arm.evaluate(y_mid), demos)
