"""Synthetic studies: covariance conditioning, parameter convergence, EM
likelihood curves, operator latency and bootstrap rate summaries.

Every study is a pure function of its config and seed. Sub-seeds are
derived from ``(seed, point index)`` so points are independent.
"""
from __future__ import annotations

import csv
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import _linalg
from .adaptation import JointTarget, TaskTarget, condition_point, condition_task, task_distribution
from .basis import BasisConfig
from .errors import InputError
from .kinematics import PlanarArm
from .model import Demonstration, GaussianState, ProMP, sample_trajectory, sample_weights
from .training import (MLE, NIWPrior, TrainOptions, blockdiag, em_train, em_train_approx,
                       least_squares_train)


def condition_number(S) -> float:
    """``s_max / s_min`` of a symmetric matrix; ``inf`` when numerically singular."""
    return _linalg.condition_number(S)


def log_condition_number(S) -> float:
    k = condition_number(S)
    return float(np.log(k)) if np.isfinite(k) else float("inf")


def _subseed(seed, *idx):
    return np.random.SeedSequence([int(seed), *map(int, idx)])


# ---------------------------------------------------------------------------
# Generators


@dataclass
class GeneratorConfig:
    """Random ground-truth ProMP with a low-rank-plus-isotropic weight covariance."""

    n_rbf: int = 3
    poly_degree: int = 1
    D: int = 7
    rank: int = 7
    isotropic_std: float = 0.1
    n_steps: int = 100
    noise_std: float = 1e-3

    @property
    def basis(self):
        return BasisConfig.default(self.n_rbf, self.poly_degree)


def generating_promp(cfg: GeneratorConfig, seed) -> ProMP:
    rng = np.random.default_rng(_subseed(seed, 0))
    KD = cfg.basis.K * cfg.D
    C = rng.standard_normal((KD, cfg.rank)) / np.sqrt(cfg.rank)
    Sw = C @ C.T + cfg.isotropic_std ** 2 * np.eye(KD)
    return ProMP(rng.standard_normal(KD), Sw, cfg.noise_std ** 2 * np.eye(cfg.D), cfg.basis, cfg.D)


def correlated_promp(K_rbf=3, poly_degree=1, seed=0, noise_std=1e-3) -> ProMP:
    """Four DoFs: two independent, then their sum and difference."""
    basis = BasisConfig.default(K_rbf, poly_degree)
    K = basis.K
    rng = np.random.default_rng(_subseed(seed, 1))
    A = rng.standard_normal((2 * K, 2 * K)) / np.sqrt(2 * K)
    S_ind = A @ A.T + 0.05 * np.eye(2 * K)
    I = np.eye(K)
    Tm = np.block([[I, 0 * I], [0 * I, I], [I, I], [I, -I]])
    m_ind = rng.standard_normal(2 * K)
    return ProMP(Tm @ m_ind, Tm @ S_ind @ Tm.T, noise_std ** 2 * np.eye(4), basis, 4)


def synthetic_demos(p: ProMP, N, n_steps=100, seed=0) -> List[Demonstration]:
    z = np.linspace(0.0, 1.0, n_steps)
    return [Demonstration.from_phases(z, sample_trajectory(p, z, _subseed(seed, 2, n)))
            for n in range(N)]


def missing_data_demos(p: ProMP, N, n_steps=100, noise_std=0.05, gap_fraction=0.4,
                       dropout=0.2, seed=0) -> List[Demonstration]:
    """Noisy demos with one missing window and random dropped samples each."""
    rng = np.random.default_rng(_subseed(seed, 3))
    z = np.linspace(0.0, 1.0, n_steps)
    noisy = p.replace(Sigma_y=noise_std ** 2 * np.eye(p.D))
    demos = []
    for n in range(N):
        Y = sample_trajectory(noisy, z, _subseed(seed, 4, n))
        keep = rng.random(n_steps) > dropout
        w = int(gap_fraction * n_steps)
        a = rng.integers(0, n_steps - w)
        keep[a:a + w] = False
        keep[[0, -1]] = True
        idx = np.flatnonzero(keep)
        demos.append(Demonstration(z[idx], Y[idx], t0=0.0, T=1.0))
    return demos


# ---------------------------------------------------------------------------
# Results


@dataclass
class StudyResult:
    name: str
    records: List[Dict] = field(default_factory=list)
    config: Dict = field(default_factory=dict)
    seed: int = 0

    def column(self, key):
        return np.array([r[key] for r in self.records])

    def where(self, **kw):
        return [r for r in self.records if all(r.get(k) == v for k, v in kw.items())]

    def to_csv(self, path, plot_data=False):
        write_csv(self, path, plot_data)


def write_csv(result: StudyResult, path, plot_data=False):
    """Header row of metric names, one row per record.

    With ``plot_data`` the output is whitespace-separated with a ``#`` header,
    which gnuplot reads directly.
    """
    keys = []
    for r in result.records:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        if plot_data:
            fh.write("# " + " ".join(keys) + "\n")
            for r in result.records:
                fh.write(" ".join(str(r.get(k, "nan")) for k in keys) + "\n")
        else:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(result.records)


def moving_median(x, width=5):
    x = np.asarray(x, dtype=float)
    h = width // 2
    return np.array([np.median(x[max(0, i - h):i + h + 1]) for i in range(x.size)])


# ---------------------------------------------------------------------------
# Studies


@dataclass
class CondnumConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    N_values: Sequence[int] = tuple(range(1, 101))
    lambdas: Sequence[float] = (0.0, 1e-6, 1e-3)
    trainers: Sequence[str] = ("map", "mle", "ls")
    tol: float = 1e-6
    max_iter: int = 200


def condnum_study(cfg: CondnumConfig = CondnumConfig(), seed=0) -> StudyResult:
    """log condition number of the learned weight covariance against N."""
    g = cfg.generator
    truth = generating_promp(g, seed)
    demos = synthetic_demos(truth, max(cfg.N_values), g.n_steps, seed)
    opts = TrainOptions(tol=cfg.tol, max_iter=cfg.max_iter)
    res = StudyResult("condnum", config=_snapshot(cfg), seed=seed)
    for N in cfg.N_values:
        rec = {"N": N}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if "map" in cfg.trainers:
                p, _ = em_train(demos[:N], g.basis, g.D, NIWPrior(), opts)
                rec["log_kappa_map"] = log_condition_number(p.Sigma_w)
            if "mle" in cfg.trainers:
                p, _ = em_train(demos[:N], g.basis, g.D, MLE, opts)
                rec["log_kappa_mle"] = log_condition_number(p.Sigma_w)
        if "ls" in cfg.trainers:
            for lam in cfg.lambdas:
                p, rep = least_squares_train(demos[:N], g.basis, g.D, lam)
                rec[f"log_kappa_ls_{lam:g}"] = log_condition_number(p.Sigma_w)
        res.records.append(rec)
    return res


def map_mle_gap(truth: Optional[ProMP] = None, N_values=(50, 100, 200, 500), seed=0,
                n_steps=100, opts: TrainOptions = None) -> StudyResult:
    """Relative Frobenius distance between MAP and MLE weight covariances.

    The default ground truth is the correlated four-DoF model. ``cross_share``
    records how much of the MLE covariance lies off the per-DoF blocks, which
    bounds the gap through the prior weight ``N0 / (N + N0)``.
    """
    truth = correlated_promp(seed=seed) if truth is None else truth
    demos = synthetic_demos(truth, max(N_values), n_steps, seed)
    res = StudyResult("map_mle_gap", config={"KD": truth.KD, "D": truth.D,
                                             "N_values": list(N_values)}, seed=seed)
    for N in N_values:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pm, _ = em_train(demos[:N], truth.basis, truth.D, NIWPrior(), opts)
            pl, _ = em_train(demos[:N], truth.basis, truth.D, MLE, opts)
        ref = np.linalg.norm(pl.Sigma_w)
        gap = np.linalg.norm(pm.Sigma_w - pl.Sigma_w) / ref
        share = np.linalg.norm(_offblock(pl.Sigma_w, truth.D)) / ref
        res.records.append({"N": N, "rel_gap": float(gap), "cross_share": float(share)})
    return res


@dataclass
class ConvergenceConfig:
    N_values: Sequence[int] = tuple(range(1, 31)) + (40, 50, 60, 80, 100, 150, 200)
    repeats: int = 10
    n_steps: int = 100
    noise_std: float = 1e-3


def _offblock(S, D):
    return S - blockdiag(S, D)


def convergence_study(cfg: ConvergenceConfig = ConvergenceConfig(), seed=0) -> StudyResult:
    """MAP estimation error of the correlated four-DoF ProMP against N.

    Errors are averaged over ``repeats`` independent datasets and divided by
    their value at the smallest N.
    """
    truth = correlated_promp(seed=seed, noise_std=cfg.noise_std)
    D = truth.D
    errs = np.zeros((len(cfg.N_values), 3))
    Nmax = max(cfg.N_values)
    for r in range(cfg.repeats):
        demos = synthetic_demos(truth, Nmax, cfg.n_steps, _subseed(seed, 5, r).generate_state(1)[0])
        for i, N in enumerate(cfg.N_values):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                p, _ = em_train(demos[:N], truth.basis, D, NIWPrior())
            errs[i] += [np.linalg.norm(p.mu_w - truth.mu_w),
                        np.linalg.norm(blockdiag(p.Sigma_w - truth.Sigma_w, D)),
                        np.linalg.norm(_offblock(p.Sigma_w - truth.Sigma_w, D))]
    errs /= cfg.repeats
    norm = errs / errs[0]
    res = StudyResult("convergence", config=_snapshot(cfg), seed=seed)
    for i, N in enumerate(cfg.N_values):
        res.records.append({"N": N, "err_mu": norm[i, 0], "err_blockdiag": norm[i, 1],
                            "err_offblock": norm[i, 2], "raw_mu": errs[i, 0],
                            "raw_blockdiag": errs[i, 1], "raw_offblock": errs[i, 2]})
    return res


@dataclass
class EMCurveConfig:
    n_rbf: int = 6
    D: int = 3
    N: int = 80
    n_steps: int = 100
    noise_std: float = 0.05
    gap_fraction: float = 0.4
    dropout: float = 0.2
    iterations: int = 40


def em_curve_study(cfg: EMCurveConfig = EMCurveConfig(), seed=0) -> StudyResult:
    """Per-iteration log likelihood of exact and point-estimate EM (MLE objective)."""
    g = GeneratorConfig(n_rbf=cfg.n_rbf, D=cfg.D, rank=cfg.D * 2, n_steps=cfg.n_steps)
    truth = generating_promp(g, seed)
    demos = missing_data_demos(truth, cfg.N, cfg.n_steps, cfg.noise_std, cfg.gap_fraction,
                               cfg.dropout, seed)
    opts = TrainOptions(tol=0.0, max_iter=cfg.iterations, min_iter=cfg.iterations)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        _, r1 = em_train(demos, g.basis, g.D, MLE, opts)
        _, r2 = em_train_approx(demos, g.basis, g.D, MLE, opts)
    res = StudyResult("emcurve", config=_snapshot(cfg), seed=seed)
    for i in range(max(len(r1.loglik_trace), len(r2.loglik_trace))):
        res.records.append({
            "iteration": i,
            "loglik_exact": r1.loglik_trace[i] if i < len(r1.loglik_trace) else float("nan"),
            "loglik_approx": r2.loglik_trace[i] if i < len(r2.loglik_trace) else float("nan"),
        })
    return res


def _random_promp(K, D, rng):
    basis = BasisConfig.default(max(K - 2, 0), 1) if K >= 3 else BasisConfig((), 1.0, K - 1)
    KD = K * D
    A = rng.standard_normal((KD, KD)) / np.sqrt(KD)
    return ProMP(0.3 * rng.standard_normal(KD), A @ A.T + 1e-2 * np.eye(KD),
                 1e-4 * np.eye(D), basis, D)


def latency_bench(sizes=((5, 7), (10, 7), (20, 7), (30, 7), (40, 7), (50, 7)), reps=1000,
                  seed=0, task_reps=None) -> StudyResult:
    """Wall-clock cost of joint-space and task-space conditioning."""
    res = StudyResult("latency", config={"sizes": list(sizes), "reps": reps}, seed=seed)
    task_reps = reps if task_reps is None else task_reps
    for i, (K, D) in enumerate(sizes):
        rng = np.random.default_rng(_subseed(seed, 6, i))
        p = _random_promp(K, D, rng)
        fk = PlanarArm(np.full(D, 0.3))
        y_t = p.Phi(0.5) @ p.mu_w + 0.05 * rng.standard_normal(D)
        jt = JointTarget(0.5, value=y_t)
        x = task_distribution(p, 0.5, fk)
        tt = TaskTarget(0.5, GaussianState(x.mean + 0.02 * rng.standard_normal(2),
                                           1e-4 * np.eye(2)))
        condition_point(p, jt)
        condition_task(p, tt, fk)
        jt_times = np.empty(reps)
        for r in range(reps):
            t = time.perf_counter()
            condition_point(p, jt)
            jt_times[r] = time.perf_counter() - t
        tk_times = np.empty(task_reps)
        for r in range(task_reps):
            t = time.perf_counter()
            condition_task(p, tt, fk)
            tk_times[r] = time.perf_counter() - t
        res.records.append({"K": K, "D": D, "KD": K * D,
                            "joint_ms_mean": 1e3 * jt_times.mean(),
                            "joint_ms_std": 1e3 * jt_times.std(),
                            "task_ms_mean": 1e3 * tk_times.mean(),
                            "task_ms_std": 1e3 * tk_times.std()})
    return res


@dataclass
class BootstrapResult:
    rates: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    interval: tuple
    mean: float


def bootstrap_rates(outcomes, n_resamples=5000, sample_size=50, seed=0, coverage=0.9,
                    bins=None) -> BootstrapResult:
    """Distribution of the success rate over resamples drawn with replacement."""
    x = np.asarray(list(outcomes), dtype=float)
    if x.size == 0:
        raise InputError("bootstrap needs at least one outcome")
    rng = np.random.default_rng(seed)
    rates = x[rng.integers(0, x.size, (n_resamples, sample_size))].mean(axis=1)
    if bins is None:
        bins = np.linspace(-0.5 / sample_size, 1 + 0.5 / sample_size, sample_size + 2)
    counts, edges = np.histogram(rates, bins=bins)
    a = (1 - coverage) / 2
    lo, hi = np.quantile(rates, [a, 1 - a])
    return BootstrapResult(rates, edges, counts, (float(lo), float(hi)), float(rates.mean()))


def bootstrap_study(outcomes, seed=0, **kw) -> StudyResult:
    b = bootstrap_rates(outcomes, seed=seed, **kw)
    res = StudyResult("bootstrap", config={"n_outcomes": len(list(outcomes)), **kw}, seed=seed)
    centers = 0.5 * (b.edges[:-1] + b.edges[1:])
    for c, n in zip(centers, b.counts):
        res.records.append({"rate": float(c), "count": int(n)})
    res.config.update(interval_lo=b.interval[0], interval_hi=b.interval[1], mean=b.mean)
    return res


def _snapshot(cfg):
    try:
        d = asdict(cfg)
    except TypeError:
        return dict(vars(cfg))
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
