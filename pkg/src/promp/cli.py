"""Command-line entry point: ``python -m promp <verb> ...``.

Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 adaptation
failure or no-move.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io
from .adaptation import JointTarget, LaplaceOptions, TaskTarget, condition_gaussian, condition_point, condition_task
from .basis import BasisConfig
from .errors import AdaptationError, InputError, NumericalError, ProMPError
from .kinematics import load_kinematics
from .model import GaussianState, marginal_trajectory, sample_trajectory
from .tabletennis import HitTimePrior, TrialOptions, default_scenario, play_trial
from .training import NIWPrior, TrainOptions, em_train, em_train_approx, least_squares_train

log = logging.getLogger("promp")


def _floats(s, what="value"):
    try:
        return np.array([float(x) for x in str(s).split(",") if x.strip()])
    except ValueError:
        raise InputError(f"cannot parse {what} {s!r} as comma-separated numbers") from None


def _cov(s, dim, what):
    v = _floats(s, what)
    if v.size == 1:
        return v[0] * np.eye(dim)
    if v.size == dim:
        return np.diag(v)
    if v.size == dim * dim:
        return v.reshape(dim, dim)
    raise InputError(f"{what} needs 1, {dim} or {dim * dim} numbers, got {v.size}")


def _out(args, default=None):
    return args.out or default


def _write_json(obj, path):
    text = json.dumps(obj, indent=2)
    if path:
        Path(path).write_text(text)
    else:
        print(text)


def _arm(args, D=None):
    if getattr(args, "arm", None):
        p = Path(args.arm)
        desc = json.loads(p.read_text()) if p.exists() else json.loads(args.arm)
        return load_kinematics(desc, check=not args.no_fk_check)
    if D is not None:
        return load_kinematics({"type": "planar", "link_lengths": [1.0 / D] * D},
                               check=not args.no_fk_check)
    raise InputError("--arm is required")


# ---------------------------------------------------------------------------
# Verbs


def cmd_train(args):
    demos = io.load_demos(args.demos)
    D = demos[0].D
    n_rbf = args.k - args.poly_degree - 1
    if n_rbf < 0:
        raise InputError("--k must be at least poly_degree + 1")
    basis = BasisConfig.default(n_rbf, args.poly_degree)
    opts = TrainOptions(tol=args.tol, max_iter=args.max_iter, diag_sigma_y=args.diag_sigma_y)
    if args.prior == "ls":
        p, rep = least_squares_train(demos, basis, D, args.lam)
    else:
        prior = NIWPrior(k0=args.k0, v0=args.v0) if args.prior == "map" else args.prior
        trainer = em_train_approx if args.approx else em_train
        p, rep = trainer(demos, basis, D, prior, opts)
    io.save_model(p, _out(args, "model.json"))
    summary = {"demos": len(demos), "D": D, "K": basis.K, "iterations": rep.iterations,
               "converged": rep.converged,
               "log_condition_number": ex.log_condition_number(p.Sigma_w)}
    if rep.objective_trace:
        summary["final_objective"] = rep.objective_trace[-1]
    print(json.dumps(summary))
    return 0


def cmd_condition(args):
    p = io.load_model(args.model)
    if (args.joint is None) == (args.task is None):
        raise InputError("give exactly one of --joint or --task")
    if args.joint is not None:
        y = _floats(args.joint, "--joint")
        if args.cov is None:
            q = condition_point(p, JointTarget(args.at, value=y, order=args.order))
        else:
            dist = GaussianState(y, _cov(args.cov, p.D, "--cov"))
            q = condition_gaussian(p, JointTarget(args.at, dist=dist, order=args.order))
        info = {}
    else:
        fk = _arm(args, p.D)
        x = _floats(args.task, "--task")
        cov = _cov(args.task_cov if args.task_cov is not None else "1e-6", x.size, "--task-cov")
        q, rep = condition_task(p, TaskTarget(args.at, GaussianState(x, cov)), fk,
                                LaplaceOptions(grad_tol=args.grad_tol, max_iter=args.max_iter))
        info = {"iterations": rep.iterations, "grad_norm": rep.grad_norm,
                "grad_norm0": rep.grad_norm0,
                "hessian_cond": rep.hessian_cond, "mode": rep.mu_q.tolist()}
    io.save_model(q, _out(args, "conditioned.json"))
    if info:
        print(json.dumps(info))
    return 0


def cmd_sample(args):
    p = io.load_model(args.model)
    z = np.linspace(0.0, 1.0, args.n_steps)
    rng = np.random.default_rng(args.seed)
    rows = []
    for s in range(args.n_samples):
        Y = sample_trajectory(p, z, rng.integers(2 ** 63))
        rows += [[s, zi, *yi] for zi, yi in zip(z, Y)]
    _write_rows(["sample", "z"] + [f"q{j}" for j in range(p.D)], rows, _out(args))
    return 0


def cmd_marginal(args):
    p = io.load_model(args.model)
    z = np.linspace(0.0, 1.0, args.n_steps)
    mean, std = marginal_trajectory(p, z, args.order)
    header = ["z"] + [f"mean_q{j}" for j in range(p.D)] + [f"std_q{j}" for j in range(p.D)]
    _write_rows(header, [[zi, *m, *s] for zi, m, s in zip(z, mean, std)], _out(args))
    return 0


def cmd_segment(args):
    demos = io.load_demos(args.demos)
    if args.hits_file:
        hits = json.loads(Path(args.hits_file).read_text())
    else:
        hits = [list(_floats(h, "--hits")) for h in args.hits]
    if len(hits) == 1 and len(demos) > 1:
        hits = hits * len(demos)
    rep = io.segment_training_set(demos, hits, minimum=args.min_segments,
                                  threshold=args.threshold, smooth=args.smooth)
    io.save_demos(rep.segments, _out(args, "segments.json"))
    print(json.dumps({"segments": len(rep.segments),
                      "dropped": [{"hit_time": t, "reason": r} for t, r in rep.dropped]}))
    return 0


def cmd_ttsim(args):
    sc = default_scenario(args.seed)
    p, fk, T, q_rest = sc.promp, sc.fk, sc.T, sc.q_rest
    if args.model:
        p = io.load_model(args.model)
        fk = _arm(args, p.D)
        T = args.duration
        q_rest = p.Phi(0.0) @ p.mu_w
    prior = HitTimePrior() if args.hit_prior == "gaussian" else HitTimePrior.uniform()
    opts = TrialOptions(replan=args.replan == "on", hit_prior=prior)
    rows = []
    for i in range(args.trials):
        o = play_trial(p, fk, sc.ball(args.seed * 100003 + i), T, q_rest, opts)
        rows.append([i, int(o.hit), o.min_distance, o.start_time, o.replans])
    _write_rows(["trial", "hit", "min_distance", "t0", "replans"], rows, _out(args))
    hits = sum(r[1] for r in rows)
    log.info("hit rate %d/%d", hits, len(rows))
    print(json.dumps({"trials": len(rows), "hits": hits}), file=sys.stderr)
    return 0


def cmd_exp(args):
    seed = args.seed
    if args.study == "condnum":
        N = range(1, 41) if args.quick else range(1, 101)
        res = ex.condnum_study(ex.CondnumConfig(N_values=tuple(N)), seed)
    elif args.study == "convergence":
        cfg = ex.ConvergenceConfig(repeats=3) if args.quick else ex.ConvergenceConfig()
        res = ex.convergence_study(cfg, seed)
    elif args.study == "emcurve":
        res = ex.em_curve_study(ex.EMCurveConfig(), seed)
    elif args.study == "mapgap":
        res = ex.map_mle_gap(seed=seed)
    elif args.study == "latency":
        res = ex.latency_bench(reps=100 if args.quick else 1000, seed=seed)
    else:
        outcomes = _outcomes(args)
        res = ex.bootstrap_study(outcomes, seed=seed, n_resamples=args.resamples,
                                 sample_size=args.sample_size)
        print(json.dumps({"interval": [res.config["interval_lo"], res.config["interval_hi"]],
                          "mean": res.config["mean"]}), file=sys.stderr)
    if args.out:
        res.to_csv(args.out, plot_data=args.plot_data)
    else:
        _write_rows(list(res.records[0]), [list(r.values()) for r in res.records], None)
    return 0


def _outcomes(args):
    if args.outcomes:
        with open(args.outcomes, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or "hit" not in rows[0]:
            raise InputError("outcome file needs a 'hit' column")
        return [bool(int(float(r["hit"]))) for r in rows]
    if args.rate is None:
        raise InputError("bootstrap needs --outcomes or --rate")
    rng = np.random.default_rng(args.seed)
    return list(rng.random(args.sample_size) < args.rate)


def cmd_bench(args):
    sizes = [tuple(int(v) for v in s.lower().split("x")) for s in args.sizes.split(",")]
    res = ex.latency_bench(sizes, reps=args.reps, seed=args.seed)
    if args.out:
        res.to_csv(args.out)
    else:
        _write_rows(list(res.records[0]), [list(r.values()) for r in res.records], None)
    return 0


def _write_rows(header, rows, path):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


# ---------------------------------------------------------------------------
# Parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output path (stdout when omitted)")
    common.add_argument("--config", default=None, help="JSON file of option defaults")
    common.add_argument("--no-fk-check", action="store_true",
                        help="skip the Jacobian self-check when loading kinematics")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="promp", parents=[common],
                                 description="Probabilistic movement primitives")
    sub = ap.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("train", parents=[common], help="fit a model to demonstrations")
    t.add_argument("demos")
    t.add_argument("--prior", choices=["map", "mle", "mle-blockdiag", "ls"], default="map")
    t.add_argument("--k", type=int, default=5, help="basis functions per DoF")
    t.add_argument("--poly-degree", type=int, default=1)
    t.add_argument("--lambda", dest="lam", type=float, default=0.0)
    t.add_argument("--tol", type=float, default=1e-6)
    t.add_argument("--max-iter", type=int, default=200)
    t.add_argument("--k0", type=float, default=0.0)
    t.add_argument("--v0", type=float, default=None)
    t.add_argument("--diag-sigma-y", action="store_true")
    t.add_argument("--approx", action="store_true", help="point-estimate E-step")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("condition", parents=[common], help="adapt a model to a target")
    c.add_argument("--model", required=True)
    c.add_argument("--at", type=float, required=True, help="phase in [0, 1]")
    c.add_argument("--joint")
    c.add_argument("--order", type=int, default=0, choices=[0, 1, 2])
    c.add_argument("--cov")
    c.add_argument("--task")
    c.add_argument("--task-cov")
    c.add_argument("--arm", help="kinematics JSON (file or literal)")
    c.add_argument("--grad-tol", type=float, default=1e-8)
    c.add_argument("--max-iter", type=int, default=100)
    c.set_defaults(func=cmd_condition)

    s = sub.add_parser("sample", parents=[common], help="draw trajectories")
    s.add_argument("--model", required=True)
    s.add_argument("--n-samples", type=int, default=10)
    s.add_argument("--n-steps", type=int, default=100)
    s.set_defaults(func=cmd_sample)

    m = sub.add_parser("marginal", parents=[common], help="per-phase mean and std")
    m.add_argument("--model", required=True)
    m.add_argument("--n-steps", type=int, default=100)
    m.add_argument("--order", type=int, default=0, choices=[0, 1, 2])
    m.set_defaults(func=cmd_marginal)

    g = sub.add_parser("segment", parents=[common], help="cut strikes around hit times")
    g.add_argument("demos")
    g.add_argument("--hits", nargs="*", default=[],
                   help="comma-separated hit times, one argument per demonstration")
    g.add_argument("--hits-file", help="JSON list of hit-time lists")
    g.add_argument("--min-segments", type=int, default=io.MIN_SEGMENTS)
    g.add_argument("--threshold", type=float, default=0.01)
    g.add_argument("--smooth", type=int, default=1)
    g.set_defaults(func=cmd_segment)

    tt = sub.add_parser("tt-sim", parents=[common], help="simulated table-tennis trials")
    tt.add_argument("--model")
    tt.add_argument("--arm")
    tt.add_argument("--duration", type=float, default=0.5)
    tt.add_argument("--trials", type=int, default=50)
    tt.add_argument("--replan", choices=["on", "off"], default="on")
    tt.add_argument("--hit-prior", choices=["gaussian", "uniform"], default="gaussian")
    tt.set_defaults(func=cmd_ttsim)

    e = sub.add_parser("exp", parents=[common], help="reproduce a synthetic study")
    e.add_argument("study", choices=["condnum", "convergence", "emcurve", "mapgap", "latency",
                                     "bootstrap"])
    e.add_argument("--plot-data", action="store_true")
    e.add_argument("--quick", action="store_true")
    e.add_argument("--outcomes", help="CSV with a 'hit' column (bootstrap)")
    e.add_argument("--rate", type=float, help="synthesise Bernoulli outcomes (bootstrap)")
    e.add_argument("--resamples", type=int, default=5000)
    e.add_argument("--sample-size", type=int, default=50)
    e.set_defaults(func=cmd_exp)

    b = sub.add_parser("bench", parents=[common], help="time the conditioning operators")
    b.add_argument("--sizes", default="5x7,10x7,20x7,30x7,40x7,50x7", help="KxD list")
    b.add_argument("--reps", type=int, default=1000)
    b.set_defaults(func=cmd_bench)
    return ap


def _apply_config(ap, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {known.config}: {exc}") from None
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    if "lambda" in cfg:
        cfg["lam"] = cfg.pop("lambda")
    if isinstance(cfg.get("arm"), dict):
        cfg["arm"] = json.dumps(cfg["arm"])
    ap.set_defaults(**cfg)
    for action in ap._subparsers._group_actions:
        for p in action.choices.values():
            p.set_defaults(**cfg)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
        args = ap.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except AdaptationError as exc:
        print(f"adaptation failed: {exc}", file=sys.stderr)
        return exc.exit_code
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return exc.exit_code
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except ProMPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
