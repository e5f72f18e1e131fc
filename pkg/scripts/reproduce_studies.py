"""Run the synthetic studies and write one CSV per study.

    python scripts/reproduce_studies.py --out results/ [--quick] [--seed 0]
"""
import argparse
import time
from pathlib import Path

import numpy as np

from promp import experiments as ex


def summarise(res):
    if res.name == "condnum":
        r = {x["N"]: x for x in res.records}
        n_hi = max(r)
        return (f"MAP log k at N=6 {r[6]['log_kappa_map']:.2f}, N={n_hi} "
                f"{r[n_hi]['log_kappa_map']:.2f}; MLE at N=6 {r[6]['log_kappa_mle']:.2f}")
    if res.name == "map_mle_gap":
        return ", ".join(f"N={x['N']}: {x['rel_gap']:.3f}" for x in res.records)
    if res.name == "convergence":
        last = res.records[-1]
        return ", ".join(f"{k}={last[k]:.3f}" for k in ("err_mu", "err_blockdiag", "err_offblock"))
    if res.name == "emcurve":
        last = res.records[-1]
        return f"final exact {last['loglik_exact']:.1f}, point-estimate {last['loglik_approx']:.1f}"
    if res.name == "latency":
        return ", ".join(f"KD={x['KD']}: {x['joint_ms_mean']:.3f}/{x['task_ms_mean']:.2f} ms"
                         for x in res.records)
    return ""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true", help="fewer points and repeats")
    ap.add_argument("--only", nargs="*", default=None,
                    choices=["condnum", "mapgap", "convergence", "emcurve", "latency"])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    N_cond = tuple(range(1, 41)) if args.quick else tuple(range(1, 101))
    conv = ex.ConvergenceConfig(repeats=3) if args.quick else ex.ConvergenceConfig()
    studies = {
        "condnum": lambda: ex.condnum_study(ex.CondnumConfig(N_values=N_cond), args.seed),
        "mapgap": lambda: ex.map_mle_gap(seed=args.seed),
        "convergence": lambda: ex.convergence_study(conv, args.seed),
        "emcurve": lambda: ex.em_curve_study(ex.EMCurveConfig(), args.seed),
        "latency": lambda: ex.latency_bench(reps=100 if args.quick else 1000, seed=args.seed),
    }
    for name, run in studies.items():
        if args.only and name not in args.only:
            continue
        t = time.perf_counter()
        res = run()
        res.to_csv(out / f"{name}.csv")
        res.to_csv(out / f"{name}.dat", plot_data=True)
        print(f"{name:12s} {time.perf_counter() - t:6.1f}s  {summarise(res)}")


if __name__ == "__main__":
    np.seterr(all="ignore")
    main()
