"""Simulated strikes with and without replanning, plus bootstrap hit-rate intervals.

    python scripts/tabletennis_batch.py --trials 50 --out results/
"""
import argparse
import csv
from pathlib import Path

from promp.experiments import bootstrap_rates
from promp.tabletennis import TrialOptions, default_scenario, play_trial


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--spread", type=float, default=1.0, help="scale of serve perturbations")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sc = default_scenario(args.seed)
    for mode, replan in (("replan", True), ("single", False)):
        opts = TrialOptions(replan=replan)
        outcomes = [play_trial(sc.promp, sc.fk, sc.ball(1000 * args.seed + i, args.spread),
                               sc.T, sc.q_rest, opts) for i in range(args.trials)]
        with open(out / f"trials_{mode}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "hit", "min_distance", "t0", "replans"])
            for i, o in enumerate(outcomes):
                w.writerow([i, int(o.hit), o.min_distance, o.start_time, o.replans])
        hits = [o.hit for o in outcomes]
        b = bootstrap_rates(hits, seed=args.seed)
        print(f"{mode:7s} hits {sum(hits)}/{len(hits)}  90% interval "
              f"[{b.interval[0]:.2f}, {b.interval[1]:.2f}]  "
              f"no-move {sum(o.no_move for o in outcomes)}")


if __name__ == "__main__":
    main()
