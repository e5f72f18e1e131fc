"""Write a synthetic demonstration set for trying the command-line tools.

    python scripts/make_demo_data.py demos.json --n 20 --dof 3
    promp train demos.json --out model.json
"""
import argparse

from promp.experiments import GeneratorConfig, generating_promp, synthetic_demos
from promp.io import save_demos


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("path", help=".json file, or a directory for one CSV per demo")
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--dof", type=int, default=3)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--noise", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = GeneratorConfig(D=args.dof, rank=args.dof, noise_std=args.noise, n_steps=args.steps)
    truth = generating_promp(cfg, args.seed)
    files = save_demos(synthetic_demos(truth, args.n, args.steps, args.seed), args.path)
    print(f"wrote {args.n} demonstrations to {', '.join(map(str, files[:3]))}"
          + (" ..." if len(files) > 3 else ""))


if __name__ == "__main__":
    main()
