"""Grid of (beta, gamma) continued runs from one shared base per seed.

    python scripts/coefficient_sweep.py --betas 0 1000 --gammas 0 10000
"""

import argparse

import numpy as np

from e2mc.experiments import BenchmarkConfig, cell_name, coefficient_grid, pretrain, run_seed
from _common import dump, mean_se, setup


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--betas", type=float, nargs="+", default=[0.0, 1000.0])
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.0, 10000.0])
    ap.add_argument("--out", default="results/coefficient_sweep.json")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    setup(args.verbose)

    runs = {}
    for seed in args.seeds:
        cfg = BenchmarkConfig().for_seed(seed)
        base_model, _ = pretrain(cfg)
        grid = coefficient_grid(cfg.train.criterion, args.betas, args.gammas)
        runs[seed] = run_seed(cfg, grid, base_model=base_model)

    ref = np.mean([runs[s][cell_name(0, 0)]["probe_acc"] for s in args.seeds]) \
        if 0.0 in args.betas and 0.0 in args.gammas else None
    print(f"{'cell':28s}{'1% probe':>20s}{'gain':>10s}")
    for b in args.betas:
        for g in args.gammas:
            accs = [runs[s][cell_name(b, g)]["probe_acc"] for s in args.seeds]
            gain = f"{np.mean(accs) - ref:+.4f}" if ref is not None else ""
            print(f"{cell_name(b, g):28s}{mean_se(accs):>20s}{gain:>10s}")
    dump({"seeds": args.seeds, "betas": args.betas, "gammas": args.gammas, "runs": runs}, args.out)


if __name__ == "__main__":
    main()
