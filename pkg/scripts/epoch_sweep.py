"""Probe accuracy against the number of continued E2MC epochs.

Each seed's model is continued incrementally, so the checkpoint at epoch
``e`` is exactly the one a single ``e``-epoch run would produce (the
continued schedule is constant).
"""

import argparse

import numpy as np

from e2mc.experiments import BenchmarkConfig, e2mc_variant, evaluate, pretrain
from e2mc.trainer import continue_pretraining
from _common import dump, mean_se, setup


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, nargs="+", default=[1, 2, 5, 10, 20, 30])
    ap.add_argument("--out", default="results/epoch_sweep.json")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    setup(args.verbose)

    marks = sorted(set(args.epochs))
    table = {e: [] for e in [0, *marks]}
    for seed in args.seeds:
        cfg = BenchmarkConfig().for_seed(seed)
        spec = e2mc_variant(cfg.train.criterion, cfg.beta, cfg.gamma)
        model, _ = pretrain(cfg)
        table[0].append(evaluate(model, cfg, cfg.train.criterion)["probe_acc"])
        done = 0
        for e in marks:
            model, _ = continue_pretraining(model, spec, cfg.train, e - done, cfg.lr_factor)
            done = e
            table[e].append(evaluate(model, cfg, spec)["probe_acc"])

    last = np.mean(table[marks[-1]]) - np.mean(table[0])
    print(f"{'epochs':>8s}{'1% probe':>20s}{'share of gain':>16s}")
    for e, accs in table.items():
        share = (np.mean(accs) - np.mean(table[0])) / last if last else float("nan")
        print(f"{e:8d}{mean_se(accs):>20s}{share:16.2f}")
    dump({"seeds": args.seeds, "probe_acc": {str(k): v for k, v in table.items()}}, args.out)


if __name__ == "__main__":
    main()
