"""Base vs base-continued vs E2MC-continued on the toy protocol.

    python scripts/continuation_benchmark.py --seeds 0 1 2 --out results/continuation.json
"""

import argparse
import time

from e2mc.experiments import BenchmarkConfig, pooled_se, run_seed, continuation_variants
from _common import dump, mean_se, setup


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--beta", type=float, default=1000.0)
    ap.add_argument("--gamma", type=float, default=10000.0)
    ap.add_argument("--out", default="results/continuation.json")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    setup(args.verbose)

    t0 = time.perf_counter()
    cfg0 = BenchmarkConfig(beta=args.beta, gamma=args.gamma)
    runs = {}
    for seed in args.seeds:
        cfg = cfg0.for_seed(seed)
        runs[seed] = run_seed(cfg, continuation_variants(cfg))
        print(f"seed {seed}: " + ", ".join(
            f"{k} {v['probe_acc']:.4f}" for k, v in runs[seed].items()))

    rows = ("base", "base_continued", "e2mc_continued")
    metrics = ("probe_acc", "overlap", "median_log_p")
    print(f"\n{'':16s}" + "".join(f"{m:>24s}" for m in metrics))
    for r in rows:
        print(f"{r:16s}" + "".join(
            f"{mean_se([runs[s][r][m] for s in args.seeds]):>24s}" for m in metrics))
    if len(args.seeds) > 1:
        e = [runs[s]["e2mc_continued"]["probe_acc"] for s in args.seeds]
        c = [runs[s]["base_continued"]["probe_acc"] for s in args.seeds]
        print(f"\nE2MC gain {sum(e) / len(e) - sum(c) / len(c):+.4f} (pooled SE {pooled_se(e, c):.4f})")
    print(f"{time.perf_counter() - t0:.0f} s")
    dump({"seeds": args.seeds, "beta": args.beta, "gamma": args.gamma, "runs": runs}, args.out)


if __name__ == "__main__":
    main()
