"""Cluster-count recovery on the macro-cell gridworld.

    python scripts/gridworld.py                      # 100 seeds, alpha from the config
    python scripts/gridworld.py --seeds 20 --alpha 10
"""

import argparse
import json

import numpy as np

from bcirl.experiments import gridworld_trial, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="gridworld_crp")
    ap.add_argument("--seeds", type=int, default=None, help="use seeds 0..N-1 instead of the config list")
    ap.add_argument("--alpha", type=float, default=None)
    ap.add_argument("--json", default=None, help="also dump per-seed results here")
    args = ap.parse_args()

    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = list(range(args.seeds))
    if args.alpha is not None:
        overrides["crp_alpha"] = args.alpha
    cfg = load_config(args.config, **overrides)

    trials = []
    print(f"{'seed':>5} {'clusters':>8} {'detected':>8} {'seconds':>8}")
    for seed in cfg.seeds:
        t = gridworld_trial(cfg, seed)
        trials.append(t)
        det = "-" if t.detection_iteration is None else t.detection_iteration
        print(f"{t.seed:>5} {t.final_clusters:>8} {det:>8} {t.seconds:>8.2f}")

    exact = [t.detection_iteration for t in trials if t.detection_iteration is not None]
    print(f"\nexact cluster count in {len(exact)}/{len(trials)} runs")
    if exact:
        print(f"detection iteration: median {np.median(exact):g}, mean {np.mean(exact):.2f}")
    print(f"slowest run {max(t.seconds for t in trials):.2f} s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([t.__dict__ for t in trials], fh, indent=1)


if __name__ == "__main__":
    main()
