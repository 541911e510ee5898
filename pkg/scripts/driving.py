"""Aggressive/evasive driving demos: MaxEnt baseline against clustering learners.

    python scripts/driving.py                         # MaxEnt vs CRP at alpha 3, 5, 10
    python scripts/driving.py --seeds 5 --alphas 3
    python scripts/driving.py --noise                 # five inconsistent demos injected
    python scripts/driving.py --em                    # add the two-cluster EM learner
"""

import argparse

import numpy as np

from bcirl.experiments import driving_trial, load_config


def summarize(label, trials, baseline=None):
    ll = np.array([t.loglik_per_demo for t in trials])
    line = (f"{label:<14} clusters {np.bincount([t.num_clusters for t in trials]).nonzero()[0].tolist()}  "
            f"per-demo loglik median {np.median(ll):8.2f}  "
            f"recovered {sum(t.recovered for t in trials)}/{len(trials)}  "
            f"purity>=0.9 {sum(t.purity >= 0.9 for t in trials)}/{len(trials)}")
    if baseline is not None:
        ref = {t.seed: t.loglik_per_demo for t in baseline}
        adv = np.median([t.loglik_per_demo - ref[t.seed] for t in trials if t.seed in ref])
        line += f"  likelihood ratio vs maxent {np.exp(adv):.3g}"
    noise = sum(t.noise_total for t in trials)
    if noise:
        line += f"  noise outside main clusters {sum(t.noise_outside for t in trials)}/{noise}"
    print(line)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=None, help="use seeds 0..N-1 instead of the config lists")
    ap.add_argument("--alphas", type=float, nargs="+", default=[3.0, 5.0, 10.0])
    ap.add_argument("--noise", action="store_true", help="use the config with injected noise demos")
    ap.add_argument("--em", action="store_true")
    args = ap.parse_args()

    seeds = {} if args.seeds is None else {"seeds": list(range(args.seeds))}
    baseline = [driving_trial(load_config("driving_maxent", **seeds), s)
                for s in load_config("driving_maxent", **seeds).seeds]
    summarize("maxent", baseline)
    if args.em:
        cfg = load_config("driving_em", **seeds)
        summarize("bcirl-em", [driving_trial(cfg, s) for s in cfg.seeds], baseline)
    crp_name = "driving_noise_crp" if args.noise else "driving_crp"
    for alpha in args.alphas:
        cfg = load_config(crp_name, crp_alpha=alpha, **seeds)
        summarize(f"crp a={alpha:g}", [driving_trial(cfg, s) for s in cfg.seeds], baseline)


if __name__ == "__main__":
    main()
