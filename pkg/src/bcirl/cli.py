"""Command-line harness: ``gen-demos``, ``run`` and ``report``.

Runs are laid out as ``<out>/<name>/<seed>/`` holding the generated demos
(``demos.json``, ``labels.json``, ``truth.json``) and, after ``run``, the
``trace.csv``, ``model.json`` and ``config.json`` of that seed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .crp import CrpConfig, run_nonparametric_bcirl
from .em import run_parametric_bcirl
from .envs import DRIVING_STYLES, DrivingGridSpec, MacroGridSpec, driving_dataset, macro_grid_dataset
from .maxent import DivergenceError, IrlConfig, run_maxent_irl
from .mdp import ConfigurationError, SchemaError, demos_from_dict, demos_to_dict, read_json, write_json
from .metrics import adjusted_rand_index, cluster_purity

log = logging.getLogger("bcirl")

ALGORITHMS = ("maxent", "bcirl-em", "bcirl-crp")
ENV_TYPES = ("macro-grid", "driving")
TRACE_COLUMNS = ["iter", "loglik", "num_clusters", "grad_inf_norm", "feature_gap", "wall_ms"]
EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2
TIMING_WINDOW = 25


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """One environment, one algorithm and a list of seeds."""

    env: dict = field(default_factory=lambda: {"type": "macro-grid"})
    algorithm: str = "bcirl-crp"
    name: str = "run"
    out: str = "out"
    seeds: list = field(default_factory=lambda: [0])
    m: int = 2
    crp_alpha: float = 3.0
    learning_rate: float = 0.05
    grad_tol: float = 1e-4
    max_iters: int = 200
    resample_draws: int = 1
    theta_prior_scale: float = 0.1
    init_scale: float = 0.1
    inner_steps: int = 1
    gamma: float | None = None
    horizon: int | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not isinstance(self.env, dict) or self.env.get("type") not in ENV_TYPES:
            raise ConfigurationError(f"env.type must be one of {ENV_TYPES}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ConfigurationError("seed list must be nonempty")
        if self.m < 1:
            raise ConfigurationError("m must be >= 1")
        self.env_spec(0)  # validate the environment fields early

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def env_spec(self, seed: int):
        params = {k: v for k, v in self.env.items() if k not in ("type", "per_style", "noise_demos", "noise_level")}
        params["seed"] = params.get("seed", seed)
        if self.env["type"] == "macro-grid":
            return MacroGridSpec.from_dict(params)
        return DrivingGridSpec.from_dict(params)

    def irl_config(self, seed: int) -> IrlConfig:
        common = dict(learning_rate=self.learning_rate, grad_tol=self.grad_tol, max_iters=self.max_iters,
                      gamma=self.gamma, seed=seed, init_scale=self.init_scale, horizon=self.horizon)
        if self.algorithm == "bcirl-crp":
            return CrpConfig(**common, alpha=self.crp_alpha, resample_draws=self.resample_draws,
                             theta_prior_scale=self.theta_prior_scale)
        return IrlConfig(**common)

    def seed_dir(self, seed: int) -> Path:
        return Path(self.out) / self.name / str(seed)


def build_environment(config: RunConfig, seed: int):
    """(mdp, features, labeled demos, ground-truth description) for one seed."""
    spec = config.env_spec(seed)
    if config.env["type"] == "macro-grid":
        mdp, features, rewards, labeled = macro_grid_dataset(spec, seed=seed)
        truth = {"thetas": [np.asarray(r).tolist() for r in rewards]}
    else:
        mdp, features, _, _, labeled = driving_dataset(
            spec, config.env.get("per_style", 25), seed=seed,
            noise_demos=config.env.get("noise_demos", 0), noise_level=config.env.get("noise_level", 1.0))
        truth = {"styles": list(DRIVING_STYLES)}
    return mdp, features, labeled, truth


def load_config(args) -> RunConfig:
    d = {}
    if args.config:
        try:
            d = read_json(args.config)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {"algorithm": args.algo, "crp_alpha": args.alpha, "learning_rate": args.lr,
                 "max_iters": args.max_iters, "out": args.out, "seeds": args.seed}
    d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_dict(d)
    except (ConfigurationError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


# --- gen-demos --------------------------------------------------------------

def cmd_gen_demos(config: RunConfig) -> int:
    for seed in config.seeds:
        _, _, labeled, truth = build_environment(config, seed)
        d = config.seed_dir(seed)
        d.mkdir(parents=True, exist_ok=True)
        write_json(d / "demos.json", demos_to_dict(labeled.demos))
        write_json(d / "labels.json", {"labels": np.asarray(labeled.labels).tolist()})
        write_json(d / "truth.json", truth)
        values, counts = np.unique(labeled.labels, return_counts=True)
        lengths = [len(t) for t in labeled.demos]
        print(f"seed {seed}: n={labeled.n} lengths {min(lengths)}-{max(lengths)} "
              f"labels {dict(zip(values.tolist(), counts.tolist()))} -> {d}")
    return EXIT_OK


# --- run --------------------------------------------------------------------

def _trace_rows(algorithm: str, result, n: int) -> list[list]:
    rows = []
    if algorithm == "maxent":
        for r in result.trace.records:
            rows.append([r.iteration, r.log_likelihood, 1, r.grad_norm, r.feature_gap, r.wall_time])
    elif algorithm == "bcirl-em":
        m = result.model.m
        for r in result.trace.records:
            rows.append([r.iteration, r.em_loglik / n, m, float(np.max(r.grad_norms)), r.feature_gap, r.wall_time])
    else:
        for r in result.trace.records:
            rows.append([r.iteration, r.total_loglik / n, r.num_clusters, float(np.max(r.grad_norms)),
                         r.feature_gap, r.wall_time])
    return rows


def write_trace(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for it, ll, m, g, gap, wall in rows:
            w.writerow([it, repr(float(ll)), int(m), repr(float(g)), repr(float(gap)), f"{1e3 * wall:.3f}"])


def run_seed(config: RunConfig, seed: int) -> bool:
    """Run one seed and write its outputs; returns whether the run converged."""
    d = config.seed_dir(seed)
    try:
        demos = demos_from_dict(read_json(d / "demos.json"))
    except OSError as exc:
        raise UsageError(f"no demos for seed {seed} in {d}; run gen-demos first") from exc
    # the environment is rebuilt from its spec; labels and truth files are never read here
    spec = config.env_spec(seed)
    if config.env["type"] == "macro-grid":
        from .envs import build_macro_gridworld
        mdp, features, _ = build_macro_gridworld(spec)
    else:
        from .envs import build_driving_gridworld
        mdp, features, _ = build_driving_gridworld(spec)
    irl = config.irl_config(seed)
    if config.algorithm == "maxent":
        result = run_maxent_irl(mdp, features, demos, irl)
        model = {"clusters": [{"theta": result.theta.tolist(), "psi": 1.0}], "beta": [[1.0]] * demos.n}
    elif config.algorithm == "bcirl-em":
        result = run_parametric_bcirl(mdp, features, demos, config.m, irl, config.inner_steps)
        model = result.model.to_dict(result.beta)
    else:
        result = run_nonparametric_bcirl(mdp, features, demos, irl)
        model = result.model.to_dict(result.beta)
    model["converged"] = bool(result.trace.converged)
    write_trace(d / "trace.csv", _trace_rows(config.algorithm, result, demos.n))
    write_json(d / "model.json", model)
    write_json(d / "config.json", {**config.to_dict(), "seeds": [seed]})
    log.info("seed %d: %d iterations, converged=%s", seed, len(result.trace), result.trace.converged)
    return result.trace.converged


def cmd_run(config: RunConfig, jobs: int = 1) -> int:
    if jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            converged = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds))
    else:
        converged = [run_seed(config, s) for s in config.seeds]
    for seed, ok in zip(config.seeds, converged):
        print(f"seed {seed}: {'converged' if ok else 'reached max_iters'}")
    return EXIT_OK if all(converged) else EXIT_NOT_CONVERGED


# --- report -----------------------------------------------------------------

def read_trace(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(TRACE_COLUMNS) - set(rows[0]):
        raise SchemaError("trace", f"{path} lacks columns {TRACE_COLUMNS}")
    return {c: np.array([float(r[c]) for r in rows]) for c in TRACE_COLUMNS}


def _pad(curves: list[np.ndarray]) -> np.ndarray:
    """Stack curves of unequal length, holding each at its final value."""
    T = max(len(c) for c in curves)
    return np.stack([np.concatenate([c, np.full(T - len(c), c[-1])]) for c in curves])


def summarize_runs(run_dirs) -> dict:
    """Per-algorithm curves, cluster-count histogram, clustering scores and timing split."""
    groups: dict[str, list[dict]] = {}
    for run_dir in map(Path, run_dirs):
        for seed_dir in sorted(p for p in run_dir.iterdir() if (p / "trace.csv").exists()):
            cfg = read_json(seed_dir / "config.json")
            entry = {"trace": read_trace(seed_dir / "trace.csv"), "model": read_json(seed_dir / "model.json")}
            if (seed_dir / "labels.json").exists():
                entry["labels"] = np.array(read_json(seed_dir / "labels.json")["labels"])
            groups.setdefault(cfg["algorithm"], []).append(entry)
    if not groups:
        raise UsageError("no completed runs found")
    summary = {}
    for algo, entries in sorted(groups.items()):
        ll = _pad([e["trace"]["loglik"] for e in entries])
        gap = _pad([e["trace"]["feature_gap"] for e in entries])
        q = lambda x: np.percentile(x, [25, 50, 75], axis=0)  # noqa: E731
        final_m = [int(e["trace"]["num_clusters"][-1]) for e in entries]
        step_s = [np.diff(np.concatenate([[0.0], e["trace"]["wall_ms"]])) / 1e3 for e in entries]
        early = [s[:TIMING_WINDOW].mean() for s in step_s]
        late = [s[-TIMING_WINDOW:].mean() for s in step_s]
        purity, ari = [], []
        for e in entries:
            if "labels" in e:
                beta = np.array(e["model"]["beta"])
                purity.append(cluster_purity(beta, e["labels"]))
                ari.append(adjusted_rand_index(beta, e["labels"]))
        summary[algo] = {
            "runs": len(entries),
            "loglik_quartiles": q(ll),
            "loglik_monotone_median": np.maximum.accumulate(np.median(ll, axis=0)),
            "gap_quartiles": q(gap),
            "final_loglik_median": float(np.median(ll[:, -1])),
            "cluster_histogram": {int(k): int(v) for k, v in zip(*np.unique(final_m, return_counts=True))},
            "mean_s_per_iter": float(np.mean(np.concatenate(step_s))),
            "first_window_s": float(np.mean(early)),
            "last_window_s": float(np.mean(late)),
            "purity_median": float(np.median(purity)) if purity else None,
            "ari_median": float(np.median(ari)) if ari else None,
            "converged": sum(bool(e["model"].get("converged")) for e in entries),
        }
    return summary


def cmd_report(run_dirs, out: str | None = None) -> int:
    if not run_dirs:
        raise UsageError("report needs at least one run directory")
    summary = summarize_runs(run_dirs)
    header = f"{'algorithm':<10} {'runs':>4} {'loglik/demo':>12} {'purity':>7} {'clusters':<16} " \
             f"{'s/iter':>8} {'first25':>8} {'last25':>8}"
    print(header)
    for algo, s in summary.items():
        pur = "-" if s["purity_median"] is None else f"{s['purity_median']:.3f}"
        hist = ",".join(f"{k}:{v}" for k, v in s["cluster_histogram"].items())
        print(f"{algo:<10} {s['runs']:>4} {s['final_loglik_median']:>12.4f} {pur:>7} {hist:<16} "
              f"{s['mean_s_per_iter']:>8.4f} {s['first_window_s']:>8.4f} {s['last_window_s']:>8.4f}")
    if out:
        dest = Path(out)
        dest.mkdir(parents=True, exist_ok=True)
        for algo, s in summary.items():
            with open(dest / f"curves_{algo}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iter", "loglik_q25", "loglik_median", "loglik_q75", "loglik_median_monotone",
                            "gap_q25", "gap_median", "gap_q75"])
                llq, gq = s["loglik_quartiles"], s["gap_quartiles"]
                for t in range(llq.shape[1]):
                    w.writerow([t, *llq[:, t], s["loglik_monotone_median"][t], *gq[:, t]])
        table = {a: {k: v for k, v in s.items() if not isinstance(v, np.ndarray)} for a, s in summary.items()}
        write_json(dest / "summary.json", table)
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcirl", description="Behavior-clustering inverse reinforcement learning")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-demos", "run"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, action="append", help="seed (repeatable); overrides the config list")
        p.add_argument("--out", help="output root directory")
        p.add_argument("--algo", choices=ALGORITHMS)
        p.add_argument("--alpha", type=float, help="CRP concentration")
        p.add_argument("--lr", type=float, help="gradient step size")
        p.add_argument("--max-iters", type=int)
        p.add_argument("--jobs", type=int, default=1, help="parallel seeds")
    p = sub.add_parser("report")
    p.add_argument("run_dirs", nargs="*", help="run directories (<out>/<name>)")
    p.add_argument("--out", help="directory for curve CSVs and summary.json")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.run_dirs, args.out)
        config = load_config(args)
        if args.command == "gen-demos":
            return cmd_gen_demos(config)
        return cmd_run(config, max(1, args.jobs))
    except (UsageError, ConfigurationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
