"""Command line entry point: ``rcac train | evaluate | aggregate | diversity``.

Runs land in ``<out>/<env>/<mode>/seed_<n>/``. ``RCAC_WORKERS`` sets how
many runs train in parallel worker processes (default 1, sequential).
"""

from __future__ import annotations

import argparse
import csv
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rcac.aggregate import aggregate
from rcac.config import MODES, RunConfig, config_from_mapping, parse_config_text
from rcac.diversity import VisitLog, coverage_report
from rcac.errors import ConfigurationError, RcacError
from rcac.trainer import Trainer, random_policy_return, run

WORKERS_ENV = "RCAC_WORKERS"
DIVERSITY_JITTER = 1e-6  # far below the 1/48-arena pixel size, far above float noise


@dataclass
class ExperimentSpec:
    configs: list[RunConfig]
    out_dir: Path
    plot: bool = True
    force: bool = False
    run_dirs: list[Path] = field(default_factory=list)

    def __post_init__(self):
        self.run_dirs = [run_dir(self.out_dir, c) for c in self.configs]


def run_dir(out_dir, cfg: RunConfig) -> Path:
    return Path(out_dir) / cfg.env / cfg.mode / f"seed_{cfg.seed}"


def parse_seeds(text: str) -> list[int]:
    """``"0,1,2"``, ``"0-4"`` or a mix of both."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigurationError(f"--seeds: cannot read {part!r}") from None
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError(f"--seeds: repeated seed in {text!r}")
    if not seeds:
        raise ConfigurationError("--seeds: no seeds given")
    return seeds


def _split_set(items) -> dict[str, str]:
    values = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = value.strip()
    return values


def build_experiment(args) -> ExperimentSpec:
    """Resolve the cartesian product of modes and seeds, validating every run first.

    ``--pc`` applies to rcac runs only; baseline and mixed runs always use p_c = 0.
    """
    base = parse_config_text(Path(args.config).read_text()) if args.config else {}
    base.update(_split_set(args.set))
    flags = {"env": args.env, "total_steps": args.steps, "obs_size": args.obs_size}
    base.update({k: str(v) for k, v in flags.items() if v is not None})
    modes = [m.strip() for m in args.mode.split(",")] if args.mode else [base.get("mode", "rcac")]
    seeds = parse_seeds(args.seeds) if args.seeds else [int(base.get("seed", 0))]
    configs, errors = [], []
    for mode in modes:
        for seed in seeds:
            values = dict(base, mode=mode, seed=str(seed))
            if args.pc is not None and mode == "rcac":
                values["p_c"] = str(args.pc)
            try:
                configs.append(config_from_mapping(values))
            except ConfigurationError as exc:
                errors.append(f"[mode={mode} seed={seed}] {exc}")
    if errors:
        raise ConfigurationError("\n".join(errors))
    return ExperimentSpec(configs, Path(args.out), plot=not args.no_plot, force=args.force)


def _train_one(cfg: RunConfig, directory: str) -> str:
    def progress(c, row):
        print(f"[{c.env}/{c.mode}/seed {c.seed}] step {row['step']}: "
              f"mean return {float(row['mean_return']):.2f}", file=sys.stderr, flush=True)

    run(cfg, directory, progress=progress)
    return directory


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be at least 1")
    return n


def train_experiment(spec: ExperimentSpec, workers: int = 1) -> list[Path]:
    blocked = [d for d in spec.run_dirs if (d / "DONE").exists()]
    if blocked and not spec.force:
        raise ConfigurationError("completed runs exist (use --force to overwrite): "
                                 + ", ".join(map(str, blocked)))
    for d in spec.run_dirs:
        if d.exists():
            shutil.rmtree(d)
    jobs = list(zip(spec.configs, map(str, spec.run_dirs)))
    if workers <= 1 or len(jobs) == 1:
        for cfg, d in jobs:
            _train_one(cfg, d)
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            for fut in [pool.submit(_train_one, cfg, d) for cfg, d in jobs]:
                fut.result()
    if spec.plot:
        aggregate([spec.out_dir], spec.out_dir / "summary")
    return spec.run_dirs


# -- verbs -----------------------------------------------------------------

def cmd_train(args):
    spec = build_experiment(args)
    for d in train_experiment(spec, worker_count()):
        print(d)
    return 0


def _latest_checkpoint(path: Path) -> Path:
    if (path / "task.ckpt").exists():
        return path
    found = sorted((path / "checkpoints").glob("step_*"))
    if not found:
        raise ConfigurationError(f"{path}: no checkpoint found")
    return found[-1]


def cmd_evaluate(args):
    if args.random:
        if not args.env:
            raise ConfigurationError("--random needs --env")
        result = random_policy_return(args.env, args.episodes or 10, args.seed or 0,
                                      args.obs_size or 48)
        label = f"random policy on {args.env}"
    else:
        if not args.checkpoint:
            raise ConfigurationError("evaluate needs --checkpoint DIR or --random")
        ckpt = _latest_checkpoint(Path(args.checkpoint))
        values = parse_config_text((ckpt / "config.txt").read_text())
        if args.episodes:
            values["eval_episodes"] = str(args.episodes)
        trainer = Trainer(config_from_mapping(values))
        meta = trainer.load_checkpoint(ckpt)
        result = trainer.evaluate()
        label = f"{ckpt} (step {meta['step']})"
    print(f"{label}: mean return {result.mean:.4f} over {len(result.returns)} episodes")
    print("returns: " + " ".join(f"{r:.4f}" for r in result.returns))
    return 0


def cmd_aggregate(args):
    rows = aggregate(args.inputs, args.out)
    print(f"{len(rows)} summary rows written to {Path(args.out) / 'summary.csv'}")
    return 0


def _seed_dirs(path: Path) -> dict[str, Path]:
    return {p.name: p for p in sorted(path.glob("seed_*")) if (p / "visits.csv").exists()}


def _visits(path: Path) -> Path:
    return path / "visits.csv" if path.is_dir() else path


def cmd_diversity(args):
    a, b = Path(args.a), Path(args.b)
    pairs = []
    if a.is_dir() and b.is_dir() and _seed_dirs(a) and _seed_dirs(b):
        sa, sb = _seed_dirs(a), _seed_dirs(b)
        common = sorted(set(sa) & set(sb), key=lambda s: int(s.split("_")[1]))
        if not common:
            raise ConfigurationError("no seed directories in common")
        pairs = [(name, sa[name] / "visits.csv", sb[name] / "visits.csv") for name in common]
    else:
        pairs = [("single", _visits(a), _visits(b))]
    out_rows = []
    for name, pa, pb in pairs:
        rep = coverage_report(VisitLog.read(pa), VisitLog.read(pb), k=args.k, bins=args.bins,
                              max_points=args.max_points, jitter=args.jitter)
        out_rows.append((name, rep))
        print(f"{name}: entropy {rep.entropy_a.value:.4f} vs {rep.entropy_b.value:.4f}, "
              f"coverage {rep.coverage_a:.4f} vs {rep.coverage_b:.4f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("pair", "metric", args.label_a, args.label_b,
                        f"{args.label_b}_minus_{args.label_a}"))
            for name, rep in out_rows:
                for metric, va, vb, diff in rep.rows():
                    w.writerow((name, metric, repr(float(va)), repr(float(vb)), repr(float(diff))))
    if len(out_rows) > 1:
        wins = sum(rep.entropy_b.value > rep.entropy_a.value for _, rep in out_rows)
        cov = [rep.coverage_difference for _, rep in out_rows]
        print(f"entropy higher for {args.label_b} in {wins} of {len(out_rows)} pairs; "
              f"mean coverage difference {np.mean(cov):+.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train one or more (mode, seed) runs")
    p.add_argument("--env", help="pendulum_swingup or point_reacher_sparse")
    p.add_argument("--mode", help=f"comma-separated subset of {', '.join(MODES)}")
    p.add_argument("--seeds", help="e.g. 0,1,2 or 0-4")
    p.add_argument("--steps", type=int, help="total environment steps per run")
    p.add_argument("--pc", type=float, help="curious-policy probability for rcac runs")
    p.add_argument("--obs-size", type=int)
    p.add_argument("--out", default="runs")
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--force", action="store_true", help="overwrite completed runs")
    p.add_argument("--no-plot", action="store_true", help="skip the summary and SVG curves")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or the random policy")
    p.add_argument("--checkpoint", help="run directory or checkpoint directory")
    p.add_argument("--random", action="store_true", help="uniform-random actions instead")
    p.add_argument("--env")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--obs-size", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("aggregate", help="summarise eval.csv files across seeds")
    p.add_argument("inputs", nargs="+", help="run directories or eval.csv files")
    p.add_argument("--out", default="summary")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("diversity", help="compare visited-state diversity of two runs")
    p.add_argument("a", help="visits.csv, run directory, or mode directory of seed_* runs")
    p.add_argument("b")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--max-points", type=int, default=None)
    p.add_argument("--jitter", type=float, default=DIVERSITY_JITTER,
                   help="uniform noise half-width added before the entropy estimate "
                        "(0 disables; exact repeats then give -inf)")
    p.add_argument("--label-a", default="a")
    p.add_argument("--label-b", default="b")
    p.add_argument("--out", help="write the comparison as CSV")
    p.set_defaults(func=cmd_diversity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RcacError, OSError) as exc:
        print(f"rcac {args.verb}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
