"""Command line entry point (``saic`` or ``python -m saic``).

Every subcommand accepts ``--config`` (preset name or file) plus one flag per
config key, e.g. ``--episodes 50000 --rate_bits 1,2``.  Flags win over the
config file.  Artifacts go to ``<out>/run-<hash>-<timestamp>/``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import aggregation as agg
from . import harness, qcore, schemes
from .harness import CONFIG_KEYS, ExperimentConfig

log = logging.getLogger("saic")


def _config(args, extra: dict | None = None) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in CONFIG_KEYS if getattr(args, k, None) is not None}
    overrides.update(extra or {})
    if args.config:
        return harness.load_config(args.config, overrides)
    return ExperimentConfig.from_dict(overrides)


def _run_dir(args, cfg: ExperimentConfig) -> Path:
    out = harness.run_dir_name(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text())
    return out


def _dump(out: Path, name: str, payload: dict) -> None:
    (out / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_train_central(args) -> int:
    cfg = _config(args)
    out = _run_dir(args, cfg)
    results = []
    for seed in cfg.seeds:
        res = schemes.run_centralized(cfg.spec, cfg.train.replace(seed=seed))
        qcore.save_table(out / f"central_q_seed{seed}.npz", res.extras["q"], cfg.train.gamma, seed)
        results.append(res)
        print(f"seed {seed}: greedy return {res.mean_return:.4f} normalized {res.normalized:.4f}")
    harness.write_summary(out / "summary.csv", results, cfg.smooth_window)
    harness.write_curves(out / "curves.csv", results, cfg.smooth_window, cfg.curve_stride)
    print(out)
    return 0


def cmd_aggregate(args) -> int:
    cfg = _config(args)
    out = _run_dir(args, cfg)
    seed = cfg.seeds[0]
    if args.q:
        q, meta = qcore.load_table(args.q)
        if meta["kind"] != "central":
            raise SystemExit(f"{args.q}: expected a central table, got {meta['kind']!r}")
    else:
        q, _ = qcore.train_centralized(cfg.spec, cfg.train.replace(seed=seed))
        qcore.save_table(out / f"central_q_seed{seed}.npz", q, cfg.train.gamma, seed)
    p_obs = agg.reset_distribution(cfg.spec)
    for rate in cfg.rates:
        values, part = schemes.saic_partition(cfg.spec, q, rate, cfg.marginal)
        eps = agg.epsilon_of_partition(values, part)
        ratio = agg.compression_ratio(p_obs, agg.message_distribution(part.assignment, p_obs))
        agg.write_grid_csv(out / f"partition_R{rate}.csv", part.assignment, cfg.spec)
        agg.write_grid_csv(out / f"values_R{rate}.csv", values, cfg.spec, fmt=lambda v: f"{v:.6g}")
        _dump(out, f"aggregate_R{rate}.json", {
            "rate": rate, "classes": part.k, "epsilon": eps,
            "bound": agg.return_gap_bound(eps, cfg.train.gamma),
            "kmedian_cost": agg.kmedian_cost(values, part), "ratio": agg.format_ratio(ratio)})
        print(f"R={rate}: {part.k} classes, epsilon {eps:.4g}, ratio {agg.format_ratio(ratio)}")
        print(agg.partition_grid(part.assignment, cfg.spec))
    print(out)
    return 0


def cmd_train_dist(args) -> int:
    cfg = _config(args)
    out = _run_dir(args, cfg)
    if args.partition:
        assignment = agg.read_grid_csv(args.partition, dtype=int)
        if assignment.size != cfg.spec.n_cells:
            raise SystemExit(f"{args.partition}: {assignment.size} cells, grid has {cfg.spec.n_cells}")
        ids = np.unique(assignment)
        rate = max(0, int(np.ceil(np.log2(len(ids)))))
        comm = schemes.CommPolicy(np.searchsorted(ids, assignment), rate)
    else:
        comm = schemes.CommPolicy.identity(cfg.spec)
    results = []
    for seed in cfg.seeds:
        train = cfg.train.replace(seed=seed)
        res = schemes.run_distributed(cfg.spec, train, comm, comm, "distributed", cfg.dist_rule)
        for i in (1, 2):
            qcore.save_table(out / f"agent{i}_q_seed{seed}.npz", res.extras[f"q{i}"],
                             train.gamma, seed, kind=f"agent{i}")
        results.append(res)
        print(f"seed {seed}: greedy return {res.mean_return:.4f} normalized {res.normalized:.4f}")
    harness.write_summary(out / "summary.csv", results, cfg.smooth_window)
    harness.write_curves(out / "curves.csv", results, cfg.smooth_window, cfg.curve_stride)
    print(out)
    return 0


def _sweep(args, cfg: ExperimentConfig) -> int:
    out = harness.run_dir_name(cfg, args.out)
    results, failures = harness.run_sweep(cfg, out)
    print(harness.report(out))
    print(out)
    return 1 if failures else 0


def cmd_run(args) -> int:
    return _sweep(args, _config(args, {"schemes": args.scheme}))


def cmd_sweep(args) -> int:
    args.config = args.source
    return _sweep(args, _config(args))


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "summary.csv").is_file():
        print(f"{run_dir}: no summary.csv", file=sys.stderr)
        return 2
    print(harness.report(run_dir))
    with open(run_dir / "summary.csv") as fh:
        failed = any(",error: " in line for line in fh)
    return 1 if failed else 0


def _add_config_flags(p: argparse.ArgumentParser, with_config: bool = True) -> None:
    if with_config:
        p.add_argument("--config", help="preset name or config file")
    p.add_argument("--out", default="runs", help="root directory for run directories")
    g = p.add_argument_group("config overrides")
    for key, doc in CONFIG_KEYS.items():
        g.add_argument(f"--{key}", metavar="V", help=doc)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saic", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-central", help="centralized Q-learning, saves Q-tables")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_central)

    p = sub.add_parser("aggregate", help="value k-median partition(s) from a central Q-table")
    _add_config_flags(p)
    p.add_argument("--q", help="central Q-table (.npz); trained from scratch if omitted")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("train-dist", help="distributed Q-learning with a fixed message map")
    _add_config_flags(p)
    p.add_argument("--partition", help="partition grid CSV; identity messages if omitted")
    p.set_defaults(func=cmd_train_dist)

    p = sub.add_parser("run", help="run one scheme over the configured rates and seeds")
    p.add_argument("scheme", choices=sorted(schemes.SCHEMES))
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a preset or config file")
    p.add_argument("source", help=f"preset ({', '.join(harness.preset_names())}) or config file")
    _add_config_flags(p, with_config=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="print the tables of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"saic: error: {exc}", file=sys.stderr)
        return 2
