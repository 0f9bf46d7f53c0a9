"""Experiment configuration, sweeps and CSV output.

Config files are flat ``key = value`` text (``#`` starts a comment).  List
values are comma separated.  Recognised keys are listed in ``CONFIG_KEYS``.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import aggregation as agg
from .gridworld import GridSpec
from .qcore import TrainConfig
from .schemes import SCHEMES, SchemeResult, run_scheme

log = logging.getLogger(__name__)

CONFIG_KEYS = {
    "grid_size": "side length N of the grid",
    "goal_cell": "goal cell index (row-major from bottom-left)",
    "reward_small": "reward when exactly one agent enters the goal",
    "reward_large": "reward when both agents enter together",
    "gamma": "discount factor",
    "alpha": "learning rate",
    "ucb_c": "UCB exploration constant",
    "episodes": "training episodes K per phase",
    "horizon": "step cap M per episode",
    "rate_bits": "channel rate(s) R in bits, comma separated",
    "schemes": "scheme names, comma separated",
    "seeds": "seeds, comma separated",
    "smooth_window": "moving-average window for learning curves",
    "dist_rule": "distributed update rule: optimistic | standard",
    "marginal": "marginal over the other agent's cell: reset | occupancy",
    "workers": "parallel worker processes",
    "curve_stride": "write every n-th episode to curves.csv (0 = auto)",
}

# schemes whose behaviour does not depend on the configured rate
RATE_FREE = {"centralized": None, "nocomm": 0, "hnc": 0, "hoc": 1}


def smooth(series, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def normalize(raw: float, centralized_optimum: float) -> float:
    if centralized_optimum <= 0:
        raise ValueError("centralized optimum must be positive")
    return raw / centralized_optimum


# --------------------------------------------------------------------------
# configuration


def parse_config_text(text: str) -> dict:
    cfg = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        cfg[key] = value
    return cfg


def _ints(value) -> list[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(v) for v in str(value).split(",") if v.strip()]


def _names(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return list(value)
    return [v.strip() for v in str(value).split(",") if v.strip()]


@dataclass
class ExperimentConfig:
    spec: GridSpec = field(default_factory=GridSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    schemes: list[str] = field(default_factory=lambda: ["centralized", "saic"])
    rates: list[int] = field(default_factory=lambda: [2])
    seeds: list[int] = field(default_factory=lambda: [0])
    smooth_window: int = 20_000
    dist_rule: str = "optimistic"
    marginal: str = "reset"
    workers: int = 1
    curve_stride: int = 0

    def __post_init__(self):
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ValueError(f"unregistered schemes: {unknown}")
        if self.smooth_window < 1:
            raise ValueError("smooth_window must be >= 1")
        if any(r < 0 for r in self.rates):
            raise ValueError("rates must be non-negative")
        if self.dist_rule not in ("optimistic", "standard"):
            raise ValueError(f"unknown dist_rule {self.dist_rule!r}")

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        kw = {"spec": GridSpec.from_config(cfg), "train": TrainConfig.from_config(cfg)}
        if "schemes" in cfg:
            kw["schemes"] = _names(cfg["schemes"])
        if "rate_bits" in cfg:
            kw["rates"] = _ints(cfg["rate_bits"])
        if "seeds" in cfg:
            kw["seeds"] = _ints(cfg["seeds"])
        for key in ("smooth_window", "workers", "curve_stride"):
            if key in cfg:
                kw[key] = int(cfg[key])
        for key in ("dist_rule", "marginal"):
            if key in cfg:
                kw[key] = str(cfg[key]).strip()
        return cls(**kw)

    def to_dict(self) -> dict:
        s, t = self.spec, self.train
        return {
            "grid_size": s.n, "goal_cell": s.goal, "reward_small": s.reward_small,
            "reward_large": s.reward_large, "gamma": t.gamma, "alpha": t.alpha, "ucb_c": t.ucb_c,
            "episodes": t.episodes, "horizon": t.horizon,
            "rate_bits": ",".join(map(str, self.rates)), "schemes": ",".join(self.schemes),
            "seeds": ",".join(map(str, self.seeds)), "smooth_window": self.smooth_window,
            "dist_rule": self.dist_rule, "marginal": self.marginal,
            "workers": self.workers, "curve_stride": self.curve_stride,
        }

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())

    def digest(self) -> str:
        # workers does not change results, so it stays out of the hash
        d = {k: v for k, v in self.to_dict().items() if k != "workers"}
        return hashlib.sha1(repr(sorted(d.items())).encode()).hexdigest()[:10]


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("saic.presets").iterdir()
                  if p.name.endswith(".cfg"))


def load_config(source: str, overrides: dict | None = None) -> ExperimentConfig:
    """Load a preset by name or a config file by path, then apply overrides."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif source in preset_names():
        text = resources.files("saic.presets").joinpath(f"{source}.cfg").read_text()
    else:
        raise FileNotFoundError(f"{source!r} is neither a config file nor a preset "
                                f"({', '.join(preset_names())})")
    cfg = parse_config_text(text)
    for k, v in (overrides or {}).items():
        if k not in CONFIG_KEYS:
            raise ValueError(f"unknown key {k!r}")
        cfg[k] = v
    return ExperimentConfig.from_dict(cfg)


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class Cell:
    scheme: str
    rate: int | None
    seed: int


def cells_of(cfg: ExperimentConfig) -> list[Cell]:
    out = []
    for name in cfg.schemes:
        rates = [RATE_FREE[name]] if name in RATE_FREE else cfg.rates
        for rate in rates:
            for seed in cfg.seeds:
                out.append(Cell(name, rate, seed))
    return out


def cell_key(cfg: ExperimentConfig, cell: Cell):
    # config order, so permuting the seed list permutes the rows
    return (cfg.schemes.index(cell.scheme), -1 if cell.rate is None else cell.rate,
            cfg.seeds.index(cell.seed))


def run_cell(cfg: ExperimentConfig, cell: Cell) -> SchemeResult:
    train = cfg.train.replace(seed=cell.seed)
    kw = {}
    if cell.scheme in ("saic", "cic", "lbic", "nocomm"):
        kw["rule"] = cfg.dist_rule
    if cell.scheme in ("saic", "hybrid"):
        kw["marginal"] = cfg.marginal
    rate = 0 if cell.rate is None else cell.rate
    return run_scheme(cell.scheme, cfg.spec, train, rate, **kw)


def _slim(res: SchemeResult) -> SchemeResult:
    keep = {k: res.extras[k] for k in ("partition", "values", "ratio") if k in res.extras}
    res.extras = keep
    return res


def _run_cell_safe(cfg: ExperimentConfig, cell: Cell):
    try:
        return cell, _slim(run_cell(cfg, cell)), None
    except Exception as exc:  # recorded per cell, the sweep carries on
        log.exception("cell %s failed", cell)
        return cell, None, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: ExperimentConfig, out_dir=None):
    """Run every (scheme, rate, seed) cell and write the CSV artifacts.

    Returns ``(results, failures)``: results ordered by cell key, failures a
    list of ``(cell, message)``.  When ``out_dir`` is given the CSVs land there.
    """
    cells = cells_of(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            done = list(pool.map(_run_cell_safe, [cfg] * len(cells), cells))
    else:
        done = [_run_cell_safe(cfg, c) for c in cells]
    done.sort(key=lambda item: cell_key(cfg, item[0]))
    results = [r for _, r, err in done if err is None]
    failures = [(c, err) for c, _, err in done if err is not None]
    if out_dir is not None:
        write_run(Path(out_dir), cfg, results, failures)
    return results, failures


def run_dir_name(cfg: ExperimentConfig, root=".") -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return Path(root) / f"run-{cfg.digest()}-{stamp}"


# --------------------------------------------------------------------------
# CSV output

SUMMARY_FIELDS = ["scheme", "rate", "seed", "mean_return", "se", "normalized",
                  "train_smoothed", "epsilon", "bound", "ratio", "status"]
AGGREGATE_FIELDS = ["scheme", "rate", "n_seeds", "mean_normalized", "se_normalized",
                    "mean_return", "se_return"]


def _num(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def summary_row(res: SchemeResult, window: int) -> dict:
    ratio = res.extras.get("ratio")
    return {
        "scheme": res.scheme,
        "rate": "" if res.rate is None else str(res.rate),
        "seed": str(res.seed),
        "mean_return": _num(res.mean_return),
        "se": _num(res.se),
        "normalized": _num(res.normalized),
        "train_smoothed": _num(res.final_smoothed(window)),
        "epsilon": _num(res.epsilon),
        "bound": _num(res.bound),
        "ratio": agg.format_ratio(ratio) if ratio else "",
        "status": "ok",
    }


def write_summary(path, results, window: int, failures=()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for res in results:
            w.writerow(summary_row(res, window))
        for cell, err in failures:
            w.writerow({"scheme": cell.scheme, "rate": "" if cell.rate is None else cell.rate,
                        "seed": cell.seed, "status": f"error: {err}"})


def read_summary(path) -> list[SchemeResult]:
    """Reload the ok rows of a summary CSV (training curves are not restored)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["status"] != "ok":
                continue
            opt = lambda k: float(row[k]) if row[k] else None  # noqa: E731
            extras = {}
            if row["ratio"]:
                a, b = row["ratio"].split(":")
                extras["ratio"] = (int(a), int(b))
            if row["train_smoothed"]:
                extras["train_smoothed"] = float(row["train_smoothed"])
            out.append(SchemeResult(
                scheme=row["scheme"], rate=int(row["rate"]) if row["rate"] else None,
                seed=int(row["seed"]), record=None, mean_return=float(row["mean_return"]),
                normalized=float(row["normalized"]), se=float(row["se"]),
                epsilon=opt("epsilon"), bound=opt("bound"), extras=extras))
    return out


def aggregate(results) -> list[dict]:
    """Across-seed mean and standard error per (scheme, rate), in first-seen order."""
    groups: dict = {}
    for res in results:
        groups.setdefault((res.scheme, res.rate), []).append(res)
    rows = []
    for (scheme, rate), rs in groups.items():
        norm = np.array([r.normalized for r in rs])
        raw = np.array([r.mean_return for r in rs])
        n = len(rs)
        se = (lambda x: float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
        rows.append({"scheme": scheme, "rate": "" if rate is None else rate, "n_seeds": n,
                     "mean_normalized": float(norm.mean()), "se_normalized": se(norm),
                     "mean_return": float(raw.mean()), "se_return": se(raw)})
    return rows


def write_aggregate(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGGREGATE_FIELDS)
        w.writeheader()
        for row in aggregate(results):
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})


def write_curves(path, results, window: int, stride: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "rate", "seed", "episode", "smoothed_return"])
        for res in results:
            if res.record is None:
                continue
            sm = res.record.smoothed(window)
            step = stride or max(1, len(sm) // 1000)
            idx = np.arange(step - 1, len(sm), step)
            rate = "" if res.rate is None else res.rate
            for i in idx:
                w.writerow([res.scheme, rate, res.seed, int(i) + 1, f"{sm[i]:.6g}"])


def write_run(out: Path, cfg: ExperimentConfig, results, failures=()) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text())
    write_summary(out / "summary.csv", results, cfg.smooth_window, failures)
    write_aggregate(out / "aggregate.csv", results)
    write_curves(out / "curves.csv", results, cfg.smooth_window, cfg.curve_stride)
    for res in results:
        part = res.extras.get("partition")
        if part is None:
            continue
        tag = f"{res.scheme}_R{res.rate}_seed{res.seed}"
        agg.write_grid_csv(out / f"partition_{tag}.csv", part.assignment, cfg.spec)
        if "values" in res.extras:
            agg.write_grid_csv(out / f"values_{tag}.csv", res.extras["values"], cfg.spec,
                               fmt=lambda v: f"{v:.6g}")


def format_table(rows: list[dict], fields: list[str]) -> str:
    cells = [[str(r.get(f, "")) for f in fields] for r in rows]
    widths = [max(len(f), *(len(c[i]) for c in cells)) if cells else len(f)
              for i, f in enumerate(fields)]
    lines = ["  ".join(f.ljust(w) for f, w in zip(fields, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def report(run_dir) -> str:
    """Text report of a run directory: per-cell summary and across-seed aggregate."""
    run_dir = Path(run_dir)
    results = read_summary(run_dir / "summary.csv")
    per_cell = [{"scheme": r.scheme, "rate": "" if r.rate is None else r.rate, "seed": r.seed,
                 "normalized": f"{r.normalized:.4f}", "return": f"{r.mean_return:.4f}",
                 "epsilon": "" if r.epsilon is None else f"{r.epsilon:.4g}",
                 "ratio": agg.format_ratio(r.extras["ratio"]) if "ratio" in r.extras else ""}
                for r in results]
    agg_rows = [{k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()}
                for row in aggregate(results)]
    parts = [f"run: {run_dir}", "", format_table(per_cell, list(per_cell[0]) if per_cell else ["scheme"]),
             "", format_table(agg_rows, AGGREGATE_FIELDS)]
    with open(run_dir / "summary.csv", newline="") as fh:
        failed = [row for row in csv.DictReader(fh) if row["status"] != "ok"]
    if failed:
        parts += ["", f"{len(failed)} failed cell(s):"]
        parts += [f"  {r['scheme']} R={r['rate']} seed={r['seed']}: {r['status']}" for r in failed]
    return "\n".join(parts)

