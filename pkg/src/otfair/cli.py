"""Command-line entry point: ``otfair {train,sweep,postprocess,generate}``.

Every run writes its fully resolved configuration to ``<out>/config.json``;
``--config <that file>`` repeats the run. Values in a config file override
command-line flags, except that an explicit ``--out`` is kept so a rerun can
go to a fresh directory.

Exit codes: 2 configuration, 3 data, 4 numeric, 1 any other library error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._io import atomic_write_csv, atomic_write_json, atomic_write_jsonl
from .data import (
    SyntheticSpec, generate_synthetic, load_csv, load_saved, save, train_test_split,
)
from .errors import ConfigError, DataError, DimensionError, NumericError, OTFError
from .evaluation import MetricsReport, aggregate_sweep, evaluate, write_table
from .trainer import TrainConfig, init_model, postprocess, save_checkpoint, train

log = logging.getLogger("otfair")

COMMANDS = ("train", "sweep", "postprocess", "generate")
DEFAULT_ALPHAS = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_SEEDS = {"train": 1, "sweep": 10, "postprocess": 5, "generate": 1}
_SYNTHETIC_KEYS = {"n": "n", "d_x": "d_x", "dx": "d_x", "groups": "group_count",
                   "group_count": "group_count", "bias": "bias_strength",
                   "bias_strength": "bias_strength", "seed": "seed"}


@dataclass
class RunConfig:
    command: str
    data: str | None = None
    schema: str | None = None
    out: str = "runs"
    seeds: list = field(default_factory=list)
    test_fraction: float = 0.2
    methods: list = field(default_factory=lambda: ["otf"])
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    epsilon_grid: list | None = None
    epochs_pre: int = 25
    monitor_full: bool = True
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.seeds = [int(s) for s in self.seeds]
        if not (0.0 < self.test_fraction < 1.0):
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.epochs_pre < 0:
            raise ConfigError("epochs_pre must be non-negative")
        if self.command == "sweep":
            if not self.methods or not self.alphas or self.epsilon_grid == []:
                raise ConfigError("sweep grid is empty")
            for a in self.alphas:
                if not 0.0 <= a <= 1.0:
                    raise ConfigError(f"alpha must lie in [0, 1], got {a}")
            for e in self.epsilon_grid or ():
                if not (e > 0 and math.isfinite(e)):
                    raise ConfigError(f"epsilon must be positive, got {e}")
        if self.command != "generate" and self.data is None:
            raise ConfigError("--data is required")
        if self.data is not None and not self.data.startswith("synthetic"):
            if not Path(self.data).is_file():
                raise ConfigError(f"dataset not found: {self.data}")
        # building the training config validates every field in it
        self.train_config()

    def train_config(self, **overrides) -> TrainConfig:
        d = dict(self.train)
        d.update(overrides)
        return TrainConfig.from_dict(d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# -- parsing -----------------------------------------------------------------

def parse_list(text, kind=float):
    items = [t.strip() for t in str(text).split(",")]
    return [kind(t) for t in items if t]


def parse_seeds(text):
    """``"5"`` means seeds 0..4; ``"3,7"`` and ``"2-4"`` list seeds explicitly."""
    text = str(text).strip()
    if "," in text:
        return parse_list(text, int)
    if "-" in text.lstrip("-"):
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return list(range(int(text)))


def parse_synthetic(text) -> SyntheticSpec:
    _, _, rest = text.partition(":")
    kwargs = {}
    for part in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = part.partition("=")
        if not sep or key.strip() not in _SYNTHETIC_KEYS:
            raise ConfigError(f"bad synthetic option {part!r}; keys: {sorted(_SYNTHETIC_KEYS)}")
        name = _SYNTHETIC_KEYS[key.strip()]
        kwargs[name] = float(value) if name == "bias_strength" else int(value)
    try:
        return SyntheticSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_dataset(data, schema=None):
    if data.startswith("synthetic"):
        return generate_synthetic(parse_synthetic(data))
    if schema is None:
        if Path(f"{data}.json").is_file():
            return load_saved(data)
        raise ConfigError("--schema is required for a raw CSV file")
    return load_csv(data, schema)


def build_parser():
    p = argparse.ArgumentParser(prog="otfair", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file; its values override flags")
        sp.add_argument("--out", help="output directory (file for generate)")
        sp.add_argument("--data", help="CSV path, saved dataset, or synthetic[:n=..,bias=..,seed=..]")
        sp.add_argument("--seeds", help="count (5) or list (3,7) or range (2-4)")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "generate":
            continue
        sp.add_argument("--schema", help="e.g. 'label=y;sensitive=sex,age:continuous;drop=id'")
        sp.add_argument("--notion", choices=("pdp", "peo"))
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--test-fraction", type=float)
        sp.add_argument("--cost-normalization", choices=("none", "mean_scaled"))
        if name == "sweep":
            sp.add_argument("--reg", help="comma list of methods (otf,norm,none)")
            sp.add_argument("--alphas", help="comma list of alpha values")
            sp.add_argument("--epsilon-grid", help="comma list of epsilon values (otf only)")
        elif name == "train":
            sp.add_argument("--reg", choices=("otf", "norm", "none"))
            sp.add_argument("--alpha", type=float)
        else:
            sp.add_argument("--epochs-pre", type=int)
    return p


def resolve(args) -> RunConfig:
    cmd = args.command
    d = {"command": cmd, "seeds": list(range(DEFAULT_SEEDS[cmd])), "train": {}}
    if cmd == "postprocess":
        d["data"] = "synthetic"
        d["train"].update(alpha=1.0, regularizer="otf", epochs=25)
    if cmd == "generate":
        d["data"] = "synthetic"
    tr = d["train"]
    get = lambda name: getattr(args, name, None)  # noqa: E731
    for name in ("data", "schema", "out", "test_fraction", "epochs_pre"):
        if get(name) is not None:
            d[name] = get(name)
    if get("seeds") is not None:
        d["seeds"] = parse_seeds(args.seeds)
    for flag, key in (("notion", "notion"), ("epochs", "epochs"), ("lr", "learning_rate"),
                      ("batch_size", "batch_size"), ("alpha", "alpha"),
                      ("cost_normalization", "cost_normalization")):
        if get(flag) is not None:
            tr[key] = get(flag)
    if get("reg") is not None:
        if cmd == "sweep":
            d["methods"] = parse_list(args.reg, str)
        else:
            tr["regularizer"] = args.reg
    if get("alphas") is not None:
        d["alphas"] = parse_list(args.alphas)
    if get("epsilon_grid") is not None:
        d["epsilon_grid"] = parse_list(args.epsilon_grid)
    if get("epsilon") is not None:
        tr["solver_cfg"] = asdict(replace(TrainConfig().solver_cfg, epsilon=args.epsilon))

    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        file_train = file_cfg.pop("train", {})
        file_cfg.pop("command", None)
        if args.out is not None:
            file_cfg.pop("out", None)
        d.update(file_cfg)
        tr.update(file_train)
    if d.get("out") is None:
        d["out"] = f"runs/{cmd}"
    try:
        d["train"] = TrainConfig.from_dict(tr).to_dict()
        return RunConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


# -- runs --------------------------------------------------------------------

def _split(dataset, cfg: RunConfig, seed):
    return train_test_split(dataset, cfg.test_fraction, seed)


def run_cell(dataset, cfg: RunConfig, seed, overrides):
    """One isolated (method, alpha, epsilon, seed) training run."""
    tcfg = cfg.train_config(seed=seed, **overrides)
    tr, te = _split(dataset, cfg, seed)
    model, trace = train(tr, tcfg, monitor=False)
    return model, trace, evaluate(model.scores(tr.X), tr, "train"), evaluate(
        model.scores(te.X), te, "test")


def _sweep_cell(job):
    dataset, cfg, cell = job
    overrides = {"regularizer": cell["method"], "alpha": cell["alpha"]}
    if cell["epsilon"] is not None:
        base = cfg.train_config().solver_cfg
        overrides["solver_cfg"] = replace(base, epsilon=cell["epsilon"])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, _, rep_tr, rep_te = run_cell(dataset, cfg, cell["seed"], overrides)
        return {**cell, "train": rep_tr.to_dict(), "test": rep_te.to_dict()}
    except OTFError as exc:
        return {**cell, "error": f"{type(exc).__name__}: {exc}"}


def sweep_cells(cfg: RunConfig):
    eps_grid = cfg.epsilon_grid or [None]
    cells = []
    for method in cfg.methods:
        if method not in ("otf", "norm", "none"):
            raise ConfigError(f"unknown method {method!r}")
        alphas = [0.0] if method == "none" else cfg.alphas
        epsilons = eps_grid if method == "otf" else [None]
        for alpha in alphas:
            for eps in epsilons:
                for seed in cfg.seeds:
                    cells.append({"method": method, "alpha": float(alpha), "epsilon": eps,
                                  "seed": seed})
    return cells


def worker_count(n_jobs):
    raw = os.environ.get("OTF_WORKERS")
    if raw is None:
        workers = os.cpu_count() or 1
    else:
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ConfigError(f"OTF_WORKERS must be an integer, got {raw!r}") from exc
        if workers < 1:
            raise ConfigError("OTF_WORKERS must be at least 1")
    return max(1, min(workers, n_jobs))


def cmd_train(cfg: RunConfig, dataset) -> int:
    out = Path(cfg.out)
    summary = []
    for seed in cfg.seeds:
        model, trace, rep_tr, rep_te = run_cell(dataset, cfg, seed, {})
        d = out / f"seed_{seed}"
        save_checkpoint(model, d / "model.json", dataset.column_names, dataset.preprocessing)
        trace.write_jsonl(d / "trace.jsonl")
        atomic_write_json(d / "metrics.json", {"train": rep_tr.to_dict(), "test": rep_te.to_dict()})
        for rep in (rep_tr, rep_te):
            summary.append({"seed": seed, "split": rep.split, "auc": rep.auc,
                            "pdp_violation": rep.pdp_violation, "peo_violation": rep.peo_violation})
        log.info("seed %d: test auc %.4f pdp %.4f peo %.4f", seed, rep_te.auc,
                 rep_te.pdp_violation, rep_te.peo_violation)
    atomic_write_csv(out / "metrics.csv", summary)
    return 0


def cmd_sweep(cfg: RunConfig, dataset) -> int:
    out = Path(cfg.out)
    cells = sweep_cells(cfg)
    jobs = [(dataset, cfg, c) for c in cells]
    workers = worker_count(len(jobs))
    log.info("sweep: %d cells on %d worker(s)", len(jobs), workers)
    if workers == 1:
        results = [_sweep_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    atomic_write_jsonl(out / "runs.jsonl", results)
    failed = [r for r in results if "error" in r]
    atomic_write_json(out / "failures.json", failed)
    for r in failed:
        log.warning("cell %s alpha=%s eps=%s seed=%s failed: %s", r["method"], r["alpha"],
                    r["epsilon"], r["seed"], r["error"])
    ok = [r for r in results if "error" not in r]
    if not ok:
        raise NumericError(f"all {len(results)} sweep cells failed")
    notion = cfg.train_config().notion
    runs = [({"method": r["method"], "alpha": r["alpha"], "epsilon": r["epsilon"],
              "notion": notion}, MetricsReport.from_dict(r[split]))
            for r in ok for split in ("train", "test")]
    rows = aggregate_sweep(runs)
    write_table([r for r in rows if r["split"] == "test"], out / "sweep")
    write_table([r for r in rows if r["split"] == "train"], out / "sweep_train")
    atomic_write_csv(out / "tradeoff.csv", [
        {k: r[k] for k in ("method", "alpha", "epsilon", "auc_mean", "auc_se",
                           "violation_mean", "violation_se")}
        for r in rows if r["split"] == "test"])
    return 0


CURVE_KEYS = ("otfe", "otfre", "gap", "pdp_violation")


def curves(traces):
    """Mean and SD over seeds per epoch of the postprocessing curves."""
    rows = []
    for epoch in range(min(len(t) for t in traces)):
        row = {"epoch": epoch}
        for key in CURVE_KEYS:
            vals = np.array([t.records[epoch][key] for t in traces], dtype=float)
            row[f"{key}_mean"] = float(vals.mean())
            row[f"{key}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else float("nan")
        rows.append(row)
    return rows


def cmd_postprocess(cfg: RunConfig, dataset) -> int:
    out = Path(cfg.out)
    traces = []
    for seed in cfg.seeds:
        tr, te = _split(dataset, cfg, seed)
        post = cfg.train_config(seed=seed)
        if cfg.monitor_full:
            post = replace(post, monitor_size=tr.n)
        if cfg.epochs_pre > 0:
            pre = replace(post, alpha=0.0, regularizer="none", epochs=cfg.epochs_pre)
            model, pre_trace = train(tr, pre, monitor=False)
        else:
            model, pre_trace = init_model(tr.d_x, seed, post.init_scale), None
        model, trace = postprocess(model, tr, post)
        d = out / f"seed_{seed}"
        if pre_trace is not None:
            pre_trace.write_jsonl(d / "pretrain_trace.jsonl")
        trace.write_jsonl(d / "trace.jsonl")
        save_checkpoint(model, d / "model.json", dataset.column_names, dataset.preprocessing)
        atomic_write_json(d / "metrics.json", {
            "train": evaluate(model.scores(tr.X), tr, "train").to_dict(),
            "test": evaluate(model.scores(te.X), te, "test").to_dict()})
        traces.append(trace)
        g = trace.column("gap")
        log.info("seed %d: gap %.4g -> %.4g", seed, g[0], g[-1])
    atomic_write_csv(out / "curves.csv", curves(traces))
    return 0


def cmd_generate(cfg: RunConfig) -> int:
    dataset = load_dataset(cfg.data)
    path = Path(cfg.out)
    if path.suffix != ".csv":
        path = path / "synthetic.csv"
    save(dataset, path)
    log.info("wrote %d rows to %s", dataset.n, path)
    return 0


def run(cfg: RunConfig) -> int:
    if cfg.command == "generate":
        return cmd_generate(cfg)
    dataset = load_dataset(cfg.data, cfg.schema)
    for w in dataset.warnings:
        log.warning("%s", w)
    atomic_write_json(Path(cfg.out) / "config.json", cfg.to_dict())
    handler = {"train": cmd_train, "sweep": cmd_sweep, "postprocess": cmd_postprocess}
    return handler[cfg.command](cfg, dataset)


def exit_code(exc: OTFError) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, (DataError, DimensionError)):
        return 3
    if isinstance(exc, NumericError):
        return 4
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        try:
            cfg = resolve(args)
        except ValueError as exc:
            # malformed numbers in list flags
            raise ConfigError(str(exc)) from exc
        return run(cfg)
    except OTFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
