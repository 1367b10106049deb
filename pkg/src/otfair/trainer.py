"""Logistic regression under ``(1 - alpha) * cross-entropy + alpha * regularizer``.

Regularizers:

* ``otf``  - the adjusted entropic OTF cost of the batch scores, divided by
  the batch size so it is on the per-sample scale of the mean cross-entropy;
* ``norm`` - ``sum_c |(G_b h_b)_c| / b``;
* ``none`` - plain (unfair) logistic regression.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import constraints
from ._io import atomic_write_json, atomic_write_jsonl
from .constraints import ConstraintMatrix, restrict_to_batch
from .cost import batch_cost
from .errors import ConfigError, DataError, DegenerateGroupError, OTFError, TrainingError
from .evaluation import auc, pdp_violation, peo_violation
from .solver import SolverConfig, solve_adjusted

REGULARIZERS = ("otf", "norm", "none")
NOTIONS = ("pdp", "peo")
LARGE_EPSILON = 0.1


class LargeEpsilonWarning(UserWarning):
    """Strong smoothing washes out the unfairness signal of the OTF cost."""


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.bias = float(self.bias)

    def logits(self, X):
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def scores(self, X):
        return expit(self.logits(X))

    @property
    def params(self):
        return np.r_[self.weights, self.bias]

    @classmethod
    def from_params(cls, p):
        p = np.asarray(p, dtype=float)
        return cls(p[:-1].copy(), p[-1])

    def copy(self):
        return LogisticModel(self.weights.copy(), self.bias)


def default_training_solver():
    # Warm-started, loosely converged per batch. A single sweep moves the
    # fairness multipliers by only about eps, too slowly to follow the model.
    return SolverConfig(epsilon=1e-3, outer_tol=1e-4, max_outer_sweeps=300)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    regularizer: str = "otf"
    notion: str = "pdp"
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 1000
    seed: int = 0
    solver_cfg: SolverConfig = field(default_factory=default_training_solver)
    attributes: tuple | None = None
    cost_normalization: str = "none"
    warm_start: bool = True
    momentum: float = 0.0
    micro_batch_size: int | None = None
    init_scale: float = 0.01
    monitor_size: int = 256

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"regularizer must be one of {REGULARIZERS}")
        if self.notion not in NOTIONS:
            raise ConfigError(f"notion must be one of {NOTIONS}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.micro_batch_size is not None and self.micro_batch_size < 1:
            raise ConfigError("micro_batch_size must be at least 1")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must lie in [0, 1)")
        if self.init_scale < 0 or self.monitor_size < 0:
            raise ConfigError("init_scale and monitor_size must be non-negative")
        if self.cost_normalization not in ("none", "mean_scaled"):
            raise ConfigError(f"unknown cost normalization {self.cost_normalization!r}")
        if self.attributes is not None:
            object.__setattr__(self, "attributes", tuple(self.attributes))
        if self.regularizer == "otf" and self.solver_cfg.epsilon > LARGE_EPSILON:
            warnings.warn(
                f"epsilon = {self.solver_cfg.epsilon:g} > {LARGE_EPSILON}: the smoothed OTF cost "
                "loses most of its unfairness signal at this level", LargeEpsilonWarning,
                stacklevel=3)

    def to_dict(self):
        d = asdict(self)
        d["attributes"] = list(self.attributes) if self.attributes is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "solver_cfg" in d and isinstance(d["solver_cfg"], dict):
            d["solver_cfg"] = SolverConfig(**d["solver_cfg"])
        return cls(**d)


@dataclass
class TrainingTrace:
    """Epoch records; ``records[0]`` describes the model before the first update."""

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, key):
        return [r.get(key) for r in self.records]

    def write_jsonl(self, path):
        atomic_write_jsonl(path, self.records)


# -- losses ------------------------------------------------------------------

def cross_entropy(logits, y) -> float:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against ``y``."""
    z = np.asarray(logits, dtype=float)
    return float(np.mean(np.logaddexp(0.0, z) - np.asarray(y) * z))


def norm_regularizer(h_batch, G_batch):
    """``sum_c |(G h)_c| / b`` and its gradient, ``sign(0) = 0``."""
    G = G_batch.G if isinstance(G_batch, ConstraintMatrix) else np.atleast_2d(
        np.asarray(G_batch, dtype=float))
    h = np.asarray(h_batch, dtype=float).ravel()
    b = h.size
    if G.shape[1] != b:
        raise DataError(f"constraint matrix has {G.shape[1]} columns for {b} scores")
    r = G @ h
    return float(np.abs(r).sum() / b), G.T @ np.sign(r) / b


def solvable_rows(G: ConstraintMatrix) -> ConstraintMatrix:
    """Drop rows that no positive score vector can zero.

    With frozen expectations a batch that misses a group leaves that group's
    row single-signed; the batch says nothing about the group, and keeping
    the row would send its multiplier to infinity.
    """
    keep = (G.G > 0).any(axis=1) & (G.G < 0).any(axis=1)
    if keep.all():
        return G
    labels = [l for l, k in zip(G.row_labels, keep) if k] if G.row_labels else None
    return ConstraintMatrix(G.G[keep], G.notion, labels)


class OTFRegularizer:
    """Adjusted OTF cost per batch, warm-starting the duals from the previous batch."""

    def __init__(self, X, G: ConstraintMatrix, solver_cfg: SolverConfig,
                 normalization="none", warm_start=True):
        self.X = X
        self.G = G
        self.cfg = solver_cfg
        self.normalization = normalization
        self.warm_start = warm_start
        self.state = None

    def __call__(self, h, idx):
        C = batch_cost(self.X, idx, self.normalization)
        Gb = solvable_rows(restrict_to_batch(self.G, idx))
        b = len(idx)
        if Gb.d_f == 0:
            return 0.0, np.zeros(b), {"otfe": 0.0, "otfre": 0.0, "gap": 0.0}
        res = solve_adjusted(h, C, Gb, self.cfg, self.state if self.warm_start else None)
        if self.warm_start:
            self.state = (res.otfe.duals, res.otfre.duals)
        return res.cost / b, res.gradient / b, {
            "otfe": res.otfe.objective, "otfre": res.otfre.objective, "gap": res.cost}


def batch_loss_and_grad(model, X, y, alpha, reg_fn=None, idx=None, micro_batch_size=None):
    """Joint batch loss and its gradient in ``model.params``.

    ``reg_fn(h, idx)`` returns ``(value, d value / d h, info)``. The
    cross-entropy part may be accumulated over micro-batches in a fixed order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    b = y.size
    z = model.logits(X)
    h = expit(z)
    if micro_batch_size is None or micro_batch_size >= b:
        dz = (h - y) / b
        g = np.r_[X.T @ dz, dz.sum()]
    else:
        g = np.zeros(X.shape[1] + 1)
        for s in range(0, b, micro_batch_size):
            sl = slice(s, s + micro_batch_size)
            dz = (h[sl] - y[sl]) / b
            g += np.r_[X[sl].T @ dz, dz.sum()]
    ce = cross_entropy(z, y)
    loss = (1.0 - alpha) * ce
    g = (1.0 - alpha) * g
    info = {"cross_entropy": ce}
    if reg_fn is not None and alpha > 0:
        value, dh, extra = reg_fn(h, idx)
        dz = alpha * dh * h * (1.0 - h)
        g = g + np.r_[X.T @ dz, dz.sum()]
        loss += alpha * value
        info["regularizer"] = value
        info.update(extra)
    return loss, g, info


def _norm_fn(G):
    def fn(h, idx):
        v, d = norm_regularizer(h, restrict_to_batch(G, idx))
        return v, d, {}
    return fn


def _metrics(model, dataset, notion):
    s = model.scores(dataset.X)
    pdp = pdp_violation(s, dataset.S)
    rec = {"cross_entropy": cross_entropy(model.logits(dataset.X), dataset.Y),
           "pdp_violation": pdp}
    try:
        rec["auc"] = auc(s, dataset.Y)
        rec["peo_violation"] = peo_violation(s, dataset.S, dataset.Y)
    except DataError:
        rec["auc"] = rec["peo_violation"] = None
    rec["violation"] = rec["pdp_violation"] if notion == "pdp" else rec["peo_violation"]
    return rec


class _Monitor:
    """Tightly converged adjusted cost on one fixed sample, warm-started per epoch.

    The sample is treated as a dataset of its own: its constraint rows use the
    sample's expectations, so a model that is fair on the sample scores zero.
    """

    def __init__(self, dataset, G, cfg: TrainConfig):
        m = min(cfg.monitor_size, dataset.n)
        rng = np.random.default_rng([cfg.seed, 7])
        self.idx = np.sort(rng.choice(dataset.n, size=m, replace=False))
        self.X = dataset.X[self.idx]
        self.C = batch_cost(dataset.X, self.idx, cfg.cost_normalization)
        try:
            self.G = constraints.build(dataset.subset(self.idx), cfg.notion, cfg.attributes)
        except DegenerateGroupError:
            self.G = solvable_rows(restrict_to_batch(G, self.idx))
        self.cfg = replace(cfg.solver_cfg, max_outer_sweeps=10_000, outer_tol=1e-8)
        self.state = None

    def __call__(self, model):
        h = model.scores(self.X)
        if self.G.d_f == 0:
            return {"otfe": 0.0, "otfre": 0.0, "gap": 0.0, "monitor_size": int(self.idx.size)}
        res = solve_adjusted(h, self.C, self.G, self.cfg, self.state)
        self.state = (res.otfe.duals, res.otfre.duals)
        return {"otfe": res.otfe.objective, "otfre": res.otfre.objective, "gap": res.cost,
                "monitor_size": int(self.idx.size)}


def init_model(d, seed=0, scale=0.01):
    rng = np.random.default_rng([seed, 3])
    return LogisticModel(rng.normal(0.0, scale, d), 0.0)


def train(dataset, cfg: TrainConfig, model: LogisticModel | None = None,
          G: ConstraintMatrix | None = None, monitor: bool | None = None):
    """Mini-batch gradient descent on the joint objective.

    Batches come from an epoch-wise permutation drawn from ``cfg.seed``; the
    last short batch is kept. ``G`` defaults to the notion built over the
    whole ``dataset`` (frozen expectations). With ``monitor`` (default: on for
    the otf regularizer) each record also carries the converged OTF terms on
    a fixed batch of ``cfg.monitor_size`` samples.
    """
    n = dataset.n
    if cfg.batch_size > n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds the {n} training samples")
    reg = cfg.regularizer if cfg.alpha > 0 else "none"
    if G is None and (reg != "none" or monitor):
        G = constraints.build(dataset, cfg.notion, cfg.attributes)
    if model is None:
        model = init_model(dataset.d_x, cfg.seed, cfg.init_scale)
    else:
        model = model.copy()
    if reg == "otf":
        reg_fn = OTFRegularizer(dataset.X, G, cfg.solver_cfg, cfg.cost_normalization,
                                cfg.warm_start)
    elif reg == "norm":
        reg_fn = _norm_fn(G)
    else:
        reg_fn = None
    if monitor is None:
        monitor = reg == "otf"
    mon = _Monitor(dataset, G, cfg) if monitor and cfg.monitor_size > 0 else None

    rng = np.random.default_rng(cfg.seed)
    trace = TrainingTrace()

    def record(epoch, batch_stats):
        rec = {"epoch": epoch, **_metrics(model, dataset, cfg.notion)}
        if batch_stats:
            for key in ("loss", "regularizer", "otfe", "otfre", "gap"):
                vals = [s[key] for s in batch_stats if key in s]
                if vals:
                    rec[f"batch_{key}"] = float(np.mean(vals))
        if mon is not None:
            try:
                rec.update(mon(model))
            except OTFError as exc:
                raise TrainingError(f"monitor solve failed: {exc}", epoch=epoch) from exc
        trace.records.append(rec)

    record(0, None)
    params = model.params
    velocity = np.zeros_like(params)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        stats = []
        for k, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            try:
                loss, g, info = batch_loss_and_grad(
                    model, dataset.X[idx], dataset.Y[idx], cfg.alpha, reg_fn, idx,
                    cfg.micro_batch_size)
            except TrainingError:
                raise
            except OTFError as exc:
                raise TrainingError(str(exc), epoch=epoch, batch=k) from exc
            if not (math.isfinite(loss) and np.all(np.isfinite(g))):
                raise TrainingError("loss or gradient is not finite", epoch=epoch, batch=k)
            velocity = cfg.momentum * velocity + g
            params = params - cfg.learning_rate * velocity
            model = LogisticModel.from_params(params)
            stats.append({"loss": loss, **info})
        record(epoch, stats)
    return model, trace


def postprocess(model: LogisticModel, dataset, cfg: TrainConfig, G=None):
    """Continue training on the adjusted OTF cost alone (``alpha`` must be 1)."""
    if cfg.alpha != 1.0:
        raise ConfigError(f"postprocessing minimises the OTF term alone; alpha must be 1, got {cfg.alpha}")
    if cfg.regularizer != "otf":
        raise ConfigError("postprocessing requires the otf regularizer")
    return train(dataset, cfg, model=model, G=G, monitor=True)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: LogisticModel, path, feature_names=(), preprocessing=None):
    atomic_write_json(path, {
        "weights": [float(w) for w in model.weights],
        "bias": float(model.bias),
        "feature_names": list(feature_names),
        "preprocessing": preprocessing or {},
    })
    return Path(path)


def load_checkpoint(path):
    d = json.loads(Path(path).read_text())
    return LogisticModel(d["weights"], d["bias"]), d
