"""Predictive and fairness metrics on probabilistic scores, and sweep tables."""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._io import atomic_write_csv, atomic_write_json
from .errors import ConfigError, DataError, DimensionError


class DegenerateScoreWarning(UserWarning):
    """Correlation undefined (constant scores or constant group column)."""


@dataclass
class MetricsReport:
    auc: float
    pdp_violation: float
    peo_violation: float
    per_attribute: dict = field(default_factory=dict)
    split: str = "test"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["auc"], d["pdp_violation"], d["peo_violation"],
                   {k: tuple(v) for k, v in d.get("per_attribute", {}).items()},
                   d.get("split", "test"))


def auc(scores, labels) -> float:
    """ROC AUC in Mann-Whitney form; tied pairs count one half."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if s.size != y.size:
        raise DimensionError("scores and labels differ in length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both label values")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _abs_corr(s, S):
    """|Pearson(s, S_k)| per column; 0 for a constant side."""
    s = s - s.mean()
    S = S - S.mean(axis=0)
    ss = math.sqrt(float(s @ s))
    sS = np.sqrt((S * S).sum(axis=0))
    out = np.zeros(S.shape[1])
    if ss == 0.0:
        warnings.warn("constant scores: correlation undefined, violation set to 0",
                      DegenerateScoreWarning, stacklevel=3)
        return out
    ok = sS > 0
    if not ok.all():
        warnings.warn("constant sensitive column: its violation is set to 0",
                      DegenerateScoreWarning, stacklevel=3)
    out[ok] = np.abs(s @ S[:, ok]) / (ss * sS[ok])
    return np.minimum(out, 1.0)


def _prep(scores, S):
    s = np.asarray(scores, dtype=float).ravel()
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] != s.size:
        raise DimensionError("scores and S differ in length")
    if s.size == 0:
        raise DataError("no samples")
    return s, S


def pdp_violation(scores, S, per_column=False):
    """Largest absolute Pearson correlation between the scores and a column of ``S``."""
    s, S = _prep(scores, S)
    r = _abs_corr(s, S)
    return r if per_column else float(r.max(initial=0.0))


def peo_violation(scores, S, labels, per_column=False):
    """``pdp_violation`` within each label slice, maximised over the slices."""
    s, S = _prep(scores, S)
    y = np.asarray(labels).astype(int).ravel()
    if y.size != s.size:
        raise DimensionError("scores and labels differ in length")
    per = []
    for label in (0, 1):
        m = y == label
        if not m.any():
            raise DataError(f"empty label slice y={label}")
        per.append(_abs_corr(s[m], S[m]))
    r = np.maximum(*per)
    return r if per_column else float(r.max(initial=0.0))


def evaluate(scores, dataset, split="test") -> MetricsReport:
    pdp = pdp_violation(scores, dataset.S, per_column=True)
    peo = peo_violation(scores, dataset.S, dataset.Y, per_column=True)
    per_attr = {}
    for attr, _ in dataset.sensitive_spec:
        cols = dataset.attribute_columns(attr)
        per_attr[attr] = (float(pdp[cols].max()), float(peo[cols].max()))
    return MetricsReport(auc(scores, dataset.Y), float(pdp.max()), float(peo.max()),
                         per_attr, split)


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def aggregate_sweep(runs):
    """Mean and standard error per (method, alpha, epsilon, split).

    ``runs`` is a list of ``(config, MetricsReport)`` with config a mapping
    holding at least ``method``, ``alpha`` and ``notion``. All runs must share
    one notion; ``violation`` is the metric of that notion.
    """
    runs = list(runs)
    if not runs:
        raise ConfigError("no runs to aggregate")
    notions = {str(cfg["notion"]).lower() for cfg, _ in runs}
    if len(notions) != 1:
        raise ConfigError(f"mixed fairness notions in one aggregate: {sorted(notions)}")
    notion = notions.pop()
    cells = defaultdict(list)
    for cfg, rep in runs:
        key = (cfg["method"], float(cfg["alpha"]), cfg.get("epsilon"), rep.split)
        cells[key].append(rep)
    rows = []
    for (method, alpha, eps, split), reps in cells.items():
        viol = [r.pdp_violation if notion == "pdp" else r.peo_violation for r in reps]
        auc_m, auc_se = _mean_se([r.auc for r in reps])
        v_m, v_se = _mean_se(viol)
        pdp_m, pdp_se = _mean_se([r.pdp_violation for r in reps])
        peo_m, peo_se = _mean_se([r.peo_violation for r in reps])
        rows.append({
            "method": method, "alpha": alpha, "notion": notion, "epsilon": eps,
            "split": split, "runs": len(reps),
            "auc_mean": auc_m, "auc_se": auc_se,
            "violation_mean": v_m, "violation_se": v_se,
            "pdp_mean": pdp_m, "pdp_se": pdp_se, "peo_mean": peo_m, "peo_se": peo_se,
        })
    rows.sort(key=lambda r: (r["split"], r["method"], r["alpha"],
                             -1.0 if r["epsilon"] is None else r["epsilon"]))
    return rows


def write_table(rows, stem):
    """``<stem>.csv`` and ``<stem>.json``."""
    atomic_write_csv(f"{stem}.csv", rows)
    atomic_write_json(f"{stem}.json", rows)
