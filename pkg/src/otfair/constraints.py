"""Constraint matrices for linear fairness notions.

A linear fairness notion is a matrix ``G`` (one row per constraint, one column
per sample) such that a score vector ``f`` is fair iff ``G @ f == 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGroupError, DimensionError

# below this |mean|/std a continuous attribute is treated in covariance form
CONTINUOUS_MEAN_RTOL = 1e-6


@dataclass(frozen=True)
class ConstraintMatrix:
    G: np.ndarray
    notion: str
    row_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        G = np.array(self.G, dtype=float, ndmin=2)
        G.setflags(write=False)
        object.__setattr__(self, "G", G)
        if not self.row_labels:
            object.__setattr__(self, "row_labels", [f"c{c}" for c in range(G.shape[0])])
        if len(self.row_labels) != G.shape[0]:
            raise DimensionError("row_labels length does not match the number of rows of G")

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def d_f(self) -> int:
        return self.G.shape[0]

    def residual(self, scores) -> np.ndarray:
        return self.G @ np.asarray(scores, dtype=float)


def _group_rows(S, kinds, names, mask=None):
    """Rows ``S_k / E[S_k] - 1`` (or the covariance form), optionally within a mask.

    With a mask the expectation is conditional on the mask and entries outside
    it are zero.
    """
    n = S.shape[0]
    sel = np.ones(n, dtype=bool) if mask is None else mask
    rows, labels = [], []
    for k in range(S.shape[1]):
        col = S[:, k]
        sub = col[sel]
        row = np.zeros(n)
        mean = sub.mean()
        if kinds[k] == "continuous":
            std = sub.std()
            if abs(mean) <= CONTINUOUS_MEAN_RTOL * max(std, 1.0):
                if std == 0.0:
                    raise DegenerateGroupError(f"continuous attribute {names[k]!r} is constant")
                row[sel] = (sub - mean) / std
                rows.append(row)
                labels.append(f"{names[k]}:cov")
                continue
        if mean == 0.0:
            raise DegenerateGroupError(f"group {names[k]!r} is empty")
        row[sel] = sub / mean - 1.0
        rows.append(row)
        labels.append(names[k])
    return rows, labels


def pdp_matrix(S, kinds=None, names=None) -> ConstraintMatrix:
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] < 2:
        raise DimensionError("need at least two samples")
    d_s = S.shape[1]
    kinds = list(kinds) if kinds is not None else ["categorical"] * d_s
    names = list(names) if names is not None else [f"s{k}" for k in range(d_s)]
    rows, labels = _group_rows(S, kinds, names)
    return ConstraintMatrix(np.vstack(rows), "PDP", labels)


def peo_matrix(S, Y, kinds=None, names=None) -> ConstraintMatrix:
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    Y = np.asarray(Y).astype(int)
    if Y.shape[0] != S.shape[0]:
        raise DimensionError("S and Y disagree on the number of samples")
    d_s = S.shape[1]
    kinds = list(kinds) if kinds is not None else ["categorical"] * d_s
    names = list(names) if names is not None else [f"s{k}" for k in range(d_s)]
    rows, labels = [], []
    # row index k + l * d_s
    for label in (0, 1):
        mask = Y == label
        if not mask.any():
            raise DegenerateGroupError(f"no samples with label {label}")
        try:
            r, lab = _group_rows(S, kinds, names, mask)
        except DegenerateGroupError as exc:
            raise DegenerateGroupError(f"{exc} within label {label}") from None
        rows.extend(r)
        labels.extend(f"{x}|y={label}" for x in lab)
    return ConstraintMatrix(np.vstack(rows), "PEO", labels)


def _select(dataset, attributes):
    if attributes is None:
        return dataset.S, dataset.s_kinds, dataset.s_column_names
    cols = [
        k for k, (attr, _) in enumerate(dataset.s_columns) if attr in set(attributes)
    ]
    missing = set(attributes) - {dataset.s_columns[k][0] for k in cols}
    if missing:
        raise DimensionError(f"unknown sensitive attributes: {sorted(missing)}")
    return (
        dataset.S[:, cols],
        [dataset.s_kinds[k] for k in cols],
        [dataset.s_column_names[k] for k in cols],
    )


def build_pdp(dataset, attributes=None) -> ConstraintMatrix:
    """Probabilistic demographic parity, one row per sensitive column.

    Expectations are empirical means over ``dataset``. Pass ``attributes`` to
    restrict the notion to some of the sensitive attributes.
    """
    S, kinds, names = _select(dataset, attributes)
    return pdp_matrix(S, kinds, names)


def build_peo(dataset, attributes=None) -> ConstraintMatrix:
    """Probabilistic equalized odds: the PDP rows conditioned on each label.

    Row ``k + l * d_S`` is ``Y_l * (S_k / E[S_k | Y = l] - 1)``.
    """
    S, kinds, names = _select(dataset, attributes)
    return peo_matrix(S, dataset.Y, kinds, names)


def build(dataset, notion: str, attributes=None) -> ConstraintMatrix:
    notion = notion.lower()
    if notion == "pdp":
        return build_pdp(dataset, attributes)
    if notion == "peo":
        return build_peo(dataset, attributes)
    raise ValueError(f"unknown fairness notion {notion!r}")


def concat(matrices) -> ConstraintMatrix:
    matrices = list(matrices)
    if not matrices:
        raise DimensionError("nothing to concatenate")
    if len(matrices) == 1:
        return matrices[0]
    ns = {m.n for m in matrices}
    if len(ns) != 1:
        raise DimensionError(f"constraint matrices built over different sample counts: {sorted(ns)}")
    notions = {m.notion for m in matrices}
    notion = notions.pop() if len(notions) == 1 else "composite"
    labels = [lab for m in matrices for lab in m.row_labels]
    return ConstraintMatrix(np.vstack([m.G for m in matrices]), notion, labels)


def restrict_to_batch(cm: ConstraintMatrix, indices) -> ConstraintMatrix:
    """Column subset of ``cm``; the frozen full-set expectations are kept."""
    idx = np.asarray(indices, dtype=int)
    if idx.ndim != 1 or idx.size == 0:
        raise DimensionError("indices must be a non-empty 1-D list")
    if idx.min() < 0 or idx.max() >= cm.n:
        raise DimensionError(f"index out of range for {cm.n} samples")
    if np.unique(idx).size != idx.size:
        raise DimensionError("duplicate batch indices")
    return ConstraintMatrix(cm.G[:, idx], cm.notion, list(cm.row_labels))


def annihilates_constants(G, rtol=1e-9) -> bool:
    G = np.asarray(G, dtype=float)
    scale = max(np.abs(G).sum(axis=1).max(initial=0.0), 1.0)
    return bool(np.abs(G.sum(axis=1)).max(initial=0.0) <= rtol * scale)
