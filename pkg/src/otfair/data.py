"""Tabular datasets with designated sensitive attributes.

Loading, preprocessing (standardization, one-hot encoding), a synthetic
generator with a tunable group bias, and a lossless CSV + JSON round trip.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, ParseError, SchemaError

log = logging.getLogger(__name__)

MISSING = frozenset({"", "?", "na", "nan", "null", "none"})
KINDS = ("categorical", "continuous")
_LABEL_TRUE = frozenset({"1", "1.0", "true", "yes"})
_LABEL_FALSE = frozenset({"0", "0.0", "false", "no"})


@dataclass(frozen=True)
class Schema:
    """Column roles of a CSV file.

    ``sensitive`` maps column name to its kind (categorical or continuous).
    ``positive_label``, when set, maps that raw label value to 1 and every
    other value to 0; otherwise labels must already be 0/1.
    """

    label: str
    sensitive: dict = field(default_factory=dict)
    drop: tuple = ()
    positive_label: str | None = None

    def __post_init__(self):
        sens = dict(self.sensitive)
        for name, kind in sens.items():
            if kind not in KINDS:
                raise SchemaError(f"sensitive column {name!r}: unknown kind {kind!r}")
        if not sens:
            raise SchemaError("schema declares no sensitive column")
        if self.label in sens:
            raise SchemaError("label column cannot also be sensitive")
        object.__setattr__(self, "sensitive", sens)
        object.__setattr__(self, "drop", tuple(self.drop))

    @classmethod
    def from_dict(cls, d):
        sens = d.get("sensitive", {})
        if isinstance(sens, (list, tuple)):
            sens = {s: "categorical" for s in sens} if all(isinstance(s, str) for s in sens) \
                else {name: kind for name, kind in sens}
        return cls(d["label"], sens, tuple(d.get("drop", ())), d.get("positive_label"))

    def to_dict(self):
        return {"label": self.label, "sensitive": dict(self.sensitive),
                "drop": list(self.drop), "positive_label": self.positive_label}

    @classmethod
    def parse(cls, text):
        """Compact flag form: ``label=y;sensitive=sex,age:continuous;drop=id``."""
        parts = dict(p.split("=", 1) for p in text.split(";") if p.strip())
        if "label" not in parts:
            raise SchemaError("schema string needs label=<column>")
        sens = {}
        for item in filter(None, parts.get("sensitive", "").split(",")):
            name, _, kind = item.partition(":")
            sens[name.strip()] = kind.strip() or "categorical"
        drop = tuple(filter(None, (s.strip() for s in parts.get("drop", "").split(","))))
        return cls(parts["label"].strip(), sens, drop, parts.get("positive_label"))


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 2000
    d_x: int = 5
    group_count: int = 2
    bias_strength: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d_x < 1:
            raise ValueError("n and d_x must be positive")
        if self.group_count < 2:
            raise ValueError("group_count must be at least 2")
        if self.bias_strength < 0:
            raise ValueError("bias_strength must be non-negative")


@dataclass(frozen=True)
class TabularDataset:
    """Preprocessed samples ``(X, S, Y)``.

    ``s_columns`` has one ``(attribute, level)`` entry per column of ``S``;
    ``level`` is None for continuous attributes.
    """

    X: np.ndarray
    S: np.ndarray
    Y: np.ndarray
    column_names: list
    sensitive_spec: list
    s_columns: list
    preprocessing: dict = field(default_factory=dict)
    warnings: tuple = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        S = np.array(self.S, dtype=float, ndmin=2)
        Y = np.asarray(self.Y).astype(np.int64).ravel()
        n = Y.size
        if n < 1:
            raise DataError("empty dataset")
        if X.shape[0] != n or S.shape[0] != n:
            raise DimensionError("X, S and Y disagree on the number of samples")
        if len(self.column_names) != X.shape[1] or len(self.s_columns) != S.shape[1]:
            raise DimensionError("column metadata does not match the matrices")
        if not np.isin(Y, (0, 1)).all():
            raise SchemaError("labels must be binary")
        for a in (X, S, Y):
            a.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "column_names", list(self.column_names))
        object.__setattr__(self, "sensitive_spec", [tuple(s) for s in self.sensitive_spec])
        object.__setattr__(self, "s_columns", [tuple(s) for s in self.s_columns])
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def n(self):
        return self.Y.size

    @property
    def d_x(self):
        return self.X.shape[1]

    @property
    def d_s(self):
        return self.S.shape[1]

    @property
    def s_kinds(self):
        kind = dict(self.sensitive_spec)
        return [kind[attr] for attr, _ in self.s_columns]

    @property
    def s_column_names(self):
        return [attr if lvl is None else f"{attr}={lvl}" for attr, lvl in self.s_columns]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=int)
        return TabularDataset(self.X[idx], self.S[idx], self.Y[idx], self.column_names,
                              self.sensitive_spec, self.s_columns, self.preprocessing,
                              self.warnings)

    def attribute_columns(self, attribute):
        return [k for k, (a, _) in enumerate(self.s_columns) if a == attribute]

    def equals(self, other):
        return (
            np.array_equal(self.X, other.X) and np.array_equal(self.S, other.S)
            and np.array_equal(self.Y, other.Y)
            and self.column_names == other.column_names
            and self.sensitive_spec == other.sensitive_spec
            and self.s_columns == other.s_columns
        )


# -- preprocessing -----------------------------------------------------------

def _as_float(v):
    try:
        x = float(v)
    except ValueError:
        return None
    return x if math.isfinite(x) else None


def _levels(values):
    # first-appearance order
    return list(dict.fromkeys(values))


def _standardize(col):
    mean = col.mean()
    std = col.std()
    return (col - mean) / std, float(mean), float(std)


def _parse_label(values, positive_label):
    if positive_label is not None:
        return np.array([v == positive_label for v in values], dtype=np.int64)
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        s = v.strip().lower()
        if s in _LABEL_TRUE:
            out[i] = 1
        elif s in _LABEL_FALSE:
            out[i] = 0
        else:
            raise SchemaError(f"label value {v!r} is not binary (row {i + 1})")
    return out


def read_csv(path):
    """Header plus rows as strings; raises ParseError with the 1-based data row."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file") from None
        except csv.Error as exc:
            raise ParseError(str(exc), row=0) from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise ParseError("duplicate column names in header", row=0)
        rows = []
        while True:
            try:
                row = next(reader)
            except StopIteration:
                break
            except csv.Error as exc:
                raise ParseError(str(exc), row=len(rows) + 1) from None
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(row)}", row=len(rows) + 1)
            rows.append([c.strip() for c in row])
    return header, rows


def preprocess(header, rows, schema: Schema) -> TabularDataset:
    for col in [schema.label, *schema.sensitive, *schema.drop]:
        if col not in header:
            raise SchemaError(f"column {col!r} not found in header")
    notes = []
    kept = [r for r in rows if not any(c.lower() in MISSING for c in r)]
    if len(kept) < len(rows):
        notes.append(f"dropped {len(rows) - len(kept)} rows with missing values")
    if not kept:
        raise DataError("no complete rows left after dropping missing values")
    cols = {h: [r[j] for r in kept] for j, h in enumerate(header)}

    Y = _parse_label(cols[schema.label], schema.positive_label)

    S_parts, s_columns, s_params = [], [], {}
    for name, kind in schema.sensitive.items():
        vals = cols[name]
        if kind == "continuous":
            x = np.array([_as_float(v) for v in vals], dtype=object)
            if any(v is None for v in x):
                raise SchemaError(f"continuous sensitive column {name!r} has non-numeric values")
            x = x.astype(float)
            if x.std() == 0:
                raise SchemaError(f"continuous sensitive column {name!r} is constant")
            z, m, s = _standardize(x)
            S_parts.append(z[:, None])
            s_columns.append((name, None))
            s_params[name] = {"kind": kind, "mean": m, "std": s}
        else:
            levels = _levels(vals)
            S_parts.append(np.array([[v == lv for lv in levels] for v in vals], dtype=float))
            s_columns.extend((name, lv) for lv in levels)
            s_params[name] = {"kind": kind, "levels": levels}

    skip = {schema.label, *schema.sensitive, *schema.drop}
    X_parts, names, x_params = [], [], {}
    for h in header:
        if h in skip:
            continue
        vals = cols[h]
        nums = [_as_float(v) for v in vals]
        if all(v is not None for v in nums):
            raw = {h: np.array(nums, dtype=float)}
            x_params[h] = {"kind": "numeric"}
        else:
            levels = _levels(vals)
            raw = {f"{h}={lv}": np.array([v == lv for v in vals], dtype=float) for lv in levels}
            x_params[h] = {"kind": "categorical", "levels": levels}
        for cname, col in raw.items():
            if col.std() == 0:
                notes.append(f"dropped constant column {cname!r}")
                continue
            z, m, s = _standardize(col)
            X_parts.append(z)
            names.append(cname)
            x_params[h].setdefault("scaling", {})[cname] = [m, s]
    for msg in notes:
        log.warning(msg)
    X = np.column_stack(X_parts) if X_parts else np.zeros((len(kept), 0))
    return TabularDataset(
        X, np.hstack(S_parts), Y, names, list(schema.sensitive.items()), s_columns,
        {"features": x_params,
         "sensitive": s_params, "schema": schema.to_dict()},
        tuple(notes),
    )


def load_csv(path, schema) -> TabularDataset:
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    elif isinstance(schema, str):
        schema = Schema.parse(schema)
    header, rows = read_csv(path)
    if not rows:
        raise DataError("file has a header but no rows")
    return preprocess(header, rows, schema)


# -- serialization -----------------------------------------------------------

def _sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def save(dataset: TabularDataset, path):
    """Columnar CSV (exact float repr) plus a JSON sidecar with the metadata."""
    path = Path(path)
    header = [f"x:{c}" for c in dataset.column_names] + \
             [f"s:{c}" for c in dataset.s_column_names] + ["y"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            w.writerow([repr(float(v)) for v in dataset.X[i]]
                       + [repr(float(v)) for v in dataset.S[i]] + [int(dataset.Y[i])])
    meta = {
        "column_names": dataset.column_names,
        "sensitive_spec": [list(s) for s in dataset.sensitive_spec],
        "s_columns": [list(s) for s in dataset.s_columns],
        "preprocessing": dataset.preprocessing,
        "warnings": list(dataset.warnings),
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_saved(path) -> TabularDataset:
    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise DataError(f"missing metadata sidecar {sidecar}")
    meta = json.loads(sidecar.read_text())
    header, rows = read_csv(path)
    dx, ds = len(meta["column_names"]), len(meta["s_columns"])
    if len(header) != dx + ds + 1:
        raise SchemaError("serialized dataset does not match its sidecar")
    try:
        A = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), dx + ds + 1)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    return TabularDataset(
        A[:, :dx], A[:, dx:dx + ds], A[:, -1].astype(np.int64), meta["column_names"],
        [tuple(s) for s in meta["sensitive_spec"]],
        [(a, lv) for a, lv in meta["s_columns"]], meta["preprocessing"], meta["warnings"],
    )


# -- synthetic data ----------------------------------------------------------

def generate_synthetic(spec: SyntheticSpec) -> TabularDataset:
    """Gaussian features where feature 0 is shifted by ``bias_strength`` for
    group 0; the label depends on feature 0 and, more strongly, on feature 1."""
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n, spec.d_x
    group = rng.integers(0, spec.group_count, size=n)
    Z = rng.standard_normal((n, d))
    Z[:, 0] += spec.bias_strength * (group == 0)
    w = np.zeros(d)
    w[0] = 1.0
    if d > 1:
        w[1] = 2.0
    centre = spec.bias_strength / spec.group_count
    logits = (Z - np.r_[centre, np.zeros(d - 1)]) @ w
    Y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(np.int64)
    keep = Z.std(axis=0) > 0
    X = (Z[:, keep] - Z[:, keep].mean(axis=0)) / Z[:, keep].std(axis=0)
    S = (group[:, None] == np.arange(spec.group_count)).astype(float)
    return TabularDataset(
        X, S, Y, [f"x{j}" for j in np.flatnonzero(keep)], [("group", "categorical")],
        [("group", str(g)) for g in range(spec.group_count)],
        {"synthetic": {"n": n, "d_x": d, "group_count": spec.group_count,
                       "bias_strength": spec.bias_strength, "seed": spec.seed}},
    )


def train_test_split(dataset: TabularDataset, test_fraction=0.2, seed=0):
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    if dataset.n < 2:
        raise DataError("need at least two samples to split")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    n_test = min(max(1, int(round(test_fraction * dataset.n))), dataset.n - 1)
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))
