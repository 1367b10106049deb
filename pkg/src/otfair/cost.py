"""Transport cost matrices over (non-protected) input features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DataError, DimensionError

NORMALIZATIONS = ("none", "mean_scaled")
# refuse to materialize a dense cost matrix above this many samples
MAX_DENSE_N = 20_000


@dataclass(frozen=True)
class CostMatrix:
    C: np.ndarray
    metric_tag: str = "euclidean"
    normalization: str = "none"

    def __post_init__(self):
        C = np.array(self.C, dtype=float, ndmin=2)
        if C.shape[0] != C.shape[1]:
            raise DimensionError(f"cost matrix must be square, got {C.shape}")
        if np.any(C < 0):
            raise DataError("cost matrix has negative entries")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.C.shape[0]


def _check_finite(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        raise DataError(f"non-finite feature at sample {int(np.flatnonzero(bad)[0])}")
    return X


def _normalize(C, normalization):
    if normalization == "none":
        return C
    if normalization == "mean_scaled":
        m = C.mean()
        return C / m if m > 0 else C
    raise ValueError(f"unknown normalization {normalization!r}; expected one of {NORMALIZATIONS}")


def euclidean_cost(X, normalization: str = "none", max_n: int = MAX_DENSE_N) -> CostMatrix:
    X = _check_finite(X)
    if X.shape[0] > max_n:
        raise ConfigError(
            f"{X.shape[0]} samples exceed the dense cost limit of {max_n}; use batch_cost")
    C = cdist(X, X, metric="euclidean")
    return CostMatrix(_normalize(C, normalization), "euclidean", normalization)


def batch_cost(X, indices, normalization: str = "none") -> CostMatrix:
    """Euclidean cost between the rows ``X[indices]`` only."""
    idx = np.asarray(indices, dtype=int)
    if idx.ndim != 1 or idx.size == 0:
        raise DimensionError("indices must be a non-empty 1-D list")
    X = np.asarray(X)
    n = X.shape[0]
    if idx.min() < 0 or idx.max() >= n:
        raise DimensionError(f"index out of range for {n} samples")
    return euclidean_cost(X[idx], normalization)
