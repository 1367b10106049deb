"""Exact, desk-scale OTF linear programs.

A dense two-phase tableau simplex with Bland's pivoting rule. Only meant as a
ground-truth oracle for the entropic solvers, hence the hard size limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintMatrix
from .cost import CostMatrix
from .errors import DimensionError, InfeasibleError, LpSizeError

MAX_N = 16


class LpInfeasibleError(InfeasibleError):
    """Raised with a Farkas certificate ``y``: ``y @ A <= 0`` and ``y @ b > 0``."""

    def __init__(self, message, certificate=None, phase_one_value=None):
        super().__init__(message)
        self.certificate = certificate
        self.phase_one_value = phase_one_value


@dataclass
class LpInstance:
    C: np.ndarray
    h: np.ndarray
    G: np.ndarray
    relaxed: bool = False

    def __post_init__(self):
        self.C = np.asarray(self.C.C if isinstance(self.C, CostMatrix) else self.C, dtype=float)
        self.G = np.atleast_2d(np.asarray(
            self.G.G if isinstance(self.G, ConstraintMatrix) else self.G, dtype=float))
        self.h = np.asarray(self.h, dtype=float).ravel()
        n = self.h.size
        if n > MAX_N:
            raise LpSizeError(f"LP oracle is limited to n <= {MAX_N}, got {n}")
        if self.C.shape != (n, n) or self.G.shape[1] != n:
            raise DimensionError("C, G and h disagree on the number of samples")


def _pivot(T, basis, r, j):
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])
    basis[r] = j


def _iterate(T, basis, ncols, tol, max_iter):
    """Bland's rule on tableau ``T`` (last row = reduced costs, last col = rhs)."""
    m = T.shape[0] - 1
    for _ in range(max_iter):
        cost = T[-1, :ncols]
        entering = np.flatnonzero(cost < -tol)
        if entering.size == 0:
            return
        j = int(entering[0])
        col = T[:m, j]
        rows = np.flatnonzero(col > tol)
        if rows.size == 0:
            raise ArithmeticError("LP is unbounded")
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        r = int(min(ties, key=lambda k: basis[k]))
        _pivot(T, basis, r, j)
    raise ArithmeticError("simplex iteration limit reached")


def simplex(c, A_eq, b_eq, tol=1e-9, max_iter=50_000):
    """Minimise ``c @ x`` subject to ``A_eq @ x = b_eq``, ``x >= 0``.

    Returns ``(x, value)``. Raises ``LpInfeasibleError`` with a Farkas
    certificate when the feasible set is empty.
    """
    A = np.array(A_eq, dtype=float)
    b = np.array(b_eq, dtype=float)
    c = np.asarray(c, dtype=float)
    m, N = A.shape
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1

    # phase one: artificial basis
    T = np.zeros((m + 1, N + m + 1))
    T[:m, :N] = A
    T[:m, N:N + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :] = -T[:m, :].sum(axis=0)
    T[-1, N:N + m] = 0.0
    basis = list(range(N, N + m))
    _iterate(T, basis, N + m, tol, max_iter)
    infeas = -T[-1, -1]
    if infeas > tol * max(1.0, np.abs(b).max(initial=0.0)):
        y = 1.0 - T[-1, N:N + m]
        y[flip] *= -1
        raise LpInfeasibleError(
            f"no feasible coupling (phase-one residual {infeas:.3g})", y, infeas)

    # drive artificials out of the basis; rows where that fails are redundant
    keep = []
    for r in range(m):
        if basis[r] >= N:
            cand = np.flatnonzero(np.abs(T[r, :N]) > tol)
            if cand.size:
                _pivot(T, basis, r, int(cand[0]))
                keep.append(r)
        else:
            keep.append(r)
    T = np.vstack([T[keep][:, list(range(N)) + [-1]], np.zeros(N + 1)])
    basis = [basis[r] for r in keep]

    # phase two
    T[-1, :N] = c
    for r, j in enumerate(basis):
        T[-1] -= c[j] * T[r]
    _iterate(T, basis, N, tol, max_iter)
    x = np.zeros(N)
    for r, j in enumerate(basis):
        x[j] = T[r, -1]
    x[np.abs(x) < tol * 1e-3] = 0.0
    return x, float(c @ x)


def build_lp(instance: LpInstance):
    """Standard-form ``(c, A, b)`` over ``vec(P)`` (row-major) plus slacks."""
    C, h, G = instance.C, instance.h, instance.G
    n, d_f = h.size, G.shape[0]
    nv = n * n
    rows, rhs = [], []
    for i in range(n):
        a = np.zeros((n, n))
        a[i, :] = 1.0
        rows.append(a.ravel())
        rhs.append(h[i])
    # (G P^T 1)_c = sum_ij G_cj P_ij
    fair = np.array([np.tile(G[c], n) for c in range(d_f)])
    if not instance.relaxed:
        rows.extend(fair)
        rhs.extend([0.0] * d_f)
        A = np.array(rows)
        cost = C.ravel()
    else:
        gamma = np.abs(G @ h)
        base = np.array(rows)
        n_slack = 2 * d_f
        A = np.zeros((n + n_slack, nv + n_slack))
        A[:n, :nv] = base
        for c in range(d_f):
            A[n + 2 * c, :nv] = fair[c]
            A[n + 2 * c, nv + 2 * c] = 1.0
            A[n + 2 * c + 1, :nv] = -fair[c]
            A[n + 2 * c + 1, nv + 2 * c + 1] = 1.0
            rhs.extend([gamma[c], gamma[c]])
        cost = np.concatenate([C.ravel(), np.zeros(n_slack)])
    return cost, A, np.array(rhs)


def solve_lp(instance: LpInstance, tol=1e-9):
    """Exact unsmoothed OTF cost and an optimal coupling.

    ``instance.relaxed`` selects ``|G P^T 1| <= |G h|`` instead of
    ``G P^T 1 = 0``.
    """
    n = instance.h.size
    cost, A, b = build_lp(instance)
    x, value = simplex(cost, A, b, tol=tol)
    return value, x[:n * n].reshape(n, n)


def otf_lp(h, C, G, relaxed=False):
    return solve_lp(LpInstance(C, h, G, relaxed))
