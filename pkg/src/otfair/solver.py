"""Entropic OTF solvers.

Both problems transport the mass of a score vector ``h`` over the samples,
with coupling ``P`` (row sums ``h``), cost ``<C, P> - eps * H(P)`` and
``H(P) = -sum P (log P - 1)``:

* ``solve_otfe``  - column sums must be fair, ``G P^T 1 = 0``;
* ``solve_otfre`` - column sums may be as unfair as ``h``, ``|G P^T 1| <= |G h|``.

Each is solved through its dual by exact coordinate ascent. Row multipliers
have a closed-form update (a log-sum-exp); every fairness multiplier is a
one-dimensional root find on the column masses. For the equality problem each
sweep opens with a damped Newton step on the fairness multipliers, kept only
when it raises the dual. Everything is kept in the
log domain: with ``eps = 1e-3`` and unit costs, ``exp(C / eps)`` overflows.

The difference of the two costs, ``adjusted_otf``, is zero for fair ``h`` and
differentiable in ``h`` through the converged dual variables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .constraints import ConstraintMatrix, annihilates_constants
from .cost import CostMatrix
from .errors import ConfigError, DimensionError, InfeasibleError, NumericError

Trace = Optional[Callable[[dict], None]]

# bracket growth before a fairness multiplier is declared unbounded
_MAX_BRACKET_DOUBLINGS = 80
_MAX_EXTRAPOLATION_DOUBLINGS = 40
# beyond this total log mass the dual value is -inf for all practical purposes
_MAX_LOG_MASS = 700.0
_NEWTON_RADIUS = 4.0


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-3
    outer_tol: float = 1e-8
    max_outer_sweeps: int = 10_000
    inner_tol: float = 1e-10
    inner_max_iters: int = 100
    score_floor: float = 1e-6
    anneal: bool = True
    extrapolate: bool = True
    newton: bool = True

    def __post_init__(self):
        for name in ("epsilon", "outer_tol", "inner_tol", "score_floor"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be positive and finite, got {value!r}")
        for name in ("max_outer_sweeps", "inner_max_iters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.score_floor > 1:
            raise ConfigError("score_floor must not exceed 1")


@dataclass
class DualState:
    lam: np.ndarray
    mu: np.ndarray


@dataclass
class RelaxedDualState:
    kappa: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    gamma: np.ndarray


@dataclass
class SolveResult:
    objective: float
    duals: object
    coupling_row_marginals: np.ndarray
    coupling_col_marginals: np.ndarray
    fairness_residual: np.ndarray
    converged: bool
    sweeps_used: int
    history: list = field(default_factory=list, repr=False)


@dataclass
class AdjustedResult:
    cost: float
    gradient: np.ndarray
    otfe: SolveResult
    otfre: SolveResult


def _as_arrays(h, C, G, cfg):
    C = C.C if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    G = G.G if isinstance(G, ConstraintMatrix) else np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[None, :]
    h = np.asarray(h, dtype=float).ravel()
    n = h.size
    if C.shape != (n, n):
        raise DimensionError(f"cost matrix shape {C.shape} does not match {n} scores")
    if G.shape[1] != n:
        raise DimensionError(f"constraint matrix has {G.shape[1]} columns for {n} scores")
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite score")
    return np.clip(h, cfg.score_floor, 1.0), C, G


def check_feasible(G) -> None:
    """Raise unless some nonzero score vector satisfies ``G f = 0``.

    Notions built from centred rows annihilate the constant vector; anything
    else falls back to a rank test.
    """
    G = np.asarray(G, dtype=float)
    if annihilates_constants(G):
        return
    if np.linalg.matrix_rank(G) >= G.shape[1]:
        raise InfeasibleError("constraint matrix has full column rank: no fair score vector exists")


def logsumexp(a, axis=None):
    """Max-shifted log-sum-exp (lean replacement for the scipy version)."""
    a = np.asarray(a)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.item() if axis is None else np.squeeze(out, axis=axis)


def _numeric_guard(eps, C, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            cmax = float(np.max(np.abs(C))) if C.size else 0.0
            raise NumericError(
                f"non-finite dual variable (epsilon={eps:g}, max|C|/epsilon={cmax / eps:g})"
            )


def _row_update(h, C, v, eps):
    # closed-form maximiser over every row multiplier at once
    return eps * np.log(h) - eps * logsumexp((v[None, :] - C) / eps, axis=1)


def _log_col_mass(C, row_dual, v, eps):
    return logsumexp((row_dual[:, None] - C) / eps, axis=0) + v / eps


def _log_row_mass(C, row_dual, v, eps):
    return row_dual / eps + logsumexp((v[None, :] - C) / eps, axis=1)


def _signed_lse(x, pos, neg):
    a = logsumexp(x[pos]) if pos.any() else -np.inf
    b = logsumexp(x[neg]) if neg.any() else -np.inf
    return a, b


def solve_shift(log_f, g, target=0.0, lo=-np.inf, hi=np.inf, tol=1e-10, max_iter=100):
    """Return ``d`` in ``[lo, hi]`` with ``sum_j g_j exp(log_f_j + d g_j) = target``.

    The left side is increasing in ``d``; when the root lies outside the
    interval the nearest bound is returned. Solved with Newton steps on
    ``log(A + t-) - log(B + t+)`` (``A``/``B`` the positive/negative parts),
    guarded by a bisection bracket. ``tol`` bounds that log ratio.
    """
    g = np.asarray(g, dtype=float)
    nz = g != 0
    if not nz.any():
        if target == 0:
            return float(np.clip(0.0, lo, hi))
        raise InfeasibleError("zero constraint row cannot reach a nonzero target")
    w, g = log_f[nz], g[nz]
    pos, neg = g > 0, g < 0
    logabs = np.log(np.abs(g))
    logsq = 2 * logabs
    log_tp = math.log(target) if target > 0 else -np.inf
    log_tm = math.log(-target) if target < 0 else -np.inf

    def phi(d):
        x = w + d * g
        a, b = _signed_lse(x + logabs, pos, neg)
        num = np.logaddexp(a, log_tm)
        den = np.logaddexp(b, log_tp)
        if num == -np.inf and den == -np.inf:
            return 0.0, 1.0
        if num == -np.inf:
            return -np.inf, np.inf
        if den == -np.inf:
            return np.inf, np.inf
        da, db = _signed_lse(x + logsq, pos, neg)
        slope = math.exp(da - num) + math.exp(db - den)
        return float(num - den), slope

    def polish(d, fd, sd):
        # one extra Newton step: quadratic convergence takes a point within
        # tol to machine precision, which keeps outer sweeps from cycling
        if fd == 0 or not (np.isfinite(fd) and sd > 0):
            return d
        cand = d - fd / sd
        if lo <= cand <= hi:
            fc, _ = phi(cand)
            if abs(fc) < abs(fd):
                return cand
        return d

    d0 = float(np.clip(0.0, lo, hi))
    f0, s0 = phi(d0)
    if abs(f0) <= tol:
        return polish(d0, f0, s0)
    # bracket [a, b] with phi(a) < 0 < phi(b)
    if f0 < 0:
        if hi < np.inf:
            fh, _ = phi(hi)
            if fh <= 0:
                return float(hi)
        a, fa = d0, f0
        step = min(abs(f0) / s0, 1.0) if np.isfinite(f0) and s0 > 0 else 1.0
        step = max(step, 1e-3)
        b = d0
        for _ in range(_MAX_BRACKET_DOUBLINGS):
            b = min(b + step, hi)
            fb, _ = phi(b)
            if fb > 0:
                break
            a, fa = b, fb
            step *= 2
        else:
            raise InfeasibleError("fairness multiplier is unbounded (constraint row cannot be met)")
    else:
        if lo > -np.inf:
            fl, _ = phi(lo)
            if fl >= 0:
                return float(lo)
        b, fb = d0, f0
        step = min(abs(f0) / s0, 1.0) if np.isfinite(f0) and s0 > 0 else 1.0
        step = max(step, 1e-3)
        a = d0
        for _ in range(_MAX_BRACKET_DOUBLINGS):
            a = max(a - step, lo)
            fa, _ = phi(a)
            if fa < 0:
                break
            b, fb = a, fa
            step *= 2
        else:
            raise InfeasibleError("fairness multiplier is unbounded (constraint row cannot be met)")

    # pick the bracket end closest to the root as Newton start
    d, (fd, sd) = (a, phi(a)) if abs(fa) < abs(fb) else (b, phi(b))
    for _ in range(max_iter):
        if abs(fd) <= tol:
            return polish(d, fd, sd)
        newton = d - fd / sd if np.isfinite(fd) and sd > 0 else np.nan
        if not (a < newton < b):
            newton = 0.5 * (a + b)
        d = newton
        fd, sd = phi(d)
        if fd < 0:
            a = d
        elif fd > 0:
            b = d
        else:
            return d
        if b - a <= 1e-15 * max(1.0, abs(d)):
            return d
    return d


def dual_value(lam, mu, h, C, G, eps) -> float:
    v = G.T @ mu
    total = logsumexp(_log_col_mass(C, lam, v, eps))
    if total > _MAX_LOG_MASS:
        return -math.inf
    return float(lam @ h - eps * math.exp(total))


def relaxed_dual_value(kappa, phi, psi, gamma, h, C, G, eps) -> float:
    v = G.T @ (phi - psi)
    total = logsumexp(_log_col_mass(C, kappa, v, eps))
    if total > _MAX_LOG_MASS:
        return -math.inf
    return float(kappa @ h + (phi + psi) @ gamma - eps * math.exp(total))


def _warm(state, attr, size):
    if state is None:
        return np.zeros(size)
    arr = np.asarray(getattr(state, attr), dtype=float)
    return arr.copy() if arr.shape == (size,) else np.zeros(size)


def _finish(objective, duals, log_rows, log_cols, G, converged, sweeps, history):
    rows = np.exp(log_rows)
    cols = np.exp(log_cols)
    return SolveResult(
        objective=objective,
        duals=duals,
        coupling_row_marginals=rows,
        coupling_col_marginals=cols,
        fairness_residual=G @ cols,
        converged=converged,
        sweeps_used=sweeps,
        history=history,
    )


def _extrapolate(value, base, base_value, direction, project=None):
    """Doubling line search along the last sweep's displacement.

    Coordinate ascent at small ``eps`` creeps along narrow valleys by a nearly
    constant step per sweep; this jumps along that valley. A move is only
    kept when it raises the dual, so ascent stays monotone.
    """
    best, best_value = base, base_value
    t = 1.0
    for _ in range(_MAX_EXTRAPOLATION_DOUBLINGS):
        cand = base + t * direction
        if project is not None:
            cand = project(cand)
        val = value(cand)
        if not val > best_value:
            break
        best, best_value = cand, val
        t *= 2.0
    return best, best_value


def _newton_mu(h, C, G, mu, eps):
    """One damped Newton step on ``mu`` for the dual with ``lam`` maximised out.

    That reduced dual is smooth and concave in the few fairness multipliers.
    When the rows of ``G`` are strongly correlated, cyclic 1-D updates zig-zag
    for thousands of sweeps; the Newton step takes the whole block at once.
    The step is kept only if it raises the dual.
    """
    def reduced(m):
        v = G.T @ m
        lam = _row_update(h, C, v, eps)
        return dual_value(lam, m, h, C, G, eps), lam, v

    base, lam, v = reduced(mu)
    logP = (lam[:, None] + v[None, :] - C) / eps
    P = np.exp(logP)
    f = P.sum(axis=0)
    B = G @ P.T
    A = (G * f) @ G.T - (B / h) @ B.T
    grad = -(G @ f)
    step = np.linalg.lstsq(A, eps * grad, rcond=1e-14)[0]
    # skip when the predicted gain is below rounding noise in the dual
    if not np.all(np.isfinite(step)) or grad @ step <= 1e-13 * (1.0 + abs(base)):
        return mu
    # the quadratic model is only trusted while no column mass changes by more
    # than a factor exp(_NEWTON_RADIUS)
    shift = float(np.max(np.abs(G.T @ step))) / eps
    t = min(1.0, _NEWTON_RADIUS / shift) if shift > 0 else 1.0
    for _ in range(30):
        cand = mu + t * step
        if reduced(cand)[0] > base:
            return cand
        t *= 0.5
    return mu


def _otfe_stage(h, C, G, eps, lam, mu, tol, max_sweeps, cfg, trace, history):
    n = h.size
    active = [c for c in range(G.shape[0]) if np.any(G[c] != 0)]

    def value(x):
        return dual_value(x[:n], x[n:], h, C, G, eps)

    start = None
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        if cfg.newton and active:
            mu = _newton_mu(h, C, G, mu, eps)
        v = G.T @ mu
        new_lam = _row_update(h, C, v, eps)
        delta = float(np.max(np.abs(new_lam - lam)))
        lam = new_lam
        log_f = _log_col_mass(C, lam, v, eps)
        for c in active:
            d = solve_shift(log_f, G[c], 0.0, tol=cfg.inner_tol, max_iter=cfg.inner_max_iters)
            mu[c] += eps * d
            log_f += d * G[c]
        _numeric_guard(eps, C, lam, mu)
        end = np.concatenate([lam, mu])
        current = None
        if cfg.extrapolate and start is not None and delta >= tol:
            current = value(end)
            moved, current = _extrapolate(value, end, current, end - start)
            lam, mu = moved[:n].copy(), moved[n:].copy()
            end = moved
        start = end
        if trace is not None:
            rec = {"problem": "otfe", "epsilon": eps, "sweep": sweeps, "delta": delta,
                   "dual": current if current is not None else value(end),
                   "fairness_residual": float(np.max(np.abs(G @ np.exp(log_f)), initial=0.0))}
            history.append(rec)
            trace(rec)
        if delta < tol:
            return lam, mu, True, sweeps
    return lam, mu, False, sweeps


def _otfre_stage(h, C, G, gamma, eps, kappa, phi, psi, tol, max_sweeps, cfg, trace, history):
    n, d_f = h.size, G.shape[0]
    active = [c for c in range(d_f) if np.any(G[c] != 0)]

    def value(x):
        return relaxed_dual_value(x[:n], x[n:n + d_f], x[n + d_f:], gamma, h, C, G, eps)

    def project(x):
        x = x.copy()
        np.minimum(x[n:], 0.0, out=x[n:])
        return x

    start = None
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        v = G.T @ (phi - psi)
        new_kappa = _row_update(h, C, v, eps)
        delta = float(np.max(np.abs(new_kappa - kappa)))
        kappa = new_kappa
        log_f = _log_col_mass(C, kappa, v, eps)
        for c in active:
            g = G[c]
            # upper bound G f <= gamma
            d = solve_shift(log_f, g, gamma[c], hi=-phi[c] / eps,
                            tol=cfg.inner_tol, max_iter=cfg.inner_max_iters)
            phi[c] = 0.0 if d == -phi[c] / eps else min(phi[c] + eps * d, 0.0)
            log_f += d * g
            # lower bound G f >= -gamma
            d = solve_shift(log_f, g, -gamma[c], lo=psi[c] / eps,
                            tol=cfg.inner_tol, max_iter=cfg.inner_max_iters)
            psi[c] = 0.0 if d == psi[c] / eps else min(psi[c] - eps * d, 0.0)
            log_f += d * g
        _numeric_guard(eps, C, kappa, phi, psi)
        end = np.concatenate([kappa, phi, psi])
        current = None
        if cfg.extrapolate and start is not None and delta >= tol:
            current = value(end)
            moved, current = _extrapolate(value, end, current, end - start, project)
            kappa = moved[:n].copy()
            phi = moved[n:n + d_f].copy()
            psi = moved[n + d_f:].copy()
            end = moved
        start = end
        if trace is not None:
            rec = {"problem": "otfre", "epsilon": eps, "sweep": sweeps, "delta": delta,
                   "dual": current if current is not None else value(end),
                   "bound_excess": float(np.max(np.abs(G @ np.exp(log_f)) - gamma, initial=0.0))}
            history.append(rec)
            trace(rec)
        if delta < tol:
            return kappa, phi, psi, True, sweeps
    return kappa, phi, psi, False, sweeps


def epsilon_schedule(C, epsilon, factor=10.0):
    """Decreasing smoothing levels ending at ``epsilon``.

    Starts near the largest cost, where a cold start is already close to the
    optimum, so every stage begins from a nearby warm start.
    """
    top = float(np.max(C)) if np.size(C) else 0.0
    levels = []
    e = top
    while e > epsilon * factor:
        levels.append(e)
        e /= factor
    levels.append(epsilon)
    return levels


def _stages(C, cfg, warm_start):
    if warm_start is not None or not cfg.anneal:
        return [cfg.epsilon]
    return epsilon_schedule(C, cfg.epsilon)


def solve_otfe(h, C, G, cfg: SolverConfig = SolverConfig(), warm_start: DualState | None = None,
               trace: Trace = None, check: bool = True) -> SolveResult:
    """Smoothed OTF: transport ``h`` onto the fair set at entropic cost.

    Sweeps update the whole row-multiplier vector ``lam`` in closed form, then
    each fairness multiplier ``mu_c`` by an exact 1-D maximisation, until the
    sup-norm change of ``lam`` drops below ``cfg.outer_tol``. A closing row
    update makes the returned coupling's row sums equal ``h``.

    Cold starts walk down ``epsilon_schedule`` (when ``cfg.anneal``): each
    sweep moves the duals by roughly ``eps``, so going straight to a small
    ``eps`` from zero takes thousands of sweeps. ``sweeps_used`` counts the
    sweeps of every stage.
    """
    h, C, G = _as_arrays(h, C, G, cfg)
    if check:
        check_feasible(G)
    eps = cfg.epsilon
    lam = _warm(warm_start, "lam", h.size)
    mu = _warm(warm_start, "mu", G.shape[0])
    history = []
    total = 0
    levels = _stages(C, cfg, warm_start)
    for level in levels:
        tol = cfg.outer_tol if level == eps else max(cfg.outer_tol, 1e-3 * level)
        lam, mu, converged, sweeps = _otfe_stage(
            h, C, G, level, lam, mu, tol, cfg.max_outer_sweeps, cfg, trace, history)
        total += sweeps
    v = G.T @ mu
    lam = _row_update(h, C, v, eps)
    _numeric_guard(eps, C, lam)
    objective = dual_value(lam, mu, h, C, G, eps)
    return _finish(objective, DualState(lam, mu), _log_row_mass(C, lam, v, eps),
                   _log_col_mass(C, lam, v, eps), G, converged, total, history)


def solve_otfre(h, C, G, cfg: SolverConfig = SolverConfig(),
                warm_start: RelaxedDualState | None = None,
                trace: Trace = None, check: bool = True) -> SolveResult:
    """Relaxed smoothed OTF: column unfairness bounded by that of ``h``.

    The bound ``gamma = |G h|`` is fixed at the start. Multipliers ``phi`` and
    ``psi`` (upper and lower bound) live on ``(-inf, 0]``; their 1-D updates
    are projected onto that half-line. Annealing as in ``solve_otfe``.
    """
    h, C, G = _as_arrays(h, C, G, cfg)
    if check:
        check_feasible(G)
    eps = cfg.epsilon
    n, d_f = h.size, G.shape[0]
    gamma = np.abs(G @ h)
    kappa = _warm(warm_start, "kappa", n)
    phi = np.minimum(_warm(warm_start, "phi", d_f), 0.0)
    psi = np.minimum(_warm(warm_start, "psi", d_f), 0.0)
    history = []
    total = 0
    for level in _stages(C, cfg, warm_start):
        tol = cfg.outer_tol if level == eps else max(cfg.outer_tol, 1e-3 * level)
        kappa, phi, psi, converged, sweeps = _otfre_stage(
            h, C, G, gamma, level, kappa, phi, psi, tol, cfg.max_outer_sweeps, cfg, trace, history)
        total += sweeps
    v = G.T @ (phi - psi)
    kappa = _row_update(h, C, v, eps)
    _numeric_guard(eps, C, kappa)
    objective = relaxed_dual_value(kappa, phi, psi, gamma, h, C, G, eps)
    return _finish(objective, RelaxedDualState(kappa, phi, psi, gamma),
                   _log_row_mass(C, kappa, v, eps), _log_col_mass(C, kappa, v, eps),
                   G, converged, total, history)


def envelope_gradient(h, G, duals: DualState, rduals: RelaxedDualState) -> np.ndarray:
    """d/dh of OTF_eps - OTFR_eps at fixed dual variables.

    The relaxed dual depends on ``h`` through ``gamma = |G h|`` as well;
    ``sign(0)`` is taken as 0.
    """
    G = G.G if isinstance(G, ConstraintMatrix) else np.asarray(G, dtype=float)
    s = np.sign(G @ np.asarray(h, dtype=float))
    return duals.lam - rduals.kappa - G.T @ ((rduals.phi + rduals.psi) * s)


def solve_adjusted(h, C, G, cfg: SolverConfig = SolverConfig(), warm_start=None,
                   trace: Trace = None) -> AdjustedResult:
    """Both solves plus the adjusted cost and its envelope gradient.

    ``warm_start`` is an optional ``(DualState, RelaxedDualState)`` pair.
    """
    h_arr, C_arr, G_arr = _as_arrays(h, C, G, cfg)
    check_feasible(G_arr)
    w1, w2 = warm_start if warm_start is not None else (None, None)
    r1 = solve_otfe(h_arr, C_arr, G_arr, cfg, w1, trace, check=False)
    r2 = solve_otfre(h_arr, C_arr, G_arr, cfg, w2, trace, check=False)
    grad = envelope_gradient(h_arr, G_arr, r1.duals, r2.duals)
    # gradient is zero where the score floor binds
    raw = np.asarray(h, dtype=float).ravel()
    grad = np.where((raw < cfg.score_floor) | (raw > 1.0), 0.0, grad)
    return AdjustedResult(r1.objective - r2.objective, grad, r1, r2)


def adjusted_otf(h, C, G, cfg: SolverConfig = SolverConfig(), warm_start=None):
    """Adjusted cost ``OTF_eps(h) - OTFR_eps(h)`` and its gradient in ``h``."""
    res = solve_adjusted(h, C, G, cfg, warm_start)
    return res.cost, res.gradient


def recover_coupling(duals, h, C, G, epsilon) -> np.ndarray:
    C = C.C if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    G = G.G if isinstance(G, ConstraintMatrix) else np.atleast_2d(np.asarray(G, dtype=float))
    if isinstance(duals, RelaxedDualState):
        row, v = duals.kappa, G.T @ (duals.phi - duals.psi)
    else:
        row, v = duals.lam, G.T @ duals.mu
    if h is not None and np.asarray(h).size != row.size:
        raise DimensionError("duals and scores disagree on the number of samples")
    logP = (row[:, None] + v[None, :] - C) / epsilon
    if np.any(logP > 700):
        raise NumericError(f"coupling overflows (max exponent {logP.max():g})")
    P = np.exp(logP)
    if not np.all(np.isfinite(P)):
        raise NumericError("non-finite coupling entry")
    return P


def primal_value(P, C, epsilon) -> float:
    """``<C, P> - eps * H(P)`` for an explicit coupling."""
    C = C.C if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    P = np.asarray(P, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * np.log(P), 0.0)
    return float(np.sum(C * P) + epsilon * np.sum(plogp - P))


def jsonl_tracer(fh) -> Callable[[dict], None]:
    def write(record):
        fh.write(json.dumps(record) + "\n")
    return write


def with_epsilon(cfg: SolverConfig, epsilon: float) -> SolverConfig:
    return replace(cfg, epsilon=epsilon)
