"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line (printed in the terminal summary)
before asserting.
"""

import math
import time

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from otfair.constraints import build_pdp, build_peo, pdp_matrix, peo_matrix
from otfair.cost import euclidean_cost
from otfair.data import SyntheticSpec, generate_synthetic, train_test_split
from otfair.errors import DegenerateGroupError
from otfair.evaluation import auc, evaluate, pdp_violation, peo_violation
from otfair.lp import otf_lp
from otfair.solver import (
    SolverConfig, adjusted_otf, primal_value, recover_coupling, solve_adjusted, solve_otfe,
    solve_otfre,
)
from otfair.trainer import TrainConfig, postprocess, train

# shared hyperparameters for the scaled-down training runs
LR, BATCH = 0.5, 200


def _random_binary(rng, n, d):
    while True:
        S = (rng.random((n, d)) < 0.5).astype(float)
        if np.all(S.min(0) < S.max(0)):
            return S


def lp_instances(count=50, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, 7))
        d_f = int(rng.integers(1, 3)) if n > 2 else 1
        X = rng.random((n, 2))
        yield rng.uniform(0.05, 1.0, n), cdist(X, X), pdp_matrix(_random_binary(rng, n, d_f)).G


def null_space_instances(count=20, seed=0):
    rng = np.random.default_rng(seed)
    for k in range(count):
        n = int(rng.integers(20, 201))
        ds = generate_synthetic(SyntheticSpec(n=n, group_count=int(rng.integers(2, 4)), seed=k))
        G = (build_pdp if k % 2 == 0 else build_peo)(ds).G
        z = rng.normal(size=n)
        Q, _ = np.linalg.qr(G.T)
        z -= Q @ (Q.T @ z)
        h = np.clip(0.5 + 0.4 * z / np.abs(z).max(), 1e-12, 1.0)
        yield h, euclidean_cost(ds.X).C, G


def small_instances(count=10, seed=1, n_range=(5, 51)):
    rng = np.random.default_rng(seed)
    made = 0
    while made < count:
        n = int(rng.integers(*n_range))
        X = rng.random((n, 2))
        S = _random_binary(rng, n, int(rng.integers(1, 3)))
        try:
            G = (peo_matrix(S, rng.integers(0, 2, n)) if made % 2 else pdp_matrix(S)).G
        except DegenerateGroupError:
            continue
        made += 1
        yield rng.uniform(0.05, 1.0, n), cdist(X, X), G


def test_criterion_1_lp_oracle_equivalence(report):
    cfg = SolverConfig(epsilon=1e-4, outer_tol=1e-10)
    t0 = time.perf_counter()
    errors = [abs(solve_otfe(h, C, G, cfg).objective - otf_lp(h, C, G)[0])
              for h, C, G in lp_instances()]
    elapsed = time.perf_counter() - t0
    ok = max(errors) <= 1e-2 and elapsed < 10 and len(errors) == 50
    assert report(1, "LP-oracle equivalence", ok,
                  f"max |OTFe - LP| = {max(errors):.2e} over {len(errors)}, {elapsed:.1f}s")


def test_criterion_2_zero_cost_on_fair_scores(report):
    t0 = time.perf_counter()
    worst = 0.0
    for h, C, G in null_space_instances():
        cost, _ = adjusted_otf(h, C, G, SolverConfig())
        worst = max(worst, cost / (1e-6 * h.size))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1.0 and elapsed < 30
    assert report(2, "zero adjusted cost in the fair set", ok,
                  f"max cost / (1e-6 n) = {worst:.2e}, {elapsed:.1f}s")


def test_criterion_3_duality_gap(report):
    cfg = SolverConfig(epsilon=1e-3, outer_tol=1e-10)
    gap = row = fair = 0.0
    for h, C, G in small_instances():
        r = solve_otfe(h, C, G, cfg)
        P = recover_coupling(r.duals, h, C, G, cfg.epsilon)
        gap = max(gap, abs(primal_value(P, C, cfg.epsilon) - r.objective) / (1 + abs(r.objective)))
        row = max(row, np.abs(P.sum(1) - h).max())
        fair = max(fair, np.abs(G @ P.sum(0)).max())
    ok = gap <= 1e-6 and row <= 1e-6 and fair <= 1e-6
    assert report(3, "duality gap", ok,
                  f"rel gap {gap:.1e}, row residual {row:.1e}, fairness residual {fair:.1e}")


def test_criterion_4_gradient_check(report):
    cfg = SolverConfig(epsilon=1e-3, outer_tol=1e-10)
    step = 1e-5
    worst = 0.0
    for h, C, G in small_instances(10, seed=4, n_range=(20, 21)):
        res = solve_adjusted(h, C, G, cfg)
        warm = (res.otfe.duals, res.otfre.duals)
        fd = np.array([(solve_adjusted(h + e, C, G, cfg, warm).cost
                        - solve_adjusted(h - e, C, G, cfg, warm).cost) / (2 * step)
                       for e in np.eye(h.size) * step])
        worst = max(worst, np.abs(res.gradient - fd).max() / np.abs(fd).max())
    assert report(4, "envelope gradient vs finite differences", worst < 1e-4,
                  f"max relative error {worst:.1e}")


def test_criterion_5_relaxation_ordering(report):
    cfg = SolverConfig(epsilon=1e-3, outer_tol=1e-10)
    worst_order, count = -math.inf, 0
    for family in (lp_instances(), small_instances()):
        for h, C, G in family:
            diff = solve_otfre(h, C, G, cfg).objective - solve_otfe(h, C, G, cfg).objective
            worst_order = max(worst_order, diff)
            count += 1
    worst_eq = 0.0
    for h, C, G in null_space_instances(10):
        worst_eq = max(worst_eq, abs(solve_otfe(h, C, G, cfg).objective
                                     - solve_otfre(h, C, G, cfg).objective))
    ok = worst_order <= 0 and worst_eq <= 1e-8
    assert report(5, "relaxation ordering", ok,
                  f"max OTFR - OTF = {worst_order:.1e} over {count}, "
                  f"max |OTF - OTFR| at G h = 0: {worst_eq:.1e}")


def _test_metrics(reg, alpha, seed):
    ds = generate_synthetic(SyntheticSpec(n=2000, bias_strength=2.0, seed=seed))
    tr, te = train_test_split(ds, 0.2, seed)
    cfg = TrainConfig(alpha=alpha, regularizer=reg, epochs=30, learning_rate=LR,
                      batch_size=BATCH, seed=seed)
    model, _ = train(tr, cfg, monitor=False)
    rep = evaluate(model.scores(te.X), te)
    return rep.auc, rep.pdp_violation


def test_criterion_6_training_efficacy(report):
    t0 = time.perf_counter()
    res = {m: np.array([_test_metrics(*m, s) for s in range(5)]).mean(0)
           for m in (("none", 0.0), ("otf", 0.9), ("norm", 0.9))}
    elapsed = time.perf_counter() - t0
    base_auc, base_pdp = res["none", 0.0]
    otf_auc, otf_pdp = res["otf", 0.9]
    norm_auc, norm_pdp = res["norm", 0.9]
    ok = (otf_pdp <= 0.25 * base_pdp and base_auc - otf_auc <= 0.15
          and norm_pdp < base_pdp and elapsed < 300)
    assert report(6, "training efficacy", ok,
                  f"PDP none {base_pdp:.3f} otf {otf_pdp:.3f} ({otf_pdp / base_pdp:.0%}) "
                  f"norm {norm_pdp:.3f}; AUC drop otf {base_auc - otf_auc:.3f} "
                  f"norm {base_auc - norm_auc:.3f}; {elapsed:.0f}s")


def test_criterion_7_postprocessing_gap_decay(report):
    ds = generate_synthetic(SyntheticSpec(n=1000, bias_strength=2.0, seed=0))
    tr, _ = train_test_split(ds, 0.2, 0)
    pre = TrainConfig(alpha=0.0, regularizer="none", epochs=25, learning_rate=LR,
                      batch_size=BATCH, seed=0)
    model, _ = train(tr, pre, monitor=False)
    post = TrainConfig(alpha=1.0, regularizer="otf", epochs=25, learning_rate=LR,
                       batch_size=BATCH, seed=0, monitor_size=tr.n)
    _, trace = postprocess(model, tr, post)
    gap, pdp = trace.column("gap"), trace.column("pdp_violation")
    ok = gap[-1] < gap[0] / 10 and pdp[-1] < pdp[0]
    assert report(7, "postprocessing gap decay", ok,
                  f"gap {gap[0]:.3g} -> {gap[-1]:.3g} (ratio {gap[-1] / gap[0]:.3f}), "
                  f"PDP {pdp[0]:.3f} -> {pdp[-1]:.3f}")


def test_criterion_8_metric_fixtures(report):
    errs = []
    errs.append(abs(auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) - 1.0))
    errs.append(abs(auc([0.5] * 4, [1, 0, 1, 0]) - 0.5))
    errs.append(abs(auc([0.9, 0.1, 0.8, 0.2], [1, 1, 0, 0]) - 0.5))
    S = np.array([[1, 0], [0, 1], [1, 0], [1, 0], [0, 1]], dtype=float)
    errs.append(abs(pdp_violation(S[:, 0], S) - 1.0))
    with pytest.warns(UserWarning):
        errs.append(abs(pdp_violation(np.full(5, 0.3), S)))
    s8 = np.array([0.5, 0.9, 0.6, 1.0, 0.4, 0.3, 0.4, 0.3])
    g8 = np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=float)
    y8 = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    errs.append(abs(pdp_violation(s8[:4], g8[:4]) - 0.1 / (math.sqrt(0.0425) * 0.5)))
    errs.append(abs(peo_violation(s8, g8, y8) - 1.0))
    worst = max(errs)
    assert report(8, "metric fixtures", worst <= 1e-12, f"max error {worst:.1e} over {len(errs)}")


def test_criterion_9_epsilon_degradation(report):
    h = np.array([0.8, 0.2])
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    G = np.array([[1.0, -1.0]])
    sharp = adjusted_otf(h, C, G, SolverConfig(epsilon=1e-3, outer_tol=1e-12))[0]
    smooth = adjusted_otf(h, C, G, SolverConfig(epsilon=10.0, outer_tol=1e-12))[0]
    ratio = smooth / sharp
    assert report(9, "epsilon degradation", ratio <= 1e-3,
                  f"OTF0 at eps=10 is {smooth:.3g}, at eps=1e-3 {sharp:.3g}, ratio {ratio:.2e}")
