import itertools

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from otfair.constraints import pdp_matrix
from otfair.errors import InfeasibleError, LpSizeError
from otfair.lp import LpInfeasibleError, LpInstance, build_lp, otf_lp, simplex, solve_lp

H = np.array([0.8, 0.2])
C2 = np.array([[0.0, 1.0], [1.0, 0.0]])
G2 = np.array([[1.0, -1.0]])


def test_two_point_equality():
    cost, P = otf_lp(H, C2, G2)
    assert cost == pytest.approx(0.3, abs=1e-12)
    np.testing.assert_allclose(P, [[0.5, 0.3], [0.0, 0.2]], atol=1e-12)


def test_two_point_relaxed_is_diagonal():
    cost, P = otf_lp(H, C2, G2, relaxed=True)
    assert cost == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(P, np.diag(H), atol=1e-12)


def test_fair_h_costs_nothing():
    h = np.array([0.4, 0.4])
    for relaxed in (False, True):
        assert otf_lp(h, C2, G2, relaxed)[0] == pytest.approx(0.0, abs=1e-12)


def test_size_limit():
    n = 17
    with pytest.raises(LpSizeError):
        LpInstance(np.zeros((n, n)), np.full(n, 0.5), np.zeros((1, n)))


def test_infeasible_with_certificate():
    # every column weighted positively: G P^T 1 = 0 forces zero mass
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(LpInfeasibleError) as info:
        simplex(np.zeros(2), A, np.array([1.0, 2.0]))
    y = info.value.certificate
    assert np.all(y @ A <= 1e-9) and y @ np.array([1.0, 2.0]) > 1e-9
    with pytest.raises(InfeasibleError):
        otf_lp(H, C2, np.array([[1.0, 1.0]]))


def test_redundant_rows_are_dropped():
    A = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
    x, value = simplex(np.array([1.0, 2.0, 0.5]), A, np.array([1.0, 2.0, 1.0]))
    np.testing.assert_allclose(A @ x, [1, 2, 1], atol=1e-12)
    assert value == pytest.approx(1.5)


def _random_instance(rng, n, d_f):
    X = rng.random((n, 2))
    while True:
        S = (rng.random((n, d_f)) < 0.5).astype(float)
        if np.all(S.sum(0) > 0):
            break
    return rng.uniform(0.05, 1.0, n), cdist(X, X), pdp_matrix(S).G


@pytest.mark.parametrize("relaxed", [False, True])
def test_matches_highs(relaxed):
    rng = np.random.default_rng(11)
    for _ in range(40):
        n = int(rng.integers(2, 17))
        h, C, G = _random_instance(rng, n, int(rng.integers(1, 3)))
        inst = LpInstance(C, h, G, relaxed)
        c, A, b = build_lp(inst)
        ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
        value, P = solve_lp(inst)
        assert value == pytest.approx(ref.fun, abs=1e-9)
        np.testing.assert_allclose(P.sum(1), h, atol=1e-9)
        if not relaxed:
            np.testing.assert_allclose(G @ P.sum(0), 0, atol=1e-9)


def test_equality_at_least_relaxed():
    rng = np.random.default_rng(2)
    for _ in range(30):
        h, C, G = _random_instance(rng, int(rng.integers(2, 8)), 2)
        assert otf_lp(h, C, G)[0] >= otf_lp(h, C, G, relaxed=True)[0] - 1e-12


def _grid_search(h, C, G, step, relaxed):
    """Exhaustive search over couplings whose row i is split into multiples of
    ``step * h_i``. Vectorised over every row but the first."""
    n = h.size
    k = round(1 / step)
    splits = np.array([c for c in itertools.product(range(k + 1), repeat=n) if sum(c) == k],
                      dtype=float) * step
    gamma = np.abs(G @ h)
    rest = np.array(list(itertools.product(range(len(splits)), repeat=n - 1)))
    rest_cols = sum(splits[rest[:, r]] * h[r + 1] for r in range(n - 1))
    rest_cost = sum((splits[rest[:, r]] * h[r + 1]) @ C[r + 1] for r in range(n - 1))
    best = np.inf
    for first in splits:
        cols = rest_cols + first * h[0]
        cost = rest_cost + (first * h[0]) @ C[0]
        r = np.abs(cols @ G.T)
        ok = np.all(r <= gamma + 1e-12, axis=1) if relaxed else np.all(r <= 1e-12, axis=1)
        if ok.any():
            best = min(best, float(cost[ok].min()))
    return best


@pytest.mark.parametrize("relaxed", [False, True])
def test_grid_search_agrees(relaxed):
    # the fair targets of these instances lie on the 0.05 grid
    cases = [
        (np.array([0.8, 0.2]), C2, G2),
        (np.array([0.6, 0.2, 0.4]), cdist(*[np.array([[0.0], [1.0], [3.0]])] * 2),
         pdp_matrix([1, 0, 1]).G),
        (np.array([0.2, 0.4, 0.6]), cdist(*[np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])] * 2),
         pdp_matrix([0, 1, 1]).G),
    ]
    step = 0.05
    for h, C, G in cases:
        exact = otf_lp(h, C, G, relaxed)[0]
        grid = _grid_search(h, C, G, step, relaxed)
        assert exact <= grid + 1e-12
        # one grid step of mass moved across the largest distance
        assert grid - exact <= step * h.max() * C.max() + 1e-12
