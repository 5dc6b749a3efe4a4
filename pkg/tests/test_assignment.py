"""Exact and auction assignment solvers and their acceleration structures."""

import numpy as np
import pytest

from pdbary.assignment import (
    AssignmentResult,
    AuctionState,
    MunkresSizeError,
    auction_round,
    auction_until_converged,
    munkres_assignment,
    prepare_auction,
    single_round_with_prices,
)
from pdbary.diagram import MetricParams, PersistenceDiagram

from conftest import (
    auction_cost_row,
    brute_force_cost,
    check_epsilon_cs,
    random_diagram,
)


# -- exact solver ----------------------------------------------------------


def test_munkres_matches_brute_force_small(rng):
    params = MetricParams()
    for _ in range(40):
        Df = random_diagram(rng, max_points=4)
        Dg = random_diagram(rng, max_points=4)
        if len(Df) + len(Dg) > 8:
            continue
        res = munkres_assignment(Df, Dg, params)
        assert res.cost == pytest.approx(
            brute_force_cost(Df, Dg, params), rel=1e-12, abs=1e-12)
        assert res.distance == pytest.approx(np.sqrt(res.cost))


def test_munkres_q_one_matches_brute_force(rng):
    params = MetricParams(q=1.0)
    for _ in range(10):
        Df = random_diagram(rng, max_points=3)
        Dg = random_diagram(rng, max_points=3)
        res = munkres_assignment(Df, Dg, params)
        # brute force for general q: |db|^q + |dd|^q off-diagonal, and
        # 2 * (persistence / 2)^q for a deletion
        import itertools
        n, m = len(Df), len(Dg)
        size = n + m
        C = np.zeros((size, size))
        if n and m:
            C[:n, :m] = (np.abs(Df.births[:, None] - Dg.births[None, :])
                         + np.abs(Df.deaths[:, None] - Dg.deaths[None, :]))
        C[:n, m:] = (Df.deaths - Df.births)[:, None]
        C[n:, :m] = (Dg.deaths - Dg.births)[None, :]
        best = np.inf
        rows = np.arange(size)
        for perm in itertools.permutations(range(size)):
            best = min(best, float(C[rows, list(perm)].sum())) if size else 0.0
        if size == 0:
            best = 0.0
        assert res.cost == pytest.approx(best, rel=1e-12, abs=1e-12)


def test_munkres_with_lifting_matches_brute_force(rng):
    params = MetricParams(alpha=0.65)
    for _ in range(10):
        Df = random_diagram(rng, max_points=4, with_locations=True)
        Dg = random_diagram(rng, max_points=4, with_locations=True)
        if len(Df) + len(Dg) > 8:
            continue
        res = munkres_assignment(Df, Dg, params)
        assert res.cost == pytest.approx(
            brute_force_cost(Df, Dg, params), rel=1e-12, abs=1e-12)


def test_munkres_size_guard():
    n = 1100
    D = PersistenceDiagram(np.zeros(n), np.ones(n))
    with pytest.raises(MunkresSizeError, match="auction"):
        munkres_assignment(D, D)
    # guard counts both diagrams
    munkres_assignment(PersistenceDiagram.empty(), PersistenceDiagram.empty())


def test_lifting_requires_q_two():
    D = PersistenceDiagram.from_pairs([(0.0, 1.0)])
    with pytest.raises(ValueError, match="q = 2"):
        munkres_assignment(D, D, MetricParams(q=3.0, alpha=0.5))


def test_empty_and_one_sided_instances():
    E = PersistenceDiagram.empty()
    D = PersistenceDiagram.from_pairs([(0.0, 2.0), (1.0, 4.0)])
    assert munkres_assignment(E, E).cost == 0.0
    # deleting both points: (1 - alpha) * pers^2 / 2 each
    expected = 2.0**2 / 2.0 + 3.0**2 / 2.0
    assert munkres_assignment(D, E).cost == pytest.approx(expected)
    assert munkres_assignment(E, D).cost == pytest.approx(expected)
    assert auction_until_converged(D, E).cost == pytest.approx(expected)
    assert auction_until_converged(E, E).cost == 0.0


def test_non_finite_coordinates_rejected():
    D = PersistenceDiagram(np.array([0.0]), np.array([np.inf]))
    with pytest.raises(ValueError, match="non-finite"):
        munkres_assignment(D, D)
    with pytest.raises(ValueError, match="non-finite"):
        auction_until_converged(D, D)


def test_assignment_result_validation():
    with pytest.raises(ValueError):
        AssignmentResult(np.empty(0, dtype=np.int64), np.nan, np.nan)


# -- auction solver --------------------------------------------------------


def test_auction_within_gamma_of_exact(rng):
    params = MetricParams()
    for _ in range(25):
        Df = random_diagram(rng, max_points=12)
        Dg = random_diagram(rng, max_points=12)
        exact = munkres_assignment(Df, Dg, params)
        approx = auction_until_converged(Df, Dg, params, gamma=0.01)
        if exact.distance == 0.0:
            assert approx.distance == pytest.approx(0.0, abs=1e-12)
        else:
            ratio = approx.distance / exact.distance
            assert 1.0 - 1e-9 <= ratio <= 1.01


def test_auction_identical_diagrams_zero(rng):
    D = random_diagram(rng, max_points=15)
    res = auction_until_converged(D, D.copy())
    assert res.cost == pytest.approx(0.0, abs=1e-12)


def test_auction_with_lifting_within_gamma(rng):
    params = MetricParams(alpha=0.65)
    for _ in range(10):
        Df = random_diagram(rng, max_points=8, with_locations=True)
        Dg = random_diagram(rng, max_points=8, with_locations=True)
        exact = munkres_assignment(Df, Dg, params)
        approx = auction_until_converged(Df, Dg, params, gamma=0.01)
        assert approx.distance <= 1.01 * exact.distance + 1e-12
        assert approx.distance >= exact.distance - 1e-9


def test_auction_rejects_bad_params(rng):
    D = random_diagram(rng, max_points=5)
    with pytest.raises(ValueError):
        auction_until_converged(D, D, gamma=0.0)
    with pytest.raises(ValueError, match="q = 2"):
        auction_until_converged(D, D, MetricParams(q=1.0))


def test_epsilon_cs_after_every_round(rng):
    params = MetricParams()
    for _ in range(10):
        Df = random_diagram(rng, max_points=10)
        Dg = random_diagram(rng, max_points=10)
        if len(Df) + len(Dg) == 0:
            continue
        state = prepare_auction(Df, Dg, params)
        for _ in range(4):
            state.reset_assignment()
            state.refresh_structures()
            auction_round(state)
            check_epsilon_cs(state)
            state.epsilon /= 5.0


def test_prices_stay_nonnegative_and_rise(rng):
    Df = random_diagram(rng, max_points=10)
    Dg = random_diagram(rng, max_points=10)
    state = prepare_auction(Df, Dg, MetricParams())
    prev = state.prices.copy()
    for _ in range(3):
        state.reset_assignment()
        state.refresh_structures()
        state.run_round()
        assert np.all(state.prices >= 0)
        assert np.all(state.prices >= prev - 1e-15)
        prev = state.prices.copy()
        state.epsilon /= 5.0


def test_best_two_matches_linear_scan(rng):
    Df = random_diagram(rng, max_points=12)
    Dg = random_diagram(rng, max_points=12)
    state = prepare_auction(Df, Dg, MetricParams())
    state.prices = np.abs(rng.normal(0.0, 0.1, state.n_objects))
    state.refresh_structures()
    for b in range(state.n_bidders):
        v1, j1, v2, j2 = state.best_two(b)
        values = -(auction_cost_row(state, b) + state.prices)
        order = np.argsort(-values, kind="stable")
        assert values[j1] == pytest.approx(float(values[order[0]]), abs=1e-12)
        assert v1 == pytest.approx(float(values[order[0]]), abs=1e-12)
        if state.n_objects > 1:
            assert v2 == pytest.approx(float(values[order[1]]), abs=1e-12)


def test_single_round_with_prices_warm_start(rng):
    Df = random_diagram(rng, max_points=8)
    Dg = random_diagram(rng, max_points=8)
    no = len(Dg) + len(Df)
    res1, prices1 = single_round_with_prices(
        Df, Dg, None, epsilon=0.01)
    assert len(prices1) == no
    assert np.all(prices1 >= 0)
    res2, prices2 = single_round_with_prices(Df, Dg, prices1, epsilon=0.01)
    assert np.all(prices2 >= prices1 - 1e-15)
    assert np.isfinite(res2.cost)
    with pytest.raises(ValueError):
        single_round_with_prices(Df, Dg, None, epsilon=0.0)
    with pytest.raises(ValueError, match="length"):
        single_round_with_prices(Df, Dg, np.zeros(no + 1), epsilon=0.01)
    with pytest.raises(ValueError, match="non-negative"):
        single_round_with_prices(Df, Dg, -np.ones(no), epsilon=0.01)


def test_auction_mapping_is_a_bijection(rng):
    Df = random_diagram(rng, max_points=10)
    Dg = random_diagram(rng, max_points=10)
    res = auction_until_converged(Df, Dg)
    size = len(Df) + len(Dg)
    assert sorted(res.mapping) == list(range(size))


def test_shared_tree_between_states(rng):
    # the kd-tree geometry may be shared; prices must stay independent
    Df = random_diagram(rng, max_points=8)
    Dg = random_diagram(rng, max_points=8)
    base = prepare_auction(Df, Dg, MetricParams())
    other = AuctionState(
        (base.bz, base.b_del, base.b_isdiag),
        (base.oz, base.o_del, base.o_isdiag),
        None, base.epsilon, tree=base.tree)
    other.run_round()
    assert np.all(base.prices == 0.0)
