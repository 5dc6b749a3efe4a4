"""Shared test helpers: brute-force assignment oracles, random diagram
generators and the epsilon-complementary-slackness checker."""

import itertools

import numpy as np
import pytest

from pdbary.assignment import embed_real
from pdbary.diagram import MetricParams, PairType, PersistenceDiagram


def random_diagram(rng, max_points=30, pair_type=PairType.SADDLE_MAX,
                   with_locations=False, scale=1.0):
    n = int(rng.integers(0, max_points + 1))
    births = rng.uniform(0.0, scale, n)
    deaths = births + rng.uniform(0.0, scale, n)
    kwargs = {}
    if with_locations:
        kwargs["birth_locs"] = rng.uniform(0.0, 1.0, (n, 3))
        kwargs["death_locs"] = rng.uniform(0.0, 1.0, (n, 3))
    return PersistenceDiagram(births, deaths, pair_type, **kwargs)


def augmented_cost_matrix(Df, Dg, params: MetricParams) -> np.ndarray:
    """Full (n+m) x (n+m) cost matrix of the augmented assignment problem:
    real-real entries are squared (lifted) distances, real-ghost entries are
    the real point's diagonal-deletion cost, ghost-ghost entries are zero."""
    n, m = len(Df), len(Dg)
    bz, b_del = embed_real(Df.births, Df.deaths, Df.locations(params), params)
    oz, o_del = embed_real(Dg.births, Dg.deaths, Dg.locations(params), params)
    C = np.zeros((n + m, n + m))
    if n and m:
        diff = bz[:, None, :] - oz[None, :, :]
        C[:n, :m] = np.sum(diff * diff, axis=2)
    C[:n, m:] = b_del[:, None]
    C[n:, :m] = o_del[None, :]
    return C


def brute_force_cost(Df, Dg, params: MetricParams) -> float:
    """Exhaustive minimum assignment cost; only for tiny instances."""
    C = augmented_cost_matrix(Df, Dg, params)
    size = C.shape[0]
    if size == 0:
        return 0.0
    best = np.inf
    rows = np.arange(size)
    for perm in itertools.permutations(range(size)):
        best = min(best, float(C[rows, list(perm)].sum()))
    return best


def auction_cost_row(state, bidder: int) -> np.ndarray:
    """Per-object cost of one bidder under the separable cost convention."""
    no = state.n_objects
    row = np.zeros(no)
    if state.b_isdiag[bidder]:
        row[~state.o_isdiag] = state.o_del[~state.o_isdiag]
    else:
        off = ~state.o_isdiag
        diff = state.oz[off] - state.bz[bidder]
        row[off] = np.sum(diff * diff, axis=1)
        row[state.o_isdiag] = state.b_del[bidder]
    return row


def check_epsilon_cs(state, tol=1e-9):
    """Every assigned bidder attains within epsilon of its best value at the
    current prices (epsilon-complementary slackness)."""
    for b in range(state.n_bidders):
        j = state.assigned[b]
        assert j >= 0, f"bidder {b} unassigned"
        values = -(auction_cost_row(state, b) + state.prices)
        slack = values.max() - values[j]
        assert slack <= state.epsilon + tol, (
            f"bidder {b}: slack {slack} exceeds epsilon {state.epsilon}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
