"""Optimal and approximate assignment between two augmented diagrams.

Two solvers share one cost convention on augmented diagrams:

* off-diagonal vs off-diagonal: squared (optionally lifted) pointwise
  distance;
* off-diagonal vs diagonal ghost: the off-diagonal point's own
  diagonal-deletion cost (independent of which ghost);
* ghost vs ghost: zero.

The exact solver delegates the square assignment problem to
``scipy.optimize.linear_sum_assignment``; the auction solver implements
epsilon-scaled bidding with the kd-tree / lazy-heap candidate search and
accepts externally supplied prices for warm starts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from . import _core
from .diagram import MetricParams, PersistenceDiagram

__all__ = [
    "AssignmentResult",
    "AuctionState",
    "MunkresSizeError",
    "munkres_assignment",
    "auction_round",
    "auction_until_converged",
    "single_round_with_prices",
]

MUNKRES_SIZE_GUARD = 2000
EPSILON_DIVISOR = 5.0
MAX_SCALING_ROUNDS = 400


class MunkresSizeError(ValueError):
    """Raised when an instance is too large for the exact solver."""


@dataclass(frozen=True)
class AssignmentResult:
    """A bijection over augmented index ranges and its cost."""

    mapping: np.ndarray  # bidder index -> object index
    cost: float          # sum of squared (lifted) distances
    distance: float      # sqrt(cost) for q = 2

    def __post_init__(self):
        if not np.isfinite(self.cost):
            raise ValueError("non-finite assignment cost")


# -- embedding -------------------------------------------------------------


def embed_real(births, deaths, locations, params: MetricParams):
    """Map points to coordinates whose squared Euclidean distance is the
    squared (lifted) pointwise metric, plus per-point deletion costs."""
    births = np.asarray(births, dtype=np.float64)
    deaths = np.asarray(deaths, dtype=np.float64)
    n = len(births)
    a = params.alpha
    if a == 0.0:
        z = np.column_stack([births, deaths])
    else:
        w = np.sqrt(1.0 - a)
        z = np.column_stack([w * births, w * deaths,
                             np.sqrt(a) * np.asarray(locations).reshape(n, 3)])
    delcost = (1.0 - a) * (deaths - births) ** 2 / 2.0
    return np.ascontiguousarray(z), delcost


def _diagram_arrays(D: PersistenceDiagram, params: MetricParams):
    z, delcost = embed_real(D.births, D.deaths, D.locations(params), params)
    return z, delcost, D.is_diag.copy()


def _augmented_arrays(Df: PersistenceDiagram, Dg: PersistenceDiagram,
                      params: MetricParams):
    """Bidder and object arrays for D'f vs D'g.

    Bidders are the points of Df followed by |Dg| ghosts; objects are the
    points of Dg followed by |Df| ghosts.  Ghost coordinates are never read
    (their costs are separable), only their count matters.
    """
    bz, b_del, b_diag = _diagram_arrays(Df, params)
    oz, o_del, o_diag = _diagram_arrays(Dg, params)
    k = bz.shape[1]
    nb, no = len(Df) + len(Dg), len(Dg) + len(Df)
    bidders = (
        np.concatenate([bz, np.zeros((len(Dg), k))]),
        np.concatenate([b_del, np.zeros(len(Dg))]),
        np.concatenate([b_diag, np.ones(len(Dg), dtype=bool)]),
    )
    objects = (
        np.concatenate([oz, np.zeros((len(Df), k))]),
        np.concatenate([o_del, np.zeros(len(Df))]),
        np.concatenate([o_diag, np.ones(len(Df), dtype=bool)]),
    )
    assert len(bidders[0]) == nb and len(objects[0]) == no
    return bidders, objects


def assignment_cost_terms(bz, b_del, b_isdiag, oz, o_del, o_isdiag, assigned):
    """Per-bidder squared cost of a (full) assignment."""
    j = assigned
    od = o_isdiag[j]
    terms = np.zeros(len(b_del))
    m = ~b_isdiag & od
    terms[m] = b_del[m]
    m = b_isdiag & ~od
    terms[m] = o_del[j[m]]
    m = ~b_isdiag & ~od
    if np.any(m):
        terms[m] = np.sum((bz[m] - oz[j[m]]) ** 2, axis=1)
    return terms


def _max_edge_sq(bz, b_del, b_isdiag, oz, o_del, o_isdiag):
    """Largest squared edge weight, ghost-ghost edges excluded."""
    best = 0.0
    if np.any(~b_isdiag):
        best = max(best, float(b_del[~b_isdiag].max()))
    if np.any(~o_isdiag):
        best = max(best, float(o_del[~o_isdiag].max()))
    br = bz[~b_isdiag]
    orr = oz[~o_isdiag]
    if len(br) and len(orr):
        chunk = max(1, 8_000_000 // max(1, len(orr)))
        for s in range(0, len(br), chunk):
            d = cdist(br[s:s + chunk], orr, "sqeuclidean")
            best = max(best, float(d.max()))
    return best


# -- auction state ---------------------------------------------------------


class AuctionState:
    """Mutable state of one auction between a bidder and an object diagram.

    Holds prices, the current partial assignment, the kd-tree over
    off-diagonal objects and the two lazy heaps.  The tree geometry may be
    shared between states; everything else is confined to this state.
    """

    def __init__(self, bidders, objects, prices, epsilon,
                 tree: _core.KDTreeArrays | None = None):
        self.bz, self.b_del, self.b_isdiag = bidders
        self.oz, self.o_del, self.o_isdiag = objects
        nb, no = len(self.b_del), len(self.o_del)
        if prices is None:
            prices = np.zeros(no)
        else:
            prices = np.asarray(prices, dtype=np.float64).copy()
            if len(prices) != no:
                raise ValueError(
                    f"price vector length {len(prices)} != object count {no}")
            if np.any(prices < 0):
                raise ValueError("prices must be non-negative")
        self.prices = prices
        self.epsilon = float(epsilon)
        self.assigned = np.full(nb, -1, dtype=np.int64)
        self.owner = np.full(no, -1, dtype=np.int64)
        self.diag_ids = np.flatnonzero(self.o_isdiag).astype(np.int64)
        self.offdiag_ids = np.flatnonzero(~self.o_isdiag).astype(np.int64)
        if tree is None:
            tree = _core.KDTreeArrays(
                self.oz[self.offdiag_ids], self.offdiag_ids, no)
        self.tree = tree
        self._zeros = np.zeros(no)
        cap_d = max(64, 4 * len(self.diag_ids))
        cap_e = max(64, 4 * len(self.offdiag_ids))
        self._dh_key = np.empty(cap_d)
        self._dh_idx = np.empty(cap_d, dtype=np.int64)
        self._eh_key = np.empty(cap_e)
        self._eh_idx = np.empty(cap_e, dtype=np.int64)
        self.hsizes = np.zeros(2, dtype=np.int64)
        self.refresh_structures()

    @property
    def n_bidders(self) -> int:
        return len(self.b_del)

    @property
    def n_objects(self) -> int:
        return len(self.o_del)

    def refresh_structures(self):
        """Rebuild minimum prices and heaps from the current price vector."""
        self.minprice = self.tree.fresh_minprice(self.prices)
        self.hsizes[0] = _core.heap_rebuild(
            self._dh_key, self._dh_idx, self.diag_ids, self._zeros, self.prices)
        self.hsizes[1] = _core.heap_rebuild(
            self._eh_key, self._eh_idx, self.offdiag_ids, self.o_del, self.prices)

    def reset_assignment(self):
        self.assigned.fill(-1)
        self.owner.fill(-1)

    def run_round(self):
        """Bid until all bidders are assigned (one auction round)."""
        if self.n_bidders == 0:
            return 0
        t = self.tree
        bids = _core.run_round(
            self.bz, self.b_del, self.b_isdiag,
            self.oz, self.o_del, self.o_isdiag, self.prices,
            self.assigned, self.owner, self.epsilon,
            t.left, t.right, t.start, t.end, t.lo, t.hi, t.perm, t.leaf_of,
            t.parent, self.minprice,
            self._dh_key, self._dh_idx, self._eh_key, self._eh_idx,
            self.hsizes, self.diag_ids, self.offdiag_ids, self._zeros)
        if bids < 0:
            raise RuntimeError("auction round failed: no purchasable object")
        return bids

    def best_two(self, bidder: int):
        """Best-two candidate search for one bidder (exposed for testing)."""
        t = self.tree
        return _core.best_two(
            bidder, self.bz, self.b_del, self.b_isdiag,
            self.oz, self.o_del, self.prices,
            t.left, t.right, t.start, t.end, t.lo, t.hi, t.perm, self.minprice,
            self._dh_key, self._dh_idx, self._eh_key, self._eh_idx,
            self.hsizes, self._zeros)

    def cost_terms(self) -> np.ndarray:
        return assignment_cost_terms(
            self.bz, self.b_del, self.b_isdiag,
            self.oz, self.o_del, self.o_isdiag, self.assigned)

    def result(self) -> AssignmentResult:
        cost = float(self.cost_terms().sum())
        return AssignmentResult(self.assigned.copy(), cost, float(np.sqrt(cost)))


def _check_solver_params(params: MetricParams):
    if params.q != 2.0:
        raise ValueError("the auction solver supports q = 2 only")


def _check_finite(*diagrams: PersistenceDiagram):
    for D in diagrams:
        if len(D) and not (np.all(np.isfinite(D.births))
                           and np.all(np.isfinite(D.deaths))):
            raise ValueError(f"diagram {D.label!r} has non-finite coordinates")


def prepare_auction(Df: PersistenceDiagram, Dg: PersistenceDiagram,
                    params: MetricParams, prices=None,
                    epsilon: float | None = None) -> AuctionState:
    """Build the auction state for D'f (bidders) vs D'g (objects)."""
    _check_solver_params(params)
    _check_finite(Df, Dg)
    bidders, objects = _augmented_arrays(Df, Dg, params)
    if epsilon is None:
        epsilon = max(_max_edge_sq(*bidders, *objects) / 4.0,
                      np.finfo(np.float64).tiny)
    return AuctionState(bidders, objects, prices, epsilon)


# -- public operations -----------------------------------------------------


def munkres_assignment(Df: PersistenceDiagram, Dg: PersistenceDiagram,
                       params: MetricParams | None = None,
                       size_guard: int = MUNKRES_SIZE_GUARD) -> AssignmentResult:
    """Exact optimal assignment between the augmented diagrams."""
    params = params or MetricParams()
    _check_finite(Df, Dg)
    n, m = len(Df), len(Dg)
    if n + m > size_guard:
        raise MunkresSizeError(
            f"total size {n + m} exceeds the exact-solver guard {size_guard}; "
            "use the auction solver instead")
    q = params.q
    if params.alpha > 0 and q != 2.0:
        raise ValueError("geometric lifting requires q = 2")
    size = n + m
    if size == 0:
        return AssignmentResult(np.empty(0, dtype=np.int64), 0.0, 0.0)
    C = np.zeros((size, size))
    if q == 2.0:
        bz, b_del = embed_real(Df.births, Df.deaths, Df.locations(params), params)
        oz, o_del = embed_real(Dg.births, Dg.deaths, Dg.locations(params), params)
        if n and m:
            C[:n, :m] = cdist(bz, oz, "sqeuclidean")
        C[:n, m:] = b_del[:, None]
        C[n:, :m] = o_del[None, :]
    else:
        if n and m:
            C[:n, :m] = (
                np.abs(Df.births[:, None] - Dg.births[None, :]) ** q
                + np.abs(Df.deaths[:, None] - Dg.deaths[None, :]) ** q)
        C[:n, m:] = (2.0 * ((Df.deaths - Df.births) / 2.0) ** q)[:, None]
        C[n:, :m] = (2.0 * ((Dg.deaths - Dg.births) / 2.0) ** q)[None, :]
    rows, cols = linear_sum_assignment(C)
    mapping = np.empty(size, dtype=np.int64)
    mapping[rows] = cols
    cost = float(C[rows, cols].sum())
    return AssignmentResult(mapping, cost, float(cost ** (1.0 / q)))


def auction_round(state: AuctionState) -> AuctionState:
    """Run one auction round on ``state`` at its current epsilon."""
    state.run_round()
    return state


def auction_until_converged(Df: PersistenceDiagram, Dg: PersistenceDiagram,
                            params: MetricParams | None = None,
                            gamma: float = 0.01,
                            max_rounds: int = MAX_SCALING_ROUNDS
                            ) -> AssignmentResult:
    """Epsilon-scaled auction with the certified stopping condition.

    The returned distance d satisfies W2 <= d <= (1 + gamma) * W2.
    """
    params = params or MetricParams()
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    state = prepare_auction(Df, Dg, params)
    nb = state.n_bidders
    if nb == 0:
        return state.result()
    slack = (1.0 + gamma) ** 2
    # below this epsilon the bid increment vanishes in double rounding against
    # the accumulated price scale, so further scaling cannot terminate; the
    # matching is then optimal to floating-point resolution anyway
    eps_exhausted = state.epsilon * 2.0**-44
    for _ in range(max_rounds):
        state.reset_assignment()
        state.refresh_structures()
        state.run_round()
        c2 = float(state.cost_terms().sum())
        if not np.isfinite(c2):
            raise ValueError("non-finite assignment cost")
        if c2 == 0.0 or c2 <= slack * (c2 - state.epsilon * nb):
            return state.result()
        if state.epsilon <= eps_exhausted:
            return state.result()
        state.epsilon /= EPSILON_DIVISOR
    raise RuntimeError("auction did not reach its stopping condition")


def single_round_with_prices(Df: PersistenceDiagram, Dg: PersistenceDiagram,
                             prices, epsilon: float,
                             params: MetricParams | None = None
                             ) -> tuple[AssignmentResult, np.ndarray]:
    """One auction round from supplied prices; returns the updated prices."""
    params = params or MetricParams()
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    state = prepare_auction(Df, Dg, params, prices=prices, epsilon=epsilon)
    state.run_round()
    return state.result(), state.prices.copy()
