"""Wasserstein barycenters of persistence diagrams.

Two optimizers over the Frechet energy: the reference relaxation scheme
(N assignments to the current candidate, then an arithmetic-mean update,
iterated until the assignments stabilize) and the progressive scheme, which
performs a single warm-started auction round per assignment (price
memorization), lowers the auction epsilon once per relaxation, reveals
input points in decreasing persistence order, parallelizes the assignment
phase over inputs, and honors a wall-clock budget.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .assignment import (
    AuctionState,
    _max_edge_sq,
    auction_until_converged,
    embed_real,
    munkres_assignment,
)
from .diagram import MetricParams, PersistenceDiagram, threshold_by_persistence

__all__ = [
    "BarycenterConfig",
    "BarycenterState",
    "TraceRecord",
    "reference_barycenter",
    "progressive_barycenter",
    "relaxation_step",
    "persistence_scaling",
    "frechet_energy",
    "write_trace",
]


@dataclass(frozen=True)
class BarycenterConfig:
    """Knobs of the progressive optimizer."""

    time_limit: float | None = None       # seconds; None = run to convergence
    epsilon_divisor: float = 5.0
    epsilon_floor_ratio: float = 1e-5     # stop blocked above this * initial
    rho_growth_cap: float = 0.10          # max relative reveal per relaxation
    tau: float = 4.0                      # rho floor is sqrt(tau * epsilon)
    gamma_for_energy: float = 0.01
    threads: int = 1
    seed: int = 0
    max_relaxations: int = 100000

    def __post_init__(self):
        if self.epsilon_divisor <= 1 or self.tau <= 0 or self.threads < 1:
            raise ValueError("bad progressive configuration")
        if not 0 < self.rho_growth_cap <= 1:
            raise ValueError("rho_growth_cap must lie in (0, 1]")


@dataclass
class TraceRecord:
    step: int
    elapsed_seconds: float
    epsilon: float
    rho: float
    candidate_size: int
    approx_energy: float
    converged_energy: float | None = None


def write_trace(path: str | os.PathLike, trace: list[TraceRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "elapsed_seconds", "epsilon", "rho",
                    "candidate_size", "approx_energy", "converged_energy"])
        for r in trace:
            w.writerow([r.step, "%.17g" % r.elapsed_seconds,
                        "%.17g" % r.epsilon, "%.17g" % r.rho,
                        r.candidate_size, "%.17g" % r.approx_energy,
                        "" if r.converged_energy is None
                        else "%.17g" % r.converged_energy])


# -- candidate bookkeeping -------------------------------------------------


class _Candidate:
    """Mutable barycenter point set in (birth, death, locations) space."""

    def __init__(self, D: PersistenceDiagram):
        self.pair_type = D.pair_type
        self.births = D.births.copy()
        self.deaths = D.deaths.copy()
        self.birth_locs = D.birth_locs.copy()
        self.death_locs = D.death_locs.copy()

    def __len__(self):
        return len(self.births)

    def append(self, births, deaths, birth_locs, death_locs):
        self.births = np.concatenate([self.births, births])
        self.deaths = np.concatenate([self.deaths, deaths])
        self.birth_locs = np.concatenate([self.birth_locs, birth_locs])
        self.death_locs = np.concatenate([self.death_locs, death_locs])

    def diagram(self, label: str = "barycenter",
                prune: bool = False) -> PersistenceDiagram:
        births, deaths = self.births, self.deaths
        bl, dl = self.birth_locs, self.death_locs
        if prune:
            keep = deaths - births > 0
            births, deaths, bl, dl = births[keep], deaths[keep], bl[keep], dl[keep]
        order = np.lexsort((deaths, births))
        crit_low = 0 if self.pair_type.value == "minSaddle" else 1
        return PersistenceDiagram(
            births[order], deaths[order], self.pair_type,
            crit_low=np.full(len(order), crit_low, dtype=np.int64),
            birth_locs=bl[order], death_locs=dl[order], label=label)


@dataclass
class BarycenterState:
    """All mutable state of one progressive barycenter run."""

    candidate: _Candidate
    price_real: list[np.ndarray]        # per input, one price per candidate pt
    price_ghost: list[np.ndarray]       # per input, one price per INPUT point
    epsilon: float
    epsilon_initial: float
    rho: float
    energy_history: list[float] = field(default_factory=list)
    relaxation_count: int = 0
    started_at: float = field(default_factory=time.perf_counter)
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    injected: int = 0

    def elapsed(self) -> float:
        return time.perf_counter() - self.started_at


def _initial_epsilon(F, candidate: _Candidate, rho: float,
                     params: MetricParams) -> float:
    """A quarter of the largest squared edge weight to the initial candidate."""
    cz, cdel = embed_real(candidate.births, candidate.deaths,
                          _cand_locations(candidate, params), params)
    cdiag = np.zeros(len(cz), dtype=bool)
    best = 0.0
    for D in F:
        Dr = threshold_by_persistence(D, rho)
        bz, bdel = embed_real(Dr.births, Dr.deaths, Dr.locations(params), params)
        bdiag = np.zeros(len(bz), dtype=bool)
        best = max(best, _max_edge_sq(bz, bdel, bdiag, cz, cdel, cdiag))
    return max(best / 4.0, np.finfo(np.float64).tiny)


def _cand_locations(candidate: _Candidate, params: MetricParams) -> np.ndarray:
    lam = params.lam(candidate.pair_type)
    return lam * candidate.death_locs + (1.0 - lam) * candidate.birth_locs


def _pick_member(F, rng: np.random.Generator) -> int:
    """Random input index, preferring non-empty diagrams: an empty initial
    candidate is a degenerate fixed point of the relaxation."""
    nonempty = [i for i, D in enumerate(F) if len(D)]
    pool = nonempty or list(range(len(F)))
    return pool[int(rng.integers(len(pool)))]


def initialize_state(F: list[PersistenceDiagram], params: MetricParams,
                     config: BarycenterConfig,
                     rho: float | None = None) -> BarycenterState:
    if not F:
        raise ValueError("empty ensemble")
    rng = np.random.default_rng(config.seed)
    if rho is None:
        rho = 0.5 * max(D.max_persistence() for D in F)
    member = _pick_member(F, rng)
    candidate = _Candidate(threshold_by_persistence(F[member], rho))
    eps0 = _initial_epsilon(F, candidate, rho, params)
    nc = len(candidate)
    return BarycenterState(
        candidate=candidate,
        price_real=[np.zeros(nc) for _ in F],
        price_ghost=[np.zeros(len(D)) for D in F],
        epsilon=eps0,
        epsilon_initial=eps0,
        rho=rho,
        rng=rng,
    )


# -- one relaxation --------------------------------------------------------


def _candidate_geometry(state: BarycenterState, params: MetricParams):
    """Shared embedding + kd-tree of the candidate points for one phase."""
    cand = state.candidate
    nc = len(cand)
    cz, cdel = embed_real(cand.births, cand.deaths,
                          _cand_locations(cand, params), params)
    tree = _core.KDTreeArrays(cz, np.arange(nc, dtype=np.int64), max(nc, 1))
    return cz, cdel, tree


def _member_round(state: BarycenterState, F, i: int, params: MetricParams,
                  geometry, epsilon: float):
    """One auction round of input ``i`` against the candidate, warm-started
    from its memorized prices (which are updated in place)."""
    cz, cdel, tree = geometry
    nc, k = cz.shape
    D = F[i]
    mask = D.persistence > state.rho
    ni = int(mask.sum())
    bz, bdel = embed_real(D.births[mask], D.deaths[mask],
                          D.locations(params)[mask], params)
    bidders = (np.concatenate([bz, np.zeros((nc, k))]),
               np.concatenate([bdel, np.zeros(nc)]),
               np.concatenate([np.zeros(ni, dtype=bool),
                               np.ones(nc, dtype=bool)]))
    objects = (np.concatenate([cz, np.zeros((ni, k))]),
               np.concatenate([cdel, np.zeros(ni)]),
               np.concatenate([np.zeros(nc, dtype=bool),
                               np.ones(ni, dtype=bool)]))
    prices = np.concatenate([state.price_real[i],
                             state.price_ghost[i][mask]])
    st = AuctionState(bidders, objects, prices, epsilon, tree=tree)
    st.run_round()
    cost = float(st.cost_terms().sum())
    state.price_real[i] = st.prices[:nc].copy()
    state.price_ghost[i][mask] = st.prices[nc:]
    return cost, st.owner[:nc].copy(), mask


def _assignment_phase(state: BarycenterState, F, params: MetricParams,
                      threads: int):
    """One warm-started auction round per input, in parallel.

    Returns (total squared cost, per-input owner arrays, revealed masks).
    """
    geometry = _candidate_geometry(state, params)

    def work(i: int):
        return _member_round(state, F, i, params, geometry, state.epsilon)

    if threads > 1 and len(F) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(len(F))))
    else:
        results = [work(i) for i in range(len(F))]
    total = sum(r[0] for r in results)
    owners = [r[1] for r in results]
    masks = [r[2] for r in results]
    return total, owners, masks


def _update_phase(state: BarycenterState, F, owners, masks):
    """Move each candidate point to the mean of its assigned points."""
    cand = state.candidate
    nc = len(cand)
    if nc == 0:
        return
    sb = np.zeros(nc)
    sd = np.zeros(nc)
    sbl = np.zeros((nc, 3))
    sdl = np.zeros((nc, 3))
    ghost_b = (cand.births + cand.deaths) / 2.0
    for D, owner, mask in zip(F, owners, masks):
        ni = int(mask.sum())
        a = owner
        real = a < ni
        idx = np.flatnonzero(mask)[a[real]]
        tb = ghost_b.copy()
        td = ghost_b.copy()
        tbl = cand.birth_locs.copy()
        tdl = cand.death_locs.copy()
        tb[real] = D.births[idx]
        td[real] = D.deaths[idx]
        tbl[real] = D.birth_locs[idx]
        tdl[real] = D.death_locs[idx]
        sb += tb
        sd += td
        sbl += tbl
        sdl += tdl
    n = float(len(F))
    cand.births = sb / n
    cand.deaths = sd / n
    cand.birth_locs = sbl / n
    cand.death_locs = sdl / n


def relaxation_step(state: BarycenterState, F, params: MetricParams,
                    config: BarycenterConfig) -> BarycenterState:
    """Assignment (one auction round each) + Update + epsilon scaling."""
    cost, owners, masks = _assignment_phase(state, F, params, config.threads)
    _update_phase(state, F, owners, masks)
    state.energy_history.append(cost)
    floor = config.epsilon_floor_ratio * state.epsilon_initial
    if not _all_revealed(state, F):
        # keep the auction resolution matched to the persistence scale about
        # to be revealed (the rho >= sqrt(tau * epsilon) coupling, inverted);
        # finer epsilon now would only fuel bidding wars over unsettled points
        floor = max(floor,
                    _reveal_target(state.rho, F, config.rho_growth_cap) ** 2
                    / config.tau)
    state.epsilon = max(state.epsilon / config.epsilon_divisor, floor)
    state.relaxation_count += 1
    return state


# -- persistence progressivity ---------------------------------------------


def _reveal_target(rho: float, F, growth_cap: float) -> float:
    """Persistence threshold that grows the revealed point count by exactly
    the per-relaxation cap (0.0 once every point fits within the cap)."""
    all_pers = np.sort(np.concatenate([D.persistence for D in F]))[::-1]
    all_pers = all_pers[all_pers > 0]
    cur = int((all_pers > rho).sum())
    allowed = max(cur + 1, int((1.0 + growth_cap) * cur))
    if allowed >= len(all_pers):
        return 0.0
    target = float(all_pers[allowed])
    if target < rho:
        return target
    # a tie block sits exactly at the current threshold; since the reveal is
    # strict, the threshold must drop past the whole block to make progress
    below = all_pers[all_pers < rho]
    return float(below[0]) if len(below) else 0.0


def persistence_scaling(state: BarycenterState, F,
                        config: BarycenterConfig) -> float:
    """Lower rho so the revealed point count grows by at most the cap,
    with the sqrt(tau * epsilon) floor; inject candidate points for newly
    revealed input points, priced at each input's previous minimum."""
    floor_val = float(np.sqrt(config.tau * state.epsilon))
    target = _reveal_target(state.rho, F, config.rho_growth_cap)
    new_rho = min(state.rho, max(floor_val, target))
    return lower_rho(state, F, new_rho)


def lower_rho(state: BarycenterState, F, new_rho: float) -> float:
    """Apply a reveal threshold decrease: reprice fresh ghost objects and
    inject candidate points drawn from the newly revealed input points."""
    if new_rho >= state.rho:
        state.rho = new_rho
        return new_rho

    pool_b, pool_d, pool_bl, pool_dl = [], [], [], []
    per_input_new = []
    floor_prices = []
    for i, D in enumerate(F):
        # minimum over the candidate objects only: ghost prices sit near zero
        # and would re-open the gap to the inflated real-object price level
        pr = state.price_real[i]
        floor_prices.append(float(pr.min()) if len(pr) else 0.0)
        pers = D.persistence
        newly = (pers > new_rho) & (pers <= state.rho)
        per_input_new.append(int(newly.sum()))
        if np.any(newly):
            # fresh ghost objects likewise enter at the prevailing ghost
            # price level so they do not trigger bidding wars
            revealed = pers > state.rho
            pg = state.price_ghost[i][revealed]
            state.price_ghost[i][newly] = float(pg.min()) if len(pg) else 0.0
            pool_b.append(D.births[newly])
            pool_d.append(D.deaths[newly])
            pool_bl.append(D.birth_locs[newly])
            pool_dl.append(D.death_locs[newly])
    state.rho = new_rho
    n_new = max(per_input_new) if per_input_new else 0
    if n_new == 0 or not pool_b:
        return new_rho
    pb = np.concatenate(pool_b)
    pd = np.concatenate(pool_d)
    pbl = np.concatenate(pool_bl)
    pdl = np.concatenate(pool_dl)
    pick = state.rng.choice(len(pb), size=min(n_new, len(pb)), replace=False)
    pick.sort()
    state.candidate.append(pb[pick], pd[pick], pbl[pick], pdl[pick])
    for i in range(len(F)):
        state.price_real[i] = np.concatenate(
            [state.price_real[i], np.full(len(pick), floor_prices[i])])
    state.injected += len(pick)
    return new_rho


def _all_revealed(state: BarycenterState, F) -> bool:
    for D in F:
        pers = D.persistence
        if np.any((pers > 0) & (pers <= state.rho)):
            return False
    return True


def _reveal_done(state: BarycenterState, F, config: BarycenterConfig) -> bool:
    """Reveal is finished when every point is in play or rho sits at its
    terminal sqrt(tau * epsilon_floor) value; points whose persistence lies
    below the terminal auction resolution stay hidden by design."""
    terminal = np.sqrt(config.tau * config.epsilon_floor_ratio
                       * state.epsilon_initial)
    return (state.rho <= terminal * (1.0 + 1e-12)
            or _all_revealed(state, F))


# -- drivers ---------------------------------------------------------------


def frechet_energy(candidate: PersistenceDiagram, F,
                   params: MetricParams | None = None,
                   gamma: float = 0.01) -> float:
    """Sum of squared converged Wasserstein distances to the ensemble."""
    params = params or MetricParams()
    return sum(auction_until_converged(candidate, D, params, gamma).cost
               for D in F)


def _two_increases(hist: list[float]) -> bool:
    return (len(hist) >= 3
            and hist[-1] > hist[-2] > hist[-3])


_STALL_PATIENCE = 10  # iterations without a new best energy before stopping
_STALL_RTOL = 1e-9    # relative improvement that counts as progress


def _plateau(hist: list[float], k: int = 3, rtol: float = 1e-12) -> bool:
    if len(hist) < k:
        return False
    tail = hist[-k:]
    scale = max(abs(t) for t in tail)
    return max(tail) - min(tail) <= rtol * max(scale, 1.0)


def progressive_barycenter(F: list[PersistenceDiagram],
                           params: MetricParams | None = None,
                           config: BarycenterConfig | None = None
                           ) -> tuple[PersistenceDiagram, list[TraceRecord]]:
    """Interruptible progressive barycenter run.

    Without a time limit, runs until every input point is revealed, epsilon
    has fallen below its floor and the approximate energy has stopped
    improving.  With a limit, reveals points only during the first 10% of
    the budget and returns at the deadline (overshoot bounded by one
    relaxation).  Returns the best candidate observed since the last point
    injection, plus the energy/time trace.
    """
    params = params or MetricParams()
    config = config or BarycenterConfig()
    state = initialize_state(F, params, config)
    trace: list[TraceRecord] = []
    best: tuple[float, PersistenceDiagram] | None = None
    since_best = 0
    tmax = config.time_limit
    while state.relaxation_count < config.max_relaxations:
        relaxation_step(state, F, params, config)
        energy = state.energy_history[-1]
        trace.append(TraceRecord(
            step=state.relaxation_count, elapsed_seconds=state.elapsed(),
            epsilon=state.epsilon, rho=state.rho,
            candidate_size=len(state.candidate), approx_energy=energy))
        if best is None or energy < best[0] * (1.0 - _STALL_RTOL):
            best = (energy, state.candidate.diagram(prune=True))
            since_best = 0
        else:
            since_best += 1
        if tmax is not None:
            if state.elapsed() >= tmax:
                break
            if state.elapsed() < 0.1 * tmax:
                before = state.injected
                persistence_scaling(state, F, config)
                if state.injected != before:
                    best = None  # energies before/after a reveal not comparable
                    since_best = 0
        else:
            before = state.injected
            persistence_scaling(state, F, config)
            if state.injected != before:
                best = None  # energies before/after a reveal not comparable
                since_best = 0
            if (_reveal_done(state, F, config)
                    and state.epsilon
                    <= config.epsilon_floor_ratio * state.epsilon_initial
                    and (_two_increases(state.energy_history)
                         or _plateau(state.energy_history)
                         or since_best >= _STALL_PATIENCE)):
                break
    if best is not None:
        result = best[1]
    else:
        result = state.candidate.diagram(prune=True)
    return result, trace


def reference_barycenter(F: list[PersistenceDiagram],
                         params: MetricParams | None = None,
                         solver: str = "auction",
                         seed: int = 0,
                         gamma: float = 0.01,
                         munkres_guard: int = 2000,
                         max_iterations: int = 1000) -> PersistenceDiagram:
    """Baseline relaxation scheme with exact or converged-auction assignments.

    ``solver`` is "munkres" (stop when assignments stabilize) or "auction"
    (stop after two successive Frechet energy increases, returning the best
    candidate seen).
    """
    if not F:
        raise ValueError("empty ensemble")
    if solver not in ("munkres", "auction"):
        raise ValueError(f"unknown solver {solver!r}")
    params = params or MetricParams()
    rng = np.random.default_rng(seed)
    cand = _Candidate(F[_pick_member(F, rng)])
    masks = [np.ones(len(D), dtype=bool) for D in F]
    prev_mappings = None
    energies: list[float] = []
    best: tuple[float, PersistenceDiagram] | None = None
    since_best = 0
    for _ in range(max_iterations):
        Dc = cand.diagram(prune=False)
        owners = []
        mappings = []
        energy = 0.0
        for D in F:
            if solver == "munkres":
                res = munkres_assignment(D, Dc, params, size_guard=munkres_guard)
            else:
                res = auction_until_converged(D, Dc, params, gamma)
            energy += res.cost
            mappings.append(res.mapping.tobytes())
            # owner over candidate objects: invert bidder -> object
            owner = np.full(len(D) + len(cand), -1, dtype=np.int64)
            owner[res.mapping] = np.arange(len(res.mapping))
            owners.append(owner[:len(cand)])
        energies.append(energy)
        if best is None or energy < best[0] * (1.0 - _STALL_RTOL):
            best = (energy, Dc)
            since_best = 0
        else:
            since_best += 1
        if solver == "munkres" and prev_mappings == mappings:
            return cand.diagram(prune=True)
        if solver == "auction" and (_two_increases(energies)
                                    or _plateau(energies)
                                    or since_best >= _STALL_PATIENCE):
            break
        prev_mappings = mappings
        # candidate order is unchanged by the re-sort only if already sorted;
        # update must address points in the order Dc was presented
        sort_order = np.lexsort((cand.deaths, cand.births))
        inv = np.empty_like(sort_order)
        inv[sort_order] = np.arange(len(sort_order))
        owners = [o[inv] for o in owners]
        _update_phase_for(cand, F, owners, masks)
    if solver == "munkres":
        return cand.diagram(prune=True)
    assert best is not None
    b, d, bl, dl = best[1].births, best[1].deaths, best[1].birth_locs, best[1].death_locs
    keep = d - b > 0
    return PersistenceDiagram(b[keep], d[keep], best[1].pair_type,
                              birth_locs=bl[keep], death_locs=dl[keep],
                              label="barycenter")


def _update_phase_for(cand: _Candidate, F, owners, masks):
    shim = BarycenterState(candidate=cand, price_real=[], price_ghost=[],
                           epsilon=1.0, epsilon_initial=1.0, rho=0.0)
    _update_phase(shim, F, owners, masks)
