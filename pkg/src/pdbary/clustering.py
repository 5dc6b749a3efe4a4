"""Progressive k-means clustering of persistence diagrams.

Members are assigned to their nearest centroid under converged auction
Wasserstein distances with Elkan triangle-inequality pruning; each centroid
then advances by exactly one barycenter relaxation (one warm-started auction
round per member plus an arithmetic-mean update).  Epsilon scaling and the
persistence reveal threshold are shared globally across clusters so member
migrations compare like-for-like truncated diagrams.  Migrated members get
zeroed prices and a catch-up auction replaying the epsilon schedule down to
the global value.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .assignment import auction_until_converged
from .barycenter import (
    BarycenterState,
    TraceRecord,
    _all_revealed,
    _candidate_geometry,
    _Candidate,
    _initial_epsilon,
    _member_round,
    _reveal_target,
    _update_phase,
    lower_rho,
)
from .diagram import MetricParams, PersistenceDiagram, threshold_by_persistence

__all__ = [
    "ClusteringConfig",
    "kmeans_plus_plus_init",
    "elkan_prune",
    "cluster_diagrams",
]


@dataclass(frozen=True)
class ClusteringConfig:
    """Knobs of the progressive k-means optimizer."""

    k: int
    time_limit: float | None = None
    seed: int = 0
    gamma_assign: float = 0.01
    threads: int = 1
    epsilon_divisor: float = 5.0
    epsilon_floor_ratio: float = 1e-5
    rho_growth_cap: float = 0.10
    tau: float = 4.0
    max_iterations: int = 500

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.gamma_assign <= 0 or self.threads < 1:
            raise ValueError("bad clustering configuration")


def _seed_indices(F, k: int, params: MetricParams, seed: int,
                  gamma: float = 0.01) -> list[int]:
    """k-means++ seeding: first uniform, then proportional to the squared
    converged Wasserstein distance to the nearest chosen centroid."""
    N = len(F)
    if k > N:
        raise ValueError(f"k = {k} exceeds ensemble size {N}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(N))]
    d2 = np.array([auction_until_converged(F[m], F[chosen[0]], params,
                                           gamma).cost for m in range(N)])
    while len(chosen) < k:
        probs = d2.copy()
        probs[chosen] = 0.0
        total = probs.sum()
        if total > 0:
            nxt = int(rng.choice(N, p=probs / total))
        else:
            remaining = [m for m in range(N) if m not in chosen]
            nxt = remaining[int(rng.integers(len(remaining)))]
        chosen.append(nxt)
        nd = np.array([auction_until_converged(F[m], F[nxt], params,
                                               gamma).cost for m in range(N)])
        d2 = np.minimum(d2, nd)
    return chosen


def kmeans_plus_plus_init(F: list[PersistenceDiagram], k: int,
                          params: MetricParams | None = None,
                          seed: int = 0) -> list[PersistenceDiagram]:
    params = params or MetricParams()
    return [F[i].copy() for i in _seed_indices(F, k, params, seed)]


def elkan_prune(member_dist: float, centroid_dists: np.ndarray,
                owner: int, slack: float = 1.0) -> np.ndarray:
    """Candidate centroid indices that may beat the owner.

    Centroid j is excluded whenever d(owner, j) >= 2 * slack * member_dist
    (triangle inequality); ``slack`` > 1 keeps the bound safe when the
    distances are (1 + gamma)-approximate.
    """
    row = np.asarray(centroid_dists)[owner]
    keep = row < 2.0 * slack * member_dist
    keep = keep.copy()
    keep[owner] = True
    return np.flatnonzero(keep)


def _make_cluster_state(member: PersistenceDiagram, members, rho, eps,
                        eps0, rng) -> BarycenterState:
    state = BarycenterState(
        candidate=_Candidate(threshold_by_persistence(member, rho)),
        price_real=[], price_ghost=[],
        epsilon=eps, epsilon_initial=eps0, rho=rho, rng=rng)
    nc = len(state.candidate)
    for D in members:
        state.price_real.append(np.zeros(nc))
        state.price_ghost.append(np.zeros(len(D)))
    return state


def _catchup(state: BarycenterState, members, pos: int,
             params: MetricParams, eps0: float, eps_global: float,
             divisor: float) -> None:
    """Warm a freshly migrated member's zeroed prices by replaying the
    epsilon schedule from the standard start down to the global value."""
    geometry = _candidate_geometry(state, params)
    eps = eps0
    while eps > eps_global:
        _member_round(state, members, pos, params, geometry, eps)
        eps /= divisor
    _member_round(state, members, pos, params, geometry, eps_global)


def cluster_diagrams(F: list[PersistenceDiagram],
                     params: MetricParams | None = None,
                     config: ClusteringConfig | None = None
                     ) -> tuple[np.ndarray, list[PersistenceDiagram],
                                list[TraceRecord]]:
    """Progressive k-means; returns (labels, centroids, trace)."""
    params = params or MetricParams()
    config = config or ClusteringConfig(k=1)
    N = len(F)
    if N == 0:
        raise ValueError("empty ensemble")
    k = config.k
    if k > N:
        raise ValueError(f"k = {k} exceeds ensemble size {N}")
    rng = np.random.default_rng(config.seed)
    started = time.perf_counter()
    slack = (1.0 + config.gamma_assign) ** 2

    rho = 0.5 * max(D.max_persistence() for D in F)
    F_rho = [threshold_by_persistence(D, rho) for D in F]
    seeds = _seed_indices(F_rho, k, params, config.seed, config.gamma_assign)

    # initial labels: exhaustive nearest seeded centroid
    labels = np.zeros(N, dtype=np.int64)
    for m in range(N):
        d = [auction_until_converged(F_rho[m], F_rho[s], params,
                                     config.gamma_assign).distance
             for s in seeds]
        labels[m] = int(np.argmin(d))

    members: list[list[int]] = [[m for m in range(N) if labels[m] == j]
                                for j in range(k)]
    states: list[BarycenterState] = []
    eps0 = 0.0
    for j in range(k):
        mem_diags = [F[m] for m in members[j]]
        st = _make_cluster_state(F[seeds[j]], mem_diags, rho, 1.0, 1.0, rng)
        eps0 = max(eps0, _initial_epsilon(
            [threshold_by_persistence(D, rho) for D in mem_diags] or
            [threshold_by_persistence(F[seeds[j]], rho)],
            st.candidate, 0.0, params))
        states.append(st)
    eps0 = max(eps0, np.finfo(np.float64).tiny)
    eps = eps0
    for st in states:
        st.epsilon = eps0
        st.epsilon_initial = eps0

    trace: list[TraceRecord] = []
    tmax = config.time_limit
    terminal_rho = float(np.sqrt(config.tau * config.epsilon_floor_ratio
                                 * eps0))
    for iteration in range(config.max_iterations):
        # ---- Assignment: converged distances with Elkan pruning
        centroid_diags = [st.candidate.diagram(prune=False) for st in states]
        cd = np.zeros((k, k))
        for a in range(k):
            for b in range(a + 1, k):
                cd[a, b] = cd[b, a] = auction_until_converged(
                    centroid_diags[a], centroid_diags[b], params,
                    config.gamma_assign).distance

        def nearest(m: int):
            o = int(labels[m])
            d_own = auction_until_converged(
                F_rho[m], centroid_diags[o], params,
                config.gamma_assign).distance
            best, bestd = o, d_own
            for j in elkan_prune(d_own, cd, o, slack):
                if j == o:
                    continue
                d = auction_until_converged(
                    F_rho[m], centroid_diags[j], params,
                    config.gamma_assign).distance
                if d < bestd or (d == bestd and j < best):
                    best, bestd = int(j), d
            return best, bestd

        if config.threads > 1 and N > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                near = list(pool.map(nearest, range(N)))
        else:
            near = [nearest(m) for m in range(N)]
        new_labels = np.array([b for b, _ in near], dtype=np.int64)
        dist_own = np.array([d for _, d in near])

        # ---- migrations: zeroed prices plus a catch-up auction
        migrated = np.flatnonzero(new_labels != labels)
        for m in migrated:
            src, dst = int(labels[m]), int(new_labels[m])
            pos = members[src].index(m)
            members[src].pop(pos)
            states[src].price_real.pop(pos)
            states[src].price_ghost.pop(pos)
            members[dst].append(m)
            states[dst].price_real.append(
                np.zeros(len(states[dst].candidate)))
            states[dst].price_ghost.append(np.zeros(len(F[m])))
            labels[m] = dst
            _catchup(states[dst], [F[i] for i in members[dst]],
                     len(members[dst]) - 1, params, eps0, eps,
                     config.epsilon_divisor)

        # ---- empty-cluster repair: reseed with the farthest member
        repaired = False
        for j in range(k):
            if members[j]:
                continue
            repaired = True
            m = int(np.argmax(dist_own))
            src = int(labels[m])
            pos = members[src].index(m)
            members[src].pop(pos)
            states[src].price_real.pop(pos)
            states[src].price_ghost.pop(pos)
            members[j] = [m]
            states[j] = _make_cluster_state(F[m], [F[m]], rho, eps, eps0, rng)
            labels[m] = j
            dist_own[m] = 0.0

        # ---- Update: one relaxation per cluster at the global epsilon
        energy = 0.0
        for j in range(k):
            st = states[j]
            st.epsilon = eps
            st.rho = rho
            mem_diags = [F[m] for m in members[j]]
            geometry = _candidate_geometry(st, params)

            def work(i, st=st, mem=mem_diags, geom=geometry):
                return _member_round(st, mem, i, params, geom, st.epsilon)

            if config.threads > 1 and len(mem_diags) > 1:
                with ThreadPoolExecutor(max_workers=config.threads) as pool:
                    results = list(pool.map(work, range(len(mem_diags))))
            else:
                results = [work(i) for i in range(len(mem_diags))]
            energy += sum(r[0] for r in results)
            _update_phase(st, mem_diags,
                          [r[1] for r in results], [r[2] for r in results])

        # ---- global epsilon scaling, then persistence scaling
        floor = config.epsilon_floor_ratio * eps0
        shim = BarycenterState(candidate=_Candidate(
            PersistenceDiagram.empty(F[0].pair_type)),
            price_real=[], price_ghost=[], epsilon=eps,
            epsilon_initial=eps0, rho=rho)
        if not _all_revealed(shim, F):
            floor = max(floor,
                        _reveal_target(rho, F, config.rho_growth_cap) ** 2
                        / config.tau)
        eps = max(eps / config.epsilon_divisor, floor)

        reveal_open = tmax is None or (time.perf_counter() - started
                                       < 0.1 * tmax)
        if reveal_open:
            target = _reveal_target(rho, F, config.rho_growth_cap)
            new_rho = min(rho, max(float(np.sqrt(config.tau * eps)), target))
            if new_rho < rho:
                for j in range(k):
                    states[j].rho = rho
                    lower_rho(states[j], [F[m] for m in members[j]], new_rho)
                rho = new_rho
                F_rho = [threshold_by_persistence(D, rho) for D in F]

        trace.append(TraceRecord(
            step=iteration + 1,
            elapsed_seconds=time.perf_counter() - started,
            epsilon=eps, rho=rho,
            candidate_size=sum(len(st.candidate) for st in states),
            approx_energy=energy))

        stable = len(migrated) == 0 and not repaired
        shim.rho = rho
        reveal_done = (rho <= terminal_rho * (1.0 + 1e-12)
                       or _all_revealed(shim, F))
        if (stable and reveal_done
                and eps <= config.epsilon_floor_ratio * eps0 * (1 + 1e-12)):
            break
        if tmax is not None and time.perf_counter() - started >= tmax:
            break

    centroids = [st.candidate.diagram(label=f"centroid_{j}", prune=True)
                 for j, st in enumerate(states)]
    return labels.copy(), centroids, trace
