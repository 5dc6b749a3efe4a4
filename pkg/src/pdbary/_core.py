"""Numba kernels for the auction solver.

Candidate search uses the two structures of the accelerated auction for
persistence diagrams: a kd-tree over off-diagonal objects augmented with
subtree minimum prices (branch-and-bound on value = -distance^2 - price),
and lazy min-heaps for the bidder-independent candidates (diagonal objects
keyed by price, off-diagonal objects keyed by deletion cost + price for
diagonal bidders).  Heap entries are invalidated lazily: an entry is stale
whenever its key no longer matches the object's current key.

Everything operates on flat arrays so that one full auction round runs as a
single jitted, GIL-releasing call.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF_SIZE = 8

_JIT = dict(cache=True, nogil=True, fastmath=False)


# -- kd-tree construction (pure python/numpy) ------------------------------


class KDTreeArrays:
    """Static kd-tree over off-diagonal object coordinates.

    The geometry is immutable; per-invocation subtree minimum prices live in
    a separate array so one tree can be shared by concurrent auctions.
    """

    __slots__ = ("left", "right", "start", "end", "lo", "hi", "parent",
                 "perm", "leaf_of", "size", "ndim")

    def __init__(self, coords: np.ndarray, obj_ids: np.ndarray, n_objects: int):
        m, k = coords.shape
        self.size = m
        self.ndim = k
        left, right, start, end, parent = [], [], [], [], []
        lo, hi = [], []
        perm = np.empty(m, dtype=np.int64)
        leaf_of = np.full(n_objects, -1, dtype=np.int64)
        cursor = [0]

        def rec(ids: np.ndarray, par: int) -> int:
            node = len(left)
            left.append(-1)
            right.append(-1)
            parent.append(par)
            pts = coords[ids]
            lo.append(pts.min(axis=0))
            hi.append(pts.max(axis=0))
            start.append(cursor[0])
            end.append(cursor[0] + len(ids))
            if len(ids) <= LEAF_SIZE:
                perm[cursor[0]: cursor[0] + len(ids)] = obj_ids[ids]
                leaf_of[obj_ids[ids]] = node
                cursor[0] += len(ids)
                return node
            axis = int(np.argmax(hi[node] - lo[node]))
            order = np.argsort(pts[:, axis], kind="stable")
            mid = len(ids) // 2
            left[node] = rec(ids[order[:mid]], node)
            right[node] = rec(ids[order[mid:]], node)
            return node

        if m:
            rec(np.arange(m), -1)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.end = np.array(end, dtype=np.int64)
        self.parent = np.array(parent, dtype=np.int64)
        self.lo = np.array(lo, dtype=np.float64).reshape(-1, k)
        self.hi = np.array(hi, dtype=np.float64).reshape(-1, k)
        self.perm = perm
        self.leaf_of = leaf_of

    def fresh_minprice(self, prices: np.ndarray) -> np.ndarray:
        minprice = np.empty(len(self.left), dtype=np.float64)
        if len(self.left):
            kd_init_minprice(self.left, self.right, self.start, self.end,
                             self.perm, prices, minprice)
        return minprice


# -- kd-tree kernels -------------------------------------------------------


@njit(**_JIT)
def kd_init_minprice(left, right, start, end, perm, prices, minprice):
    # children are created after their parent: reverse order is bottom-up
    for node in range(len(left) - 1, -1, -1):
        if left[node] == -1:
            m = np.inf
            for t in range(start[node], end[node]):
                p = prices[perm[t]]
                if p < m:
                    m = p
            minprice[node] = m
        else:
            a = minprice[left[node]]
            b = minprice[right[node]]
            minprice[node] = a if a < b else b


@njit(**_JIT)
def kd_update_price(obj, leaf_of, parent, left, right, start, end, perm,
                    prices, minprice):
    node = leaf_of[obj]
    m = np.inf
    for t in range(start[node], end[node]):
        p = prices[perm[t]]
        if p < m:
            m = p
    minprice[node] = m
    while parent[node] != -1:
        node = parent[node]
        a = minprice[left[node]]
        b = minprice[right[node]]
        m = a if a < b else b
        if m == minprice[node]:
            break
        minprice[node] = m


@njit(**_JIT)
def _mindist2(q, lo, hi, node, k):
    d2 = 0.0
    for c in range(k):
        v = q[c]
        if v < lo[node, c]:
            d = lo[node, c] - v
        elif v > hi[node, c]:
            d = v - hi[node, c]
        else:
            continue
        d2 += d * d
    return d2


@njit(**_JIT)
def kd_best_two(q, v1, j1, v2, j2, left, right, start, end, lo, hi, perm,
                minprice, prices, oz):
    """Update a running best-two (value, index) pair with the tree objects.

    value(b) = -||q - z_b||^2 - price_b; ties break toward the lowest index.
    """
    if len(left) == 0:
        return v1, j1, v2, j2
    k = oz.shape[1]
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        bound = -_mindist2(q, lo, hi, node, k) - minprice[node]
        if bound < v2:
            continue
        if left[node] == -1:
            for t in range(start[node], end[node]):
                o = perm[t]
                d2 = 0.0
                for c in range(k):
                    d = q[c] - oz[o, c]
                    d2 += d * d
                val = -d2 - prices[o]
                if val > v1 or (val == v1 and o < j1):
                    v2 = v1
                    j2 = j1
                    v1 = val
                    j1 = o
                elif (val > v2 or (val == v2 and o < j2)) and o != j1:
                    v2 = val
                    j2 = o
        else:
            l = left[node]
            r = right[node]
            dl = _mindist2(q, lo, hi, l, k)
            dr = _mindist2(q, lo, hi, r, k)
            if dl <= dr:
                stack[top] = r
                stack[top + 1] = l
            else:
                stack[top] = l
                stack[top + 1] = r
            top += 2
    return v1, j1, v2, j2


# -- lazy heaps ------------------------------------------------------------


@njit(**_JIT)
def _heap_less(k1, i1, k2, i2):
    return k1 < k2 or (k1 == k2 and i1 < i2)


@njit(**_JIT)
def heap_push(hkey, hidx, size, key, idx):
    pos = size
    hkey[pos] = key
    hidx[pos] = idx
    while pos > 0:
        par = (pos - 1) >> 1
        if _heap_less(hkey[pos], hidx[pos], hkey[par], hidx[par]):
            hkey[pos], hkey[par] = hkey[par], hkey[pos]
            hidx[pos], hidx[par] = hidx[par], hidx[pos]
            pos = par
        else:
            break
    return size + 1


@njit(**_JIT)
def heap_pop(hkey, hidx, size):
    size -= 1
    hkey[0] = hkey[size]
    hidx[0] = hidx[size]
    pos = 0
    while True:
        l = 2 * pos + 1
        if l >= size:
            break
        small = l
        r = l + 1
        if r < size and _heap_less(hkey[r], hidx[r], hkey[l], hidx[l]):
            small = r
        if _heap_less(hkey[small], hidx[small], hkey[pos], hidx[pos]):
            hkey[pos], hkey[small] = hkey[small], hkey[pos]
            hidx[pos], hidx[small] = hidx[small], hidx[pos]
            pos = small
        else:
            break
    return size


@njit(**_JIT)
def heap_rebuild(hkey, hidx, ids, base, prices):
    size = 0
    for t in range(len(ids)):
        o = ids[t]
        size = heap_push(hkey, hidx, size, base[o] + prices[o], o)
    return size


@njit(**_JIT)
def heap_top_two(hkey, hidx, size, base, prices):
    """Return the two smallest current keys (lazy-discarding stale entries)."""
    while size > 0 and hkey[0] != base[hidx[0]] + prices[hidx[0]]:
        size = heap_pop(hkey, hidx, size)
    if size == 0:
        return np.inf, -1, np.inf, -1, size
    k1 = hkey[0]
    i1 = hidx[0]
    size = heap_pop(hkey, hidx, size)
    while size > 0 and hkey[0] != base[hidx[0]] + prices[hidx[0]]:
        size = heap_pop(hkey, hidx, size)
    if size > 0:
        k2 = hkey[0]
        i2 = hidx[0]
    else:
        k2 = np.inf
        i2 = -1
    size = heap_push(hkey, hidx, size, k1, i1)
    return k1, i1, k2, i2, size


# -- candidate search ------------------------------------------------------


@njit(**_JIT)
def best_two(a, bz, b_del, b_isdiag, oz, o_del, prices,
             left, right, start, end, lo, hi, perm, minprice,
             dh_key, dh_idx, eh_key, eh_idx, hsizes, zeros_base):
    """Best and second-best objects by value for bidder ``a``.

    Returns (v1, j1, v2, j2).  ``hsizes`` holds the two heap sizes and is
    updated in place as stale entries are discarded.
    """
    v1 = -np.inf
    j1 = -1
    v2 = -np.inf
    j2 = -1
    # diagonal objects: separable cost, best two are the cheapest-priced
    p1, g1, p2, g2, ds = heap_top_two(dh_key, dh_idx, hsizes[0], zeros_base, prices)
    hsizes[0] = ds
    if b_isdiag[a]:
        if g1 >= 0:
            v1 = -p1
            j1 = g1
            if g2 >= 0:
                v2 = -p2
                j2 = g2
        # off-diagonal objects: deletion-cost heap
        k1, i1, k2, i2, es = heap_top_two(eh_key, eh_idx, hsizes[1], o_del, prices)
        hsizes[1] = es
        for t in range(2):
            key = k1 if t == 0 else k2
            idx = i1 if t == 0 else i2
            if idx < 0:
                continue
            val = -key
            if val > v1 or (val == v1 and idx < j1):
                v2 = v1
                j2 = j1
                v1 = val
                j1 = idx
            elif (val > v2 or (val == v2 and idx < j2)) and idx != j1:
                v2 = val
                j2 = idx
    else:
        if g1 >= 0:
            v1 = -b_del[a] - p1
            j1 = g1
            if g2 >= 0:
                v2 = -b_del[a] - p2
                j2 = g2
        v1, j1, v2, j2 = kd_best_two(
            bz[a], v1, j1, v2, j2, left, right, start, end, lo, hi, perm,
            minprice, prices, oz)
    return v1, j1, v2, j2


@njit(**_JIT)
def run_round(bz, b_del, b_isdiag, oz, o_del, o_isdiag, prices,
              assigned, owner, epsilon,
              left, right, start, end, lo, hi, perm, leaf_of, parent, minprice,
              dh_key, dh_idx, eh_key, eh_idx, hsizes,
              diag_ids, offdiag_ids, zeros_base):
    """One auction round: bid until every bidder owns an object.

    Prices, assignments and ownership are updated in place.  Returns the
    number of bids placed (-1 when there are fewer objects than bidders,
    which cannot happen for augmented diagrams).
    """
    nb = len(b_del)
    no = len(o_del)
    if nb > no:
        return -1
    # FIFO queue of unassigned bidders; never holds more than nb entries
    queue = np.empty(nb + 1, dtype=np.int64)
    qhead = 0
    qtail = 0
    for a in range(nb):
        if assigned[a] == -1:
            queue[qtail] = a
            qtail = (qtail + 1) % (nb + 1)
    bids = 0
    while qhead != qtail:
        a = queue[qhead]
        qhead = (qhead + 1) % (nb + 1)
        v1, j1, v2, j2 = best_two(
            a, bz, b_del, b_isdiag, oz, o_del, prices,
            left, right, start, end, lo, hi, perm, minprice,
            dh_key, dh_idx, eh_key, eh_idx, hsizes, zeros_base)
        if j1 < 0:
            return -1
        delta = (v1 - v2) if j2 >= 0 and v2 > -np.inf else 0.0
        prices[j1] += delta + epsilon
        if o_isdiag[j1]:
            if hsizes[0] >= len(dh_key):
                hsizes[0] = heap_rebuild(dh_key, dh_idx, diag_ids, zeros_base, prices)
            hsizes[0] = heap_push(dh_key, dh_idx, hsizes[0], prices[j1], j1)
        else:
            if hsizes[1] >= len(eh_key):
                hsizes[1] = heap_rebuild(eh_key, eh_idx, offdiag_ids, o_del, prices)
            hsizes[1] = heap_push(eh_key, eh_idx, hsizes[1],
                                  o_del[j1] + prices[j1], j1)
            kd_update_price(j1, leaf_of, parent, left, right, start, end,
                            perm, prices, minprice)
        prev = owner[j1]
        if prev >= 0:
            assigned[prev] = -1
            queue[qtail] = prev
            qtail = (qtail + 1) % (nb + 1)
        owner[j1] = a
        assigned[a] = j1
        bids += 1
    return bids
