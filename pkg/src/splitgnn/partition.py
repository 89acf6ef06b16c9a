"""Offline balanced min-cut partitioning and per-device feature caches.

The partitioner is multilevel: heavy-edge matching coarsens the symmetrized
graph, a greedy growing heuristic seeds the coarsest level, and greedy
boundary refinement runs at every level on the way back up. Moves are
accepted only when they strictly reduce the cut and keep the balance bound,
so refinement is monotone by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from splitgnn.graph import Graph, GraphError


@dataclass
class PartitionMap:
    """Vertex -> device assignment for the full input graph."""

    assignment: np.ndarray
    num_devices: int
    balance_eps: float = 0.05

    def __post_init__(self):
        self.assignment = np.ascontiguousarray(self.assignment, dtype=np.int64)
        self.validate()

    def validate(self):
        if self.num_devices < 1:
            raise ValueError("num_devices must be >= 1")
        if self.balance_eps < 0:
            raise ValueError("balance_eps must be >= 0")
        if len(self.assignment) and (
            self.assignment.min() < 0 or self.assignment.max() >= self.num_devices
        ):
            raise ValueError("device id out of range in assignment")
        cap = max_part_size(len(self.assignment), self.num_devices, self.balance_eps)
        counts = self.counts()
        if counts.max(initial=0) > cap:
            raise ValueError(
                f"partition violates balance: max part {counts.max()} > cap {cap}"
            )

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_devices)

    def device_vertices(self, d: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == d)


@dataclass
class CacheState:
    """Per-device cached vertex ids; disjoint because each device caches only
    vertices of its own partition."""

    cached: list
    capacity_fraction: float

    def __post_init__(self):
        self.cached = [np.ascontiguousarray(c, dtype=np.int64) for c in self.cached]

    @property
    def num_devices(self) -> int:
        return len(self.cached)

    def global_mask(self, n: int) -> np.ndarray:
        """Boolean mask over all vertices: cached on some device."""
        mask = np.zeros(n, dtype=bool)
        for ids in self.cached:
            mask[ids] = True
        return mask

    def device_masks(self, n: int) -> list:
        masks = []
        for ids in self.cached:
            m = np.zeros(n, dtype=bool)
            m[ids] = True
            masks.append(m)
        return masks

    def validate(self, pm: PartitionMap, n: int):
        cap = math.ceil(self.capacity_fraction * n - 1e-9)
        for d, ids in enumerate(self.cached):
            if len(ids) > cap:
                raise ValueError(f"device {d} caches {len(ids)} > capacity {cap}")
            if len(ids) and np.any(pm.assignment[ids] != d):
                raise ValueError(f"device {d} caches vertices outside its partition")


def max_part_size(n: int, g: int, eps: float) -> int:
    """Largest allowed per-device vertex count under the balance tolerance."""
    if n == 0:
        return 0
    # The 1e-7 guard keeps float slop in (1+eps)*n/g from loosening the bound.
    return max(math.ceil(n / g), math.ceil((1.0 + eps) * n / g - 1e-7))


# ---------------------------------------------------------------------------
# Symmetrized weighted adjacency (levels of the multilevel scheme)
# ---------------------------------------------------------------------------


def _aggregate_pairs(a, b, w, n):
    """Sum weights of duplicate (a, b) pairs; returns CSR over n vertices."""
    key = a * n + b
    order = np.argsort(key, kind="stable")
    key = key[order]
    w = w[order]
    uniq, start = np.unique(key, return_index=True)
    wsum = np.add.reduceat(w, start) if len(w) else np.empty(0, dtype=np.int64)
    ua = uniq // n
    ub = uniq % n
    counts = np.bincount(ua, minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, ub.astype(np.int64), wsum.astype(np.int64)


def _symmetrize(graph: Graph):
    """Undirected weighted adjacency: weight(u,v) = arcs(u->v) + arcs(v->u).

    With this weighting the undirected cut of any assignment equals the number
    of directed arcs crossing it. Self-loops are dropped (they never cross).
    """
    src, dst = graph.edge_arrays()
    keep = src != dst
    src, dst = src[keep], dst[keep]
    a = np.concatenate([src, dst])
    b = np.concatenate([dst, src])
    w = np.ones(len(a), dtype=np.int64)
    return _aggregate_pairs(a, b, w, graph.num_vertices)


def _cut_of(offsets, nbr, w, part) -> int:
    src = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
    cross = part[src] != part[nbr]
    return int(w[cross].sum()) // 2


def _heavy_edge_matching(offsets, nbr, w, vw, rng, weight_cap):
    """Match each vertex with its heaviest unmatched neighbor (ties: lowest id)."""
    n = len(vw)
    match = np.full(n, -1, dtype=np.int64)
    for v in rng.permutation(n):
        if match[v] >= 0:
            continue
        best, best_w = -1, 0
        for idx in range(offsets[v], offsets[v + 1]):
            u = int(nbr[idx])
            if match[u] >= 0 or u == v:
                continue
            if vw[v] + vw[u] > weight_cap:
                continue
            wt = int(w[idx])
            if wt > best_w or (wt == best_w and (best == -1 or u < best)):
                best, best_w = u, wt
        if best >= 0:
            match[v] = best
            match[best] = v
    cmap = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for v in range(n):
        if cmap[v] >= 0:
            continue
        cmap[v] = nxt
        u = match[v]
        if u >= 0:
            cmap[u] = nxt
        nxt += 1
    return cmap, nxt


def _contract(offsets, nbr, w, vw, cmap, n_coarse):
    src = np.repeat(np.arange(len(vw)), np.diff(offsets))
    ca, cb = cmap[src], cmap[nbr]
    keep = ca != cb
    coff, cnbr, cw = _aggregate_pairs(ca[keep], cb[keep], w[keep], n_coarse)
    cvw = np.bincount(cmap, weights=vw, minlength=n_coarse).astype(np.int64)
    return coff, cnbr, cw, cvw


def _greedy_grow(offsets, nbr, w, vw, g, cap, rng):
    """Grow g regions to roughly equal total vertex weight, preferring the
    frontier vertex with strongest connection to the region (ties: lowest id)."""
    n = len(vw)
    part = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(g, dtype=np.int64)
    total = int(vw.sum())
    seed_order = list(rng.permutation(n))
    for p in range(g):
        target = total // g + (1 if p < total % g else 0)
        frontier = {}
        while sizes[p] < target:
            pick = -1
            if frontier:
                pick = min(frontier, key=lambda v: (-frontier[v], v))
                if sizes[p] + vw[pick] > cap:
                    del frontier[pick]
                    continue
            else:
                while seed_order and part[seed_order[-1]] >= 0:
                    seed_order.pop()
                if not seed_order:
                    break
                pick = seed_order.pop()
                if sizes[p] + vw[pick] > cap:
                    continue
            part[pick] = p
            sizes[p] += vw[pick]
            frontier.pop(pick, None)
            for idx in range(offsets[pick], offsets[pick + 1]):
                u = int(nbr[idx])
                if part[u] < 0:
                    frontier[u] = frontier.get(u, 0) + int(w[idx])
    # Leftovers: strongest feasible attachment, else lightest part.
    for v in np.flatnonzero(part < 0):
        conn = np.zeros(g, dtype=np.int64)
        sl = slice(offsets[v], offsets[v + 1])
        hit = part[nbr[sl]]
        ok = hit >= 0
        np.add.at(conn, hit[ok], w[sl][ok])
        feasible = sizes + vw[v] <= cap
        if feasible.any():
            conn = np.where(feasible, conn, -1)
            part[v] = int(np.argmax(conn))
        else:
            part[v] = int(np.argmin(sizes))
        sizes[part[v]] += vw[v]
    return part


def _refine_level(offsets, nbr, w, vw, part, g, cap, max_passes=10):
    """Greedy boundary refinement; returns the cut after each pass.

    A move is applied only if it strictly reduces the cut and keeps every
    part within ``cap``. Vertices are visited in ascending id, and among
    equal-gain targets the lowest device id wins.
    """
    n = len(vw)
    src = np.repeat(np.arange(n), np.diff(offsets))
    sizes = np.bincount(part, weights=vw, minlength=g).astype(np.int64)
    cut = _cut_of(offsets, nbr, w, part)
    history = [cut]
    for _ in range(max_passes):
        boundary = np.unique(src[part[src] != part[nbr]])
        moved = False
        for v in boundary:
            sl = slice(offsets[v], offsets[v + 1])
            conn = np.zeros(g, dtype=np.int64)
            np.add.at(conn, part[nbr[sl]], w[sl])
            a = int(part[v])
            gains = conn - conn[a]
            gains[a] = 0
            infeasible = sizes + vw[v] > cap
            gains[infeasible] = 0
            p = int(np.argmax(gains))  # argmax takes the lowest index on ties
            if gains[p] > 0 and p != a:
                part[v] = p
                sizes[a] -= vw[v]
                sizes[p] += vw[v]
                cut -= int(gains[p])
                moved = True
        history.append(cut)
        if not moved:
            break
    return history


def refine_assignment(
    graph: Graph,
    assignment: np.ndarray,
    num_devices: int,
    balance_eps: float = 0.05,
    max_passes: int = 10,
):
    """Refine an existing assignment on the full graph.

    Returns (refined assignment, cut history per pass). The history is in
    directed-arc units and never increases.
    """
    offsets, nbr, w = _symmetrize(graph)
    part = np.array(assignment, dtype=np.int64, copy=True)
    vw = np.ones(graph.num_vertices, dtype=np.int64)
    cap = max_part_size(graph.num_vertices, num_devices, balance_eps)
    history = _refine_level(offsets, nbr, w, vw, part, num_devices, cap, max_passes)
    return part, history


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def partition_graph(
    graph: Graph, g: int, balance_eps: float = 0.05, seed: int = 0
) -> PartitionMap:
    """Balanced k-way partition of the input graph with a small edge cut.

    Multilevel heuristic: coarsen by heavy-edge matching until at most
    max(20*g, 200) vertices remain, seed the coarsest level by greedy region
    growing (best of a few restarts), then uncoarsen with boundary refinement
    at every level. Deterministic given ``seed``.
    """
    n = graph.num_vertices
    if g < 1:
        raise ValueError("g must be >= 1")
    if g > n:
        raise ValueError(f"g={g} exceeds num_vertices={n}")
    if balance_eps < 0:
        raise ValueError("balance_eps must be >= 0")
    if g == 1:
        return PartitionMap(np.zeros(n, dtype=np.int64), 1, balance_eps)

    rng = np.random.default_rng(seed)
    cap = max_part_size(n, g, balance_eps)
    level = _symmetrize(graph)
    vw = np.ones(n, dtype=np.int64)
    levels = [(level[0], level[1], level[2], vw)]
    cmaps = []
    coarse_target = max(20 * g, 200)
    # Cap merged vertex weight so the coarsest level stays partitionable.
    weight_cap = max(2, n // (2 * g))
    while len(levels[-1][3]) > coarse_target:
        offsets, nbr, w, vw = levels[-1]
        cmap, n_coarse = _heavy_edge_matching(offsets, nbr, w, vw, rng, weight_cap)
        if n_coarse > 0.95 * len(vw):
            break  # matching stalled; coarser levels would not help
        levels.append(_contract(offsets, nbr, w, vw, cmap, n_coarse))
        cmaps.append(cmap)

    offsets, nbr, w, vw = levels[-1]
    best_part, best_cut = None, None
    for _ in range(4):
        part = _greedy_grow(offsets, nbr, w, vw, g, cap, rng)
        _refine_level(offsets, nbr, w, vw, part, g, cap)
        cut = _cut_of(offsets, nbr, w, part)
        if best_cut is None or cut < best_cut:
            best_part, best_cut = part, cut
    part = best_part

    for lvl in range(len(cmaps) - 1, -1, -1):
        part = part[cmaps[lvl]]
        offsets, nbr, w, vw = levels[lvl]
        _refine_level(offsets, nbr, w, vw, part, g, cap)
    return PartitionMap(part, g, balance_eps)


def cut_size(graph: Graph, pm: PartitionMap) -> int:
    """Number of directed edges whose endpoints live on different devices."""
    src, dst = graph.edge_arrays()
    return int(np.count_nonzero(pm.assignment[src] != pm.assignment[dst]))


def build_cache(
    graph: Graph, pm: PartitionMap, capacity_fraction: float
) -> CacheState:
    """Cache the highest-degree vertices of each partition on its device.

    Degree is in-degree + out-degree; ties prefer the lower vertex id. Each
    device holds at most ceil(capacity_fraction * n) vertices.
    """
    if not (0.0 <= capacity_fraction <= 1.0):
        raise ValueError("capacity_fraction must be in [0, 1]")
    n = graph.num_vertices
    cap = math.ceil(capacity_fraction * n - 1e-9)
    degree = graph.in_degrees() + graph.out_degrees()
    cached = []
    for d in range(pm.num_devices):
        ids = pm.device_vertices(d)
        order = np.lexsort((ids, -degree[ids]))  # by degree desc, then id asc
        chosen = ids[order][:cap]
        cached.append(np.sort(chosen))
    return CacheState(cached, capacity_fraction)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_partition(pm: PartitionMap, path):
    """One device id per line; the line number is the vertex id."""
    with open(path, "w") as fh:
        for d in pm.assignment:
            fh.write(f"{int(d)}\n")


def load_partition(path, num_devices: int | None = None, balance_eps: float = 0.05):
    with open(path, "r") as fh:
        assignment = np.array(
            [int(line.strip()) for line in fh if line.strip()], dtype=np.int64
        )
    g = num_devices if num_devices is not None else int(assignment.max()) + 1
    return PartitionMap(assignment, g, balance_eps)


def save_cache(cache: CacheState, path):
    with open(path, "w") as fh:
        fh.write(f"capacity_fraction {cache.capacity_fraction!r}\n")
        for d, ids in enumerate(cache.cached):
            fh.write(f"device {d}\n")
            for v in ids:
                fh.write(f"{int(v)}\n")


def load_cache(path) -> CacheState:
    cached = []
    fraction = None
    current = None
    with open(path, "r") as fh:
        for line in fh:
            text = line.strip()
            if not text:
                continue
            if text.startswith("capacity_fraction"):
                fraction = float(text.split()[1])
            elif text.startswith("device"):
                current = []
                cached.append(current)
            else:
                if current is None:
                    raise GraphError(f"{path}: vertex id before any device section")
                current.append(int(text))
    if fraction is None:
        raise GraphError(f"{path}: missing capacity_fraction header")
    return CacheState([np.array(c, dtype=np.int64) for c in cached], fraction)
