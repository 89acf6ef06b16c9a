"""k-hop neighbor sampling: turns target vertices into layered mini-batches.

A sample has vertex lists V^(0..L) and edge lists E^(1..L); edges at layer l
connect positions in V^(l-1) to positions in V^(l). Every vertex of V^(l) is
re-listed at the same position in V^(l-1) and connected to itself by a
self-edge, so V^(l) is always a positional prefix of V^(l-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splitgnn.graph import Graph


@dataclass
class MiniBatchSample:
    """Layered bipartite blocks for one iteration's target vertices.

    layer_vertices[l] holds the global ids of V^(l) for l in 0..L;
    layer_edges[l-1] holds (src_pos, dst_pos) arrays for E^(l), l in 1..L.
    """

    num_layers: int
    layer_vertices: list
    layer_edges: list

    @property
    def targets(self) -> np.ndarray:
        return self.layer_vertices[self.num_layers]

    def vertices(self, l: int) -> np.ndarray:
        return self.layer_vertices[l]

    def edges(self, l: int):
        """(src_pos, dst_pos) arrays of E^(l), 1 <= l <= L."""
        return self.layer_edges[l - 1]

    def num_edges(self, l: int) -> int:
        return len(self.layer_edges[l - 1][0])

    @property
    def total_edges(self) -> int:
        return sum(len(src) for src, _ in self.layer_edges)

    def parent_positions(self, l: int) -> np.ndarray:
        """Position in V^(l-1) of each V^(l) vertex (the prefix embedding)."""
        return np.arange(len(self.layer_vertices[l]), dtype=np.int64)

    def edge_gid_triples(self) -> np.ndarray:
        """All edges as (layer, src_gid, dst_gid) rows; used for set unions."""
        rows = []
        for l in range(1, self.num_layers + 1):
            src, dst = self.edges(l)
            rows.append(
                np.column_stack(
                    [
                        np.full(len(src), l, dtype=np.int64),
                        self.layer_vertices[l - 1][src],
                        self.layer_vertices[l][dst],
                    ]
                )
            )
        return np.concatenate(rows) if rows else np.empty((0, 3), dtype=np.int64)

    def validate(self, num_vertices: int | None = None):
        L = self.num_layers
        assert len(self.layer_vertices) == L + 1
        assert len(self.layer_edges) == L
        for l in range(L + 1):
            ids = self.layer_vertices[l]
            assert len(np.unique(ids)) == len(ids), "duplicate vertex in a layer"
            if num_vertices is not None and len(ids):
                assert ids.min() >= 0 and ids.max() < num_vertices
        for l in range(1, L + 1):
            lo, hi = self.layer_vertices[l - 1], self.layer_vertices[l]
            assert np.array_equal(lo[: len(hi)], hi), "V^(l) must prefix V^(l-1)"
            src, dst = self.edges(l)
            assert len(src) == len(dst)
            if len(src):
                assert src.min() >= 0 and src.max() < len(lo)
                assert dst.min() >= 0 and dst.max() < len(hi)
            key = src * len(hi) + dst
            assert len(np.unique(key)) == len(key), "duplicate edge in a layer"
            diag = np.arange(len(hi), dtype=np.int64) * len(hi) + np.arange(
                len(hi), dtype=np.int64
            )
            assert np.isin(diag, key).all(), "missing self-edge"

    def to_text(self) -> str:
        lines = []
        for l in range(self.num_layers + 1):
            ids = " ".join(str(int(v)) for v in self.layer_vertices[l])
            lines.append(f"layer {l} vertices: {ids}")
        for l in range(1, self.num_layers + 1):
            lines.append(f"layer {l} edges (src_pos dst_pos):")
            src, dst = self.edges(l)
            for s, d in zip(src, dst):
                lines.append(f"{int(s)} {int(d)}")
        return "\n".join(lines) + "\n"


def _sample_without_replacement(pool: np.ndarray, k: int, rng) -> np.ndarray:
    """First k entries of a partial Fisher-Yates shuffle of ``pool``."""
    arr = pool.copy()
    m = len(arr)
    if k >= m:
        return arr
    js = rng.integers(np.arange(k), m)  # one draw per selected slot
    for i in range(k):
        j = js[i]
        arr[i], arr[j] = arr[j], arr[i]
    return arr[:k]


def sample_minibatch(
    graph: Graph, targets, fanouts, rng: np.random.Generator
) -> MiniBatchSample:
    """Sample the k-hop in-neighborhood of ``targets``.

    ``fanouts[l-1]`` caps the number of distinct in-neighbors drawn per vertex
    when expanding layer l into layer l-1 (uniform, without replacement).
    Deterministic given the generator state.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("targets must be non-empty")
    if len(np.unique(targets)) != len(targets):
        raise ValueError("targets must be distinct")
    if targets.min() < 0 or targets.max() >= graph.num_vertices:
        raise ValueError("target id out of range")
    fanouts = list(fanouts)
    if not fanouts:
        raise ValueError("fanouts must be non-empty")
    L = len(fanouts)
    layer_vertices = [None] * (L + 1)
    layer_edges = [None] * L
    layer_vertices[L] = targets.copy()
    ro, ci = graph.row_offsets, graph.col_indices
    for l in range(L, 0, -1):
        cur = layer_vertices[l]
        fanout = int(fanouts[l - 1])
        index = {int(v): i for i, v in enumerate(cur)}
        order = [int(v) for v in cur]
        src_list, dst_list = [], []
        for i in range(len(cur)):
            v = order[i]
            src_list.append(i)  # self-edge: v sits at position i below as well
            dst_list.append(i)
            s, e = int(ro[v]), int(ro[v + 1])
            k = min(fanout, e - s)
            if k <= 0:
                continue
            picks = _sample_without_replacement(ci[s:e], k, rng)
            seen = {v}
            for u in picks:
                u = int(u)
                if u in seen:  # parallel edge or the input's own self-loop
                    continue
                seen.add(u)
                j = index.get(u)
                if j is None:
                    j = len(order)
                    index[u] = j
                    order.append(u)
                src_list.append(j)
                dst_list.append(i)
        layer_vertices[l - 1] = np.array(order, dtype=np.int64)
        layer_edges[l - 1] = (
            np.array(src_list, dtype=np.int64),
            np.array(dst_list, dtype=np.int64),
        )
    sample = MiniBatchSample(L, layer_vertices, layer_edges)
    sample.validate(graph.num_vertices)
    return sample


def sample_microbatches(
    graph: Graph, targets, g: int, fanouts, rng: np.random.Generator
) -> list:
    """Round-robin split of ``targets`` into g independently sampled batches."""
    targets = np.asarray(targets, dtype=np.int64)
    if g < 1:
        raise ValueError("g must be >= 1")
    if g == 1:
        return [sample_minibatch(graph, targets, fanouts, rng)]
    groups = [targets[i::g] for i in range(g)]
    if any(len(gr) == 0 for gr in groups):
        raise ValueError(f"cannot split {len(targets)} targets into {g} micro-batches")
    children = rng.spawn(g)
    return [
        sample_minibatch(graph, gr, fanouts, child)
        for gr, child in zip(groups, children)
    ]


def epoch_batches(train_set, batch_size: int, rng: np.random.Generator) -> list:
    """Shuffle the training vertices and chunk them into batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = rng.permutation(np.asarray(train_set, dtype=np.int64))
    return [perm[i : i + batch_size] for i in range(0, len(perm), batch_size)]
