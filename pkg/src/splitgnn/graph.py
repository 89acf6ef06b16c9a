"""CSR graph container, synthetic graph generation, and on-disk formats.

Graphs are stored destination-major: ``col_indices`` holds the in-neighbors
(edge sources) of each vertex, because sampling and aggregation both iterate
over the in-neighborhood of destinations. All feature math is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

BINARY_MAGIC = b"SPLG"
BINARY_VERSION = 1


class GraphError(ValueError):
    """Malformed graph file or inconsistent graph data."""


@dataclass(frozen=True)
class Graph:
    """Immutable directed graph in incoming-edge CSR form.

    ``col_indices[row_offsets[v]:row_offsets[v+1]]`` are the sources of the
    edges entering ``v``. ``features`` is an optional dense
    ``num_vertices x feat_dim`` float64 matrix; it must be attached before
    training.
    """

    num_vertices: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        indices = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", indices)
        if self.features is not None:
            feats = np.ascontiguousarray(self.features, dtype=np.float64)
            object.__setattr__(self, "features", feats)
        self.validate()
        # Shared read-only across workers; hard-freeze the buffers.
        self.row_offsets.flags.writeable = False
        self.col_indices.flags.writeable = False
        if self.features is not None:
            self.features.flags.writeable = False

    def validate(self):
        n = self.num_vertices
        if n < 0:
            raise GraphError("negative vertex count")
        if self.row_offsets.shape != (n + 1,):
            raise GraphError(f"row_offsets must have length {n + 1}")
        if self.row_offsets[0] != 0:
            raise GraphError("row_offsets must start at 0")
        if np.any(np.diff(self.row_offsets) < 0):
            raise GraphError("row_offsets must be non-decreasing")
        if self.row_offsets[n] != len(self.col_indices):
            raise GraphError("row_offsets[-1] must equal the edge count")
        if len(self.col_indices) and (
            self.col_indices.min() < 0 or self.col_indices.max() >= n
        ):
            raise GraphError("col_indices entry out of range")
        if self.features is not None and self.features.shape[0] != n:
            raise GraphError(
                f"feature rows ({self.features.shape[0]}) != num_vertices ({n})"
            )

    @property
    def num_edges(self) -> int:
        return int(len(self.col_indices))

    @property
    def feat_dim(self) -> int:
        return 0 if self.features is None else int(self.features.shape[1])

    def in_neighbors(self, v: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[v] : self.row_offsets[v + 1]]

    def in_degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.col_indices, minlength=self.num_vertices).astype(
            np.int64
        )

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """All edges as (sources, destinations) arrays in CSR order."""
        dst = np.repeat(np.arange(self.num_vertices), np.diff(self.row_offsets))
        return self.col_indices.copy(), dst

    def with_features(self, features: np.ndarray) -> "Graph":
        """New Graph sharing this topology with ``features`` attached."""
        return Graph(self.num_vertices, self.row_offsets, self.col_indices, features)


def from_edges(
    num_vertices: int,
    src: np.ndarray,
    dst: np.ndarray,
    features: np.ndarray | None = None,
) -> Graph:
    """Build an in-CSR graph from parallel edge arrays (edge i is src->dst).

    Edges keep their input order within each destination slice (stable sort),
    so construction is deterministic. Duplicate edges are kept as parallel
    edges.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if len(src) != len(dst):
        raise GraphError("src and dst length mismatch")
    if len(src) and (
        src.min() < 0 or dst.min() < 0
        or src.max() >= num_vertices or dst.max() >= num_vertices
    ):
        raise GraphError("vertex id out of range")
    order = np.argsort(dst, kind="stable")
    counts = np.bincount(dst, minlength=num_vertices)
    offsets = np.zeros(num_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return Graph(num_vertices, offsets, src[order], features)


# ---------------------------------------------------------------------------
# Synthetic graphs
# ---------------------------------------------------------------------------


def generate_planted_partition(
    n: int,
    k_communities: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    seed: int,
) -> Graph:
    """Directed planted-partition graph with uniform random features.

    Vertices are grouped into ``k_communities`` contiguous-id blocks of equal
    size. Each ordered pair (u, v), u != v, becomes an edge independently with
    probability ``p_in`` inside a block and ``p_out`` across blocks. Pure
    function of the arguments including ``seed``.
    """
    if n % k_communities:
        raise GraphError("n must be divisible by k_communities")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise GraphError("need 0 <= p_out <= p_in <= 1")
    rng = np.random.default_rng(seed)
    comm = community_labels(n, k_communities)
    src_parts, dst_parts = [], []
    for u in range(n):
        p_row = np.where(comm == comm[u], p_in, p_out)
        p_row[u] = 0.0  # no self-loops
        hits = np.flatnonzero(rng.random(n) < p_row)
        src_parts.append(np.full(len(hits), u, dtype=np.int64))
        dst_parts.append(hits.astype(np.int64))
    src = np.concatenate(src_parts) if src_parts else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.empty(0, dtype=np.int64)
    features = rng.random((n, feat_dim))
    return from_edges(n, src, dst, features)


def community_labels(n: int, k_communities: int) -> np.ndarray:
    """Community id of each vertex for the contiguous-block layout."""
    return np.arange(n, dtype=np.int64) // (n // k_communities)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def load_graph(
    path,
    fmt: str = "edge-list-text",
    features_path=None,
    num_vertices: int | None = None,
) -> Graph:
    """Load a graph from disk.

    ``fmt`` is ``edge-list-text`` (one ``u v`` pair per line, ``#`` comments)
    or ``binary-csr``. For edge lists the vertex count is inferred as
    max id + 1 unless ``num_vertices`` is given (ids must be dense in [0, n)).
    """
    if fmt == "edge-list-text":
        graph = _load_edge_list(path, num_vertices)
    elif fmt == "binary-csr":
        graph = load_binary_csr(path)
    else:
        raise GraphError(f"unknown graph format: {fmt!r}")
    if features_path is not None:
        graph = graph.with_features(load_features_text(features_path, graph.num_vertices))
    return graph


def _load_edge_list(path, num_vertices=None) -> Graph:
    src, dst = [], []
    max_id = -1
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise GraphError(f"{path}:{lineno}: expected 'u v', got {line.strip()!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphError(
                    f"{path}:{lineno}: non-integer vertex id in {line.strip()!r}"
                ) from None
            if u < 0 or v < 0:
                raise GraphError(f"{path}:{lineno}: negative vertex id")
            src.append(u)
            dst.append(v)
            max_id = max(max_id, u, v)
    n = max_id + 1 if num_vertices is None else num_vertices
    if max_id >= n:
        raise GraphError(f"vertex id {max_id} out of range for n={n}")
    return from_edges(n, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))


def save_edge_list(graph: Graph, path):
    src, dst = graph.edge_arrays()
    with open(path, "w") as fh:
        for u, v in zip(src, dst):
            fh.write(f"{u} {v}\n")


def save_binary_csr(graph: Graph, path):
    """Binary CSR dump: magic, version, n, m, feat_dim, then the raw arrays.

    All integers little-endian fixed width (u32 version, u64 sizes, i64
    arrays); features are IEEE-754 doubles. feat_dim 0 means no feature block.
    """
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<I", BINARY_VERSION))
        fh.write(
            struct.pack(
                "<QQQ", graph.num_vertices, graph.num_edges, graph.feat_dim
            )
        )
        fh.write(graph.row_offsets.astype("<i8").tobytes())
        fh.write(graph.col_indices.astype("<i8").tobytes())
        if graph.features is not None:
            fh.write(graph.features.astype("<f8").tobytes())


def load_binary_csr(path) -> Graph:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BINARY_MAGIC:
            raise GraphError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != BINARY_VERSION:
            raise GraphError(f"{path}: unsupported version {version}")
        n, m, feat_dim = struct.unpack("<QQQ", fh.read(24))
        offsets = np.frombuffer(fh.read(8 * (n + 1)), dtype="<i8").astype(np.int64)
        indices = np.frombuffer(fh.read(8 * m), dtype="<i8").astype(np.int64)
        features = None
        if feat_dim:
            features = np.frombuffer(fh.read(8 * n * feat_dim), dtype="<f8")
            features = features.astype(np.float64).reshape(n, feat_dim)
    return Graph(int(n), offsets, indices, features)


def load_features_text(path, num_vertices: int) -> np.ndarray:
    """One row per vertex, whitespace-separated reals."""
    rows = []
    width = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                row = [float(x) for x in text.split()]
            except ValueError:
                raise GraphError(f"{path}:{lineno}: non-numeric feature value") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise GraphError(f"{path}:{lineno}: expected {width} values")
            rows.append(row)
    if len(rows) != num_vertices:
        raise GraphError(
            f"{path}: feature row count {len(rows)} != num_vertices {num_vertices}"
        )
    return np.array(rows, dtype=np.float64)


def save_features_text(features: np.ndarray, path):
    np.savetxt(path, features, fmt="%.17g")


def save_labels(labels: np.ndarray, path):
    with open(path, "w") as fh:
        for y in labels:
            fh.write(f"{int(y)}\n")


def load_labels(path) -> np.ndarray:
    with open(path, "r") as fh:
        return np.array([int(line.strip()) for line in fh if line.strip()], dtype=np.int64)
