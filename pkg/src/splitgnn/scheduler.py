"""Online splitting of a mini-batch sample into per-device local work.

Every sampled vertex is assigned at every layer to the device that owns it in
the offline partition map. Edges follow their source; a destination owned
elsewhere becomes a reference vertex on the source's device, and the shuffle
plan records, per layer and ordered device pair, exactly which vertex vectors
move during the paired push-to-owner / push-from-owner exchanges.

Local row numbering on a device is contiguous: owned rows first (in sample
order), then reference rows (sorted by global id), so membership is a range
check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from splitgnn.partition import CacheState, PartitionMap
from splitgnn.sampling import MiniBatchSample


@dataclass
class LocalSplit:
    """One device's non-overlapping share of a mini-batch sample."""

    device: int
    num_layers: int
    owned_gids: list  # per layer 0..L: global ids, in sample order
    owned_pos: list  # per layer 0..L: positions in V^(l)
    ref_gids: list  # per layer 0..L: reference vertex ids, sorted ascending
    ref_owner: list  # per layer 0..L: owner device of each reference vertex
    edges_src: list  # per layer 1..L (index l-1): row in owned rows at l-1
    edges_dst: list  # per layer 1..L (index l-1): row in owned+ref rows at l
    self_rows: list  # per layer 1..L (index l-1): row at l-1 of each owned-at-l
    load_gids: np.ndarray  # layer-0 owned vertices not cached on this device

    def num_owned(self, l: int) -> int:
        return len(self.owned_gids[l])

    def num_ref(self, l: int) -> int:
        return len(self.ref_gids[l])

    def edges(self, l: int):
        return self.edges_src[l - 1], self.edges_dst[l - 1]

    def num_edges(self, l: int) -> int:
        return len(self.edges_src[l - 1])

    @property
    def total_edges(self) -> int:
        return sum(len(e) for e in self.edges_src)

    def self_index(self, l: int) -> np.ndarray:
        return self.self_rows[l - 1]

    def edge_gids(self, l: int):
        """Edges of layer l as (src_gid, dst_gid); reference rows resolved."""
        src, dst = self.edges(l)
        n_own = self.num_owned(l)
        own_mask = dst < n_own
        dst_gid = np.empty(len(dst), dtype=np.int64)
        dst_gid[own_mask] = self.owned_gids[l][dst[own_mask]]
        dst_gid[~own_mask] = self.ref_gids[l][dst[~own_mask] - n_own]
        return self.owned_gids[l - 1][src], dst_gid


@dataclass
class PlanEntry:
    """Vertices a holder device exchanges with an owner device at one layer."""

    gids: np.ndarray  # sorted ascending
    holder_idx: np.ndarray  # rows into the holder's reference arrays
    owner_idx: np.ndarray  # rows into the owner's owned arrays

    @property
    def count(self) -> int:
        return len(self.gids)


@dataclass
class ShufflePlan:
    """Per-layer exchange descriptors between ordered device pairs.

    push_to_owner(l, s, d) lists the vertices whose partial data device s
    sends to owner d at layer l; push_from_owner(l, d, s) is the exact
    reversal (owner d broadcasts those vertices' data back to s).
    """

    num_layers: int
    num_devices: int
    entries: dict = field(default_factory=dict)

    def entry(self, l: int, holder: int, owner: int) -> PlanEntry | None:
        return self.entries.get((l, holder, owner))

    def push_to_owner(self, l: int, src_dev: int, dst_dev: int) -> np.ndarray:
        e = self.entry(l, src_dev, dst_dev)
        return e.gids if e is not None else np.empty(0, dtype=np.int64)

    def push_from_owner(self, l: int, src_dev: int, dst_dev: int) -> np.ndarray:
        return self.push_to_owner(l, dst_dev, src_dev)

    def holders_of(self, l: int, owner: int) -> list:
        """Devices holding references owned by ``owner`` at layer l, ascending."""
        return [
            s
            for s in range(self.num_devices)
            if s != owner and (l, s, owner) in self.entries
        ]

    def owners_for(self, l: int, holder: int) -> list:
        return [
            o
            for o in range(self.num_devices)
            if o != holder and (l, holder, o) in self.entries
        ]

    def pair_count(self, l: int) -> int:
        """Sum of per-pair vertex counts at layer l (one exchange round)."""
        return sum(e.count for (ll, _, _), e in self.entries.items() if ll == l)


@dataclass
class SplitCostReport:
    """Communication-cost view of one sample under a vertex assignment."""

    num_devices: int
    per_layer_cost: list  # per layer 1..L: C[v^l] array over V^(l)
    cost_per_layer: list
    cost_total: int
    edges_per_device_per_layer: list
    edges_per_device: np.ndarray
    edges_local_per_layer: list
    edges_total_per_layer: list
    skew_per_layer: list
    edge_skew: float
    local_edge_fraction: float

    @property
    def edges_total(self) -> int:
        return int(sum(self.edges_total_per_layer))

    @property
    def edges_local(self) -> int:
        return int(sum(self.edges_local_per_layer))


def _skew(counts: np.ndarray) -> float:
    mean = counts.mean() if len(counts) else 0.0
    if mean == 0:
        return 0.0
    return float((counts.max() - counts.min()) / mean)


def _group_by(keys: np.ndarray, g: int):
    """Stable grouping of indices by key; yields (key, index array) pairs."""
    order = np.argsort(keys, kind="stable")
    bounds = np.searchsorted(keys[order], np.arange(g + 1))
    return [(d, order[bounds[d] : bounds[d + 1]]) for d in range(g)]


def split_minibatch(
    sample: MiniBatchSample, pm: PartitionMap, cache: CacheState | None = None
):
    """Split a sample into g LocalSplits plus the matching ShufflePlan.

    Pure function of its inputs: the same (sample, pm, cache) always produces
    identical splits.
    """
    asn = pm.assignment
    g = pm.num_devices
    L = sample.num_layers
    for l in range(L + 1):
        ids = sample.vertices(l)
        if len(ids) and ids.max() >= len(asn):
            raise ValueError("sample vertex missing from partition map")

    dev = [asn[sample.vertices(l)] for l in range(L + 1)]
    owned_pos = [[None] * g for _ in range(L + 1)]
    local_of_pos = []
    n_owned = np.zeros((L + 1, g), dtype=np.int64)
    for l in range(L + 1):
        lop = np.empty(len(dev[l]), dtype=np.int64)
        for d, pos in _group_by(dev[l], g):
            owned_pos[l][d] = pos
            lop[pos] = np.arange(len(pos))
            n_owned[l, d] = len(pos)
        local_of_pos.append(lop)
    assert int(n_owned.sum()) == sum(len(v) for v in sample.layer_vertices)

    cache_mask = None
    if cache is not None:
        cache_mask = cache.global_mask(len(asn))

    per_dev = []
    for d in range(g):
        owned_g = [sample.vertices(l)[owned_pos[l][d]] for l in range(L + 1)]
        load = owned_g[0]
        if cache_mask is not None and len(load):
            load = load[~cache_mask[load]]
        per_dev.append(
            LocalSplit(
                device=d,
                num_layers=L,
                owned_gids=owned_g,
                owned_pos=[owned_pos[l][d] for l in range(L + 1)],
                ref_gids=[np.empty(0, dtype=np.int64) for _ in range(L + 1)],
                ref_owner=[np.empty(0, dtype=np.int64) for _ in range(L + 1)],
                edges_src=[None] * L,
                edges_dst=[None] * L,
                self_rows=[None] * L,
                load_gids=load,
            )
        )

    plan = ShufflePlan(num_layers=L, num_devices=g)
    for l in range(1, L + 1):
        src, dst = sample.edges(l)
        gids_l = sample.vertices(l)
        sdev = dev[l - 1][src]
        routed = 0
        for d, seg in _group_by(sdev, g):
            split = per_dev[d]
            e_src, e_dst = src[seg], dst[seg]
            routed += len(seg)
            is_ref = dev[l][e_dst] != d
            ref_pos = np.unique(e_dst[is_ref])
            ref_g = gids_l[ref_pos]
            gid_order = np.argsort(ref_g)
            ref_pos, ref_g = ref_pos[gid_order], ref_g[gid_order]
            ref_row_of_pos = np.full(len(gids_l), -1, dtype=np.int64)
            ref_row_of_pos[ref_pos] = np.arange(len(ref_pos))
            own_count = n_owned[l, d]
            dst_local = np.where(
                is_ref, own_count + ref_row_of_pos[e_dst], local_of_pos[l][e_dst]
            )
            split.ref_gids[l] = ref_g
            split.ref_owner[l] = asn[ref_g]
            split.edges_src[l - 1] = local_of_pos[l - 1][e_src]
            split.edges_dst[l - 1] = dst_local
            split.self_rows[l - 1] = local_of_pos[l - 1][split.owned_pos[l]]
            for o, ridx in _group_by(split.ref_owner[l], g):
                if len(ridx) == 0:
                    continue
                assert o != d, "a device cannot be its own peer"
                plan.entries[(l, d, o)] = PlanEntry(
                    gids=ref_g[ridx],
                    holder_idx=ridx,
                    owner_idx=local_of_pos[l][ref_pos[ridx]],
                )
        assert routed == len(src), "edge routing dropped or duplicated edges"
    return per_dev, plan


def split_cost(
    sample: MiniBatchSample, assignment, num_devices: int | None = None
) -> SplitCostReport:
    """Evaluate the per-vertex shuffle cost, edge skew, and edge locality of
    assigning the sample's vertices by ``assignment``.

    The cost of a destination vertex is the number of foreign devices holding
    at least one source of its incoming edges.
    """
    if isinstance(assignment, PartitionMap):
        if num_devices is None:
            num_devices = assignment.num_devices
        assignment = assignment.assignment
    asn = np.asarray(assignment, dtype=np.int64)
    g = num_devices if num_devices is not None else int(asn.max()) + 1

    per_layer_cost, cost_per_layer = [], []
    edges_pd_pl, edges_local_pl, edges_total_pl, skew_pl = [], [], [], []
    for l in range(1, sample.num_layers + 1):
        src, dst = sample.edges(l)
        sdev = asn[sample.vertices(l - 1)[src]]
        ddev = asn[sample.vertices(l)[dst]]
        counts = np.bincount(sdev, minlength=g)
        edges_pd_pl.append(counts)
        skew_pl.append(_skew(counts))
        local = int(np.count_nonzero(sdev == ddev))
        edges_local_pl.append(local)
        edges_total_pl.append(len(src))
        cross = sdev != ddev
        pair_keys = np.unique(dst[cross] * g + sdev[cross])
        cost = np.bincount(pair_keys // g, minlength=len(sample.vertices(l)))
        per_layer_cost.append(cost.astype(np.int64))
        cost_per_layer.append(int(cost.sum()))

    edges_per_device = (
        np.sum(edges_pd_pl, axis=0)
        if edges_pd_pl
        else np.zeros(g, dtype=np.int64)
    )
    total = int(sum(edges_total_pl))
    return SplitCostReport(
        num_devices=g,
        per_layer_cost=per_layer_cost,
        cost_per_layer=cost_per_layer,
        cost_total=int(sum(cost_per_layer)),
        edges_per_device_per_layer=edges_pd_pl,
        edges_per_device=edges_per_device,
        edges_local_per_layer=edges_local_pl,
        edges_total_per_layer=edges_total_pl,
        skew_per_layer=skew_pl,
        edge_skew=_skew(edges_per_device),
        local_edge_fraction=(sum(edges_local_pl) / total) if total else 1.0,
    )


@dataclass
class TransferManifest:
    """Feature bytes to move before training one split iteration."""

    host_bytes_per_device: np.ndarray
    peer_feature_bytes: np.ndarray  # g x g, zero by construction for layer 0

    @property
    def host_bytes_total(self) -> int:
        return int(self.host_bytes_per_device.sum())


def transfer_manifest(
    splits: list, cache: CacheState | None, feat_dim: int
) -> TransferManifest:
    """Host-load and device-transfer feature volumes for one iteration.

    Each uncached layer-0 vertex is loaded from host memory by exactly its
    owner device; cached vertices are processed in place, so layer-0 moves no
    feature vectors between devices.
    """
    g = len(splits)
    host = np.zeros(g, dtype=np.int64)
    all_loads = []
    for split in splits:
        host[split.device] = len(split.load_gids) * feat_dim * 8
        all_loads.append(split.load_gids)
    loads = np.concatenate(all_loads) if all_loads else np.empty(0, dtype=np.int64)
    assert len(np.unique(loads)) == len(loads), "a feature vector loaded twice"
    if cache is not None and len(loads):
        cached = np.concatenate(cache.cached) if cache.cached else loads[:0]
        assert not np.intersect1d(loads, cached).size, "splits predate this cache"
    return TransferManifest(
        host_bytes_per_device=host,
        peer_feature_bytes=np.zeros((g, g), dtype=np.int64),
    )


def validate_splits(sample: MiniBatchSample, splits: list, pm: PartitionMap):
    """Exhaustive zero-redundancy checks; used by tests after every split.

    Asserts that per layer the device edge lists partition E^(l) exactly and
    the owned lists partition V^(l) exactly, that owned and reference sets are
    disjoint, and that every reference vertex is owned by its recorded owner.
    """
    L = sample.num_layers
    for l in range(L + 1):
        gids = np.concatenate([s.owned_gids[l] for s in splits])
        assert len(gids) == len(sample.vertices(l))
        assert np.array_equal(np.sort(gids), np.sort(sample.vertices(l)))
        for s in splits:
            assert not np.intersect1d(s.owned_gids[l], s.ref_gids[l]).size
            if len(s.owned_gids[l]):
                assert np.all(pm.assignment[s.owned_gids[l]] == s.device)
            if len(s.ref_gids[l]):
                assert np.all(pm.assignment[s.ref_gids[l]] == s.ref_owner[l])
                assert np.all(s.ref_owner[l] != s.device)
    for l in range(1, L + 1):
        src, dst = sample.edges(l)
        want = np.stack(
            [sample.vertices(l - 1)[src], sample.vertices(l)[dst]], axis=1
        )
        got = [np.stack(s.edge_gids(l), axis=1) for s in splits if s.num_edges(l)]
        got = np.concatenate(got) if got else np.empty((0, 2), dtype=np.int64)
        assert got.shape == want.shape
        order_w = np.lexsort((want[:, 1], want[:, 0]))
        order_g = np.lexsort((got[:, 1], got[:, 0]))
        assert np.array_equal(want[order_w], got[order_g])
