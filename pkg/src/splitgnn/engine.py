"""Cooperative forward/backward execution over simulated devices.

The g devices are worker contexts driven through barrier-separated phases.
A phase runs one callable per device, either sequentially in device order or
on a thread pool; both schedules produce identical results because a phase
only writes its own device's state and exchanges read peer buffers that were
finalized before the preceding barrier.

Exchanges follow the shuffle plan: push-to-owner moves partial per-vertex
data from reference-holding devices to the owner, push-from-owner broadcasts
owner data back. Every forward exchange that carries values has a mirrored
backward exchange in the opposite direction carrying gradients. All exchanged
doubles are metered as peer traffic.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from splitgnn.graph import Graph
from splitgnn.metrics import (
    EpochMetrics,
    IterationMetrics,
    account_transfer,
    union_edge_count,
)
from splitgnn.models import (
    ModelParams,
    classifier_loss,
    init_params,
    run_reference,
    segment_count,
    segment_max,
    segment_sum,
)
from splitgnn.partition import CacheState, PartitionMap
from splitgnn.sampling import (
    MiniBatchSample,
    epoch_batches,
    sample_microbatches,
    sample_minibatch,
)
from splitgnn.scheduler import split_cost, split_minibatch, transfer_manifest

# When True, every layer output is scanned for NaN/Inf.
DEBUG_CHECK_FINITE = False


def _check_finite(arr: np.ndarray, what: str):
    if DEBUG_CHECK_FINITE and arr.size and not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {what}")


class PhaseRunner:
    """Runs per-device phases; the end of each phase is a barrier."""

    def __init__(self, num_devices: int, workers: int = 1):
        self.num_devices = num_devices
        self.workers = max(1, int(workers))
        self._pool = (
            ThreadPoolExecutor(max_workers=min(self.workers, num_devices))
            if self.workers > 1
            else None
        )

    def each(self, fn):
        if self._pool is None:
            for d in range(self.num_devices):
                fn(d)
        else:
            list(self._pool.map(fn, range(self.num_devices)))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


@dataclass
class DeviceState:
    """Everything one simulated device holds during an iteration."""

    split: object
    h: list = field(default_factory=list)  # per layer: owned rows
    layer: list = field(default_factory=list)  # per layer: retained tensors
    grads: dict | None = None
    loss_sum: float = 0.0
    d_h: np.ndarray | None = None  # backward carrier over owned rows
    scratch: dict = field(default_factory=dict)


class SplitExecutor:
    """One cooperative forward/backward pass over prepared local splits."""

    def __init__(
        self,
        params: ModelParams,
        splits: list,
        plan,
        features: np.ndarray,
        labels: np.ndarray,
        runner: PhaseRunner,
        record: IterationMetrics | None = None,
    ):
        self.params = params
        self.splits = splits
        self.plan = plan
        self.features = features
        self.labels = labels
        self.runner = runner
        self.record = record
        self.g = len(splits)
        self.L = params.num_layers
        self.states = [DeviceState(split=s) for s in splits]

    # -- exchange primitives -------------------------------------------------

    def _meter(self, l: int, width: int):
        if self.record is not None:
            account_transfer(self.record, "peer", self.plan.pair_count(l) * width * 8)

    def _to_owner(self, l: int, send_fn, recv_fn, width: int):
        """Holders push ref-aligned rows; the owner combines them in ascending
        sender order."""
        self._meter(l, width)

        def phase(d):
            st = self.states[d]
            for s in range(self.g):
                if s == d:
                    continue
                entry = self.plan.entry(l, s, d)
                if entry is None:
                    continue
                recv_fn(st, entry.owner_idx, send_fn(self.states[s], entry.holder_idx))

        self.runner.each(phase)

    def _from_owner(self, l: int, send_fn, recv_fn, width: int):
        """Holders pull owner rows for their reference vertices."""
        self._meter(l, width)

        def phase(d):
            st = self.states[d]
            for o in range(self.g):
                if o == d:
                    continue
                entry = self.plan.entry(l, d, o)
                if entry is None:
                    continue
                recv_fn(st, entry.holder_idx, send_fn(self.states[o], entry.owner_idx))

        self.runner.each(phase)

    # -- shared plumbing ------------------------------------------------------

    def _load_inputs(self):
        def phase(d):
            st = self.states[d]
            st.h = [self.features[st.split.owned_gids[0]]]
            st.layer = [None]
            st.grads = self.params.zero_grads()

        self.runner.each(phase)

    def _dims(self, l: int):
        layer = self.params.layers[l - 1]
        w = layer.w_self if self.params.kind == "graphsage" else layer.w
        return w.shape[0], w.shape[1]

    # -- GraphSage ------------------------------------------------------------

    def _sage_forward(self, l: int, final: bool):
        layer = self.params.layers[l - 1]
        d_in, _ = self._dims(l)

        def local_aggregate(d):
            st = self.states[d]
            sp = st.split
            src, dst = sp.edges(l)
            rows = sp.num_owned(l) + sp.num_ref(l)
            sums = segment_sum(st.h[l - 1][src], dst, rows)
            counts = segment_count(dst, rows)
            n_own = sp.num_owned(l)
            st.scratch = {
                "sums_own": sums[:n_own],
                "sums_ref": sums[n_own:],
                "counts_own": counts[:n_own],
                "counts_ref": counts[n_own:],
            }

        self.runner.each(local_aggregate)

        def send(st, holder_idx):
            return np.concatenate(
                [
                    st.scratch["sums_ref"][holder_idx],
                    st.scratch["counts_ref"][holder_idx, None],
                ],
                axis=1,
            )

        def recv(st, owner_idx, rows):
            st.scratch["sums_own"][owner_idx] += rows[:, :d_in]
            st.scratch["counts_own"][owner_idx] += rows[:, d_in]

        self._to_owner(l, send, recv, d_in + 1)

        def update(d):
            st = self.states[d]
            sp = st.split
            # Every owned row has at least its self-edge, so counts >= 1.
            counts = st.scratch["counts_own"]
            mean = st.scratch["sums_own"] / counts[:, None]
            h_self = st.h[l - 1][sp.self_index(l)]
            pre = h_self @ layer.w_self + mean @ layer.w_neigh + layer.bias
            h_l = pre if final else np.maximum(pre, 0.0)
            _check_finite(h_l, f"graphsage layer {l} output (device {d})")
            st.h.append(h_l)
            st.layer.append({"mean": mean, "counts": counts, "pre": pre})
            st.scratch = {}

        self.runner.each(update)

    def _sage_backward(self, l: int, final: bool):
        layer = self.params.layers[l - 1]
        d_in, _ = self._dims(l)
        i = l - 1

        def local_grads(d):
            st = self.states[d]
            sp = st.split
            data = st.layer[l]
            d_pre = st.d_h if final else st.d_h * (data["pre"] > 0)
            h_self = st.h[l - 1][sp.self_index(l)]
            st.grads[f"layer{i}.w_self"] += h_self.T @ d_pre
            st.grads[f"layer{i}.w_neigh"] += data["mean"].T @ d_pre
            st.grads[f"layer{i}.bias"] += d_pre.sum(axis=0)
            d_prev = np.zeros_like(st.h[l - 1])
            d_prev[sp.self_index(l)] += d_pre @ layer.w_self.T
            d_sums = (d_pre @ layer.w_neigh.T) / data["counts"][:, None]
            st.scratch = {
                "d_prev": d_prev,
                "d_sums_own": d_sums,
                "d_sums_ref": np.zeros((sp.num_ref(l), d_in)),
            }

        self.runner.each(local_grads)

        # Mirror of the forward push-to-owner: owners return the gradient of
        # each transported partial sum (counts carry no gradient).
        def send_dsums(st, owner_idx):
            return st.scratch["d_sums_own"][owner_idx]

        def recv_dsums(st, holder_idx, rows):
            st.scratch["d_sums_ref"][holder_idx] = rows

        self._from_owner(l, send_dsums, recv_dsums, d_in)

        def scatter_back(d):
            st = self.states[d]
            sp = st.split
            src, dst = sp.edges(l)
            d_sums_all = np.concatenate(
                [st.scratch["d_sums_own"], st.scratch["d_sums_ref"]], axis=0
            )
            st.scratch["d_prev"] += segment_sum(
                d_sums_all[dst], src, len(st.h[l - 1])
            )
            st.d_h = st.scratch["d_prev"]
            st.scratch = {}

        self.runner.each(scatter_back)

    # -- GAT -------------------------------------------------------------------

    def _gat_forward(self, l: int, final: bool):
        layer = self.params.layers[l - 1]
        slope = self.params.leaky_slope

        def project(d):
            st = self.states[d]
            sp = st.split
            z = st.h[l - 1] @ layer.w
            st.scratch = {
                "z": z,
                "s": z @ layer.a_src,
                "t_own": z[sp.self_index(l)] @ layer.a_dst,
                "t_ref": np.zeros(sp.num_ref(l)),
            }

        self.runner.each(project)

        def send_t(st, oi):
            return st.scratch["t_own"][oi]

        def recv_t(st, hi, rows):
            st.scratch["t_ref"][hi] = rows

        self._from_owner(l, send_t, recv_t, 1)

        def coefficients(d):
            st = self.states[d]
            sp = st.split
            src, dst = sp.edges(l)
            rows = sp.num_owned(l) + sp.num_ref(l)
            t_all = np.concatenate([st.scratch["t_own"], st.scratch["t_ref"]])
            pre_e = st.scratch["s"][src] + t_all[dst]
            e = np.where(pre_e > 0, pre_e, slope * pre_e)
            lm = segment_max(e, dst, rows)
            n_own = sp.num_owned(l)
            st.scratch.update(
                {
                    "t_all": t_all,
                    "pre_e": pre_e,
                    "e": e,
                    "m_own": lm[:n_own].copy(),
                    "m_ref_local": lm[n_own:],
                    "m_ref": np.zeros(sp.num_ref(l)),
                }
            )

        self.runner.each(coefficients)

        # Stabilizer max: combine at the owner, then broadcast back.
        def send_local_max(st, hi):
            return st.scratch["m_ref_local"][hi]

        def combine_max(st, oi, rows):
            st.scratch["m_own"][oi] = np.maximum(st.scratch["m_own"][oi], rows)

        def send_max(st, oi):
            return st.scratch["m_own"][oi]

        def recv_max(st, hi, rows):
            st.scratch["m_ref"][hi] = rows

        self._to_owner(l, send_local_max, combine_max, 1)
        self._from_owner(l, send_max, recv_max, 1)

        def local_denominator(d):
            st = self.states[d]
            sp = st.split
            src, dst = sp.edges(l)
            rows = sp.num_owned(l) + sp.num_ref(l)
            n_own = sp.num_owned(l)
            m_all = np.concatenate([st.scratch["m_own"], st.scratch["m_ref"]])
            w_e = np.exp(st.scratch["e"] - m_all[dst])
            ld = segment_sum(w_e, dst, rows)
            st.scratch.update(
                {
                    "w_e": w_e,
                    "denom_own": ld[:n_own].copy(),
                    "denom_ref_local": ld[n_own:],
                    "denom_ref": np.zeros(sp.num_ref(l)),
                }
            )

        self.runner.each(local_denominator)

        def send_local_denom(st, hi):
            return st.scratch["denom_ref_local"][hi]

        def combine_denom(st, oi, rows):
            st.scratch["denom_own"][oi] += rows

        def send_denom(st, oi):
            return st.scratch["denom_own"][oi]

        def recv_denom(st, hi, rows):
            st.scratch["denom_ref"][hi] = rows

        self._to_owner(l, send_local_denom, combine_denom, 1)
        self._from_owner(l, send_denom, recv_denom, 1)

        def local_numerator(d):
            st = self.states[d]
            sp = st.split
            src, dst = sp.edges(l)
            rows = sp.num_owned(l) + sp.num_ref(l)
            n_own = sp.num_owned(l)
            denom_all = np.concatenate(
                [st.scratch["denom_own"], st.scratch["denom_ref"]]
            )
            alpha = st.scratch["w_e"] / denom_all[dst]
            ln = segment_sum(
                alpha[:, None] * st.scratch["z"][src], dst, rows
            )
            st.scratch.update(
                {
                    "denom_all": denom_all,
                    "alpha": alpha,
                    "num_own": ln[:n_own].copy(),
                    "num_ref_local": ln[n_own:],
                }
            )

        self.runner.each(local_numerator)

        _, d_out = self._dims(l)

        def send_partial_num(st, hi):
            return st.scratch["num_ref_local"][hi]

        def combine_num(st, oi, rows):
            st.scratch["num_own"][oi] += rows

        self._to_owner(l, send_partial_num, combine_num, d_out)

        def update(d):
            st = self.states[d]
            sc = st.scratch
            num = sc["num_own"]
            h_l = num if final else np.maximum(num, 0.0)
            _check_finite(h_l, f"gat layer {l} output (device {d})")
            st.h.append(h_l)
            st.layer.append(
                {
                    "z": sc["z"],
                    "pre_e": sc["pre_e"],
                    "w_e": sc["w_e"],
                    "denom_all": sc["denom_all"],
                    "alpha": sc["alpha"],
                    "num": num,
                }
            )
            st.scratch = {}

        self.runner.each(update)

    def _gat_backward(self, l: int, final: bool):
        layer = self.params.layers[l - 1]
        slope = self.params.leaky_slope
        _, d_out = self._dims(l)
        i = l - 1

        def seed(d):
            st = self.states[d]
            sp = st.split
            data = st.layer[l]
            d_num = st.d_h if final else st.d_h * (data["num"] > 0)
            st.scratch = {
                "d_num_own": d_num,
                "d_num_ref": np.zeros((sp.num_ref(l), d_out)),
            }

        self.runner.each(seed)

        # Mirror of the numerator push-to-owner.
        def send_dnum(st, oi):
            return st.scratch["d_num_own"][oi]

        def recv_dnum(st, hi, rows):
            st.scratch["d_num_ref"][hi] = rows

        self._from_owner(l, send_dnum, recv_dnum, d_out)

        def alpha_grads(d):
            st = self.states[d]
            sp = st.split
            src, dst = sp.edges(l)
            data = st.layer[l]
            n_own = sp.num_owned(l)
            rows = n_own + sp.num_ref(l)
            d_num_all = np.concatenate(
                [st.scratch["d_num_own"], st.scratch["d_num_ref"]], axis=0
            )
            z, alpha, w_e = data["z"], data["alpha"], data["w_e"]
            denom_e = data["denom_all"][dst]
            d_alpha = (d_num_all[dst] * z[src]).sum(axis=1)
            d_z = segment_sum(alpha[:, None] * d_num_all[dst], src, len(z))
            pdd = segment_sum(-d_alpha * w_e / denom_e**2, dst, rows)
            st.scratch.update(
                {
                    "d_w_direct": d_alpha / denom_e,
                    "d_z": d_z,
                    "dd_own": pdd[:n_own].copy(),
                    "dd_ref_local": pdd[n_own:],
                    "dd_ref": np.zeros(sp.num_ref(l)),
                }
            )

        self.runner.each(alpha_grads)

        # Mirror of the denominator broadcast (sum partials at the owner),
        # then mirror of the denominator push-to-owner (broadcast the total).
        def send_local_dd(st, hi):
            return st.scratch["dd_ref_local"][hi]

        def combine_dd(st, oi, rows):
            st.scratch["dd_own"][oi] += rows

        def send_dd(st, oi):
            return st.scratch["dd_own"][oi]

        def recv_dd(st, hi, rows):
            st.scratch["dd_ref"][hi] = rows

        self._to_owner(l, send_local_dd, combine_dd, 1)
        self._from_owner(l, send_dd, recv_dd, 1)

        def coefficient_grads(d):
            st = self.states[d]
            sp = st.split
            src, dst = sp.edges(l)
            data = st.layer[l]
            n_own = sp.num_owned(l)
            rows = n_own + sp.num_ref(l)
            dd_all = np.concatenate([st.scratch["dd_own"], st.scratch["dd_ref"]])
            d_w_e = st.scratch["d_w_direct"] + dd_all[dst]
            d_e = d_w_e * data["w_e"]
            d_pre = d_e * np.where(data["pre_e"] > 0, 1.0, slope)
            ds = segment_sum(d_pre, src, len(data["z"]))
            pdt = segment_sum(d_pre, dst, rows)
            st.scratch.update(
                {
                    "ds": ds,
                    "dt_own": pdt[:n_own].copy(),
                    "dt_ref_local": pdt[n_own:],
                }
            )

        self.runner.each(coefficient_grads)

        # Mirror of the destination-score broadcast.
        def send_local_dt(st, hi):
            return st.scratch["dt_ref_local"][hi]

        def combine_dt(st, oi, rows):
            st.scratch["dt_own"][oi] += rows

        self._to_owner(l, send_local_dt, combine_dt, 1)

        def param_grads(d):
            st = self.states[d]
            sp = st.split
            data = st.layer[l]
            z, ds, dt = data["z"], st.scratch["ds"], st.scratch["dt_own"]
            d_z = st.scratch["d_z"]
            d_z += ds[:, None] * layer.a_src
            st.grads[f"layer{i}.a_src"] += z.T @ ds
            self_idx = sp.self_index(l)
            d_z[self_idx] += dt[:, None] * layer.a_dst
            st.grads[f"layer{i}.a_dst"] += z[self_idx].T @ dt
            st.grads[f"layer{i}.w"] += st.h[l - 1].T @ d_z
            st.d_h = d_z @ layer.w.T
            st.scratch = {}

        self.runner.each(param_grads)

    # -- driver -----------------------------------------------------------------

    def forward(self):
        self._load_inputs()
        for l in range(1, self.L + 1):
            final = l == self.L
            if self.params.kind == "graphsage":
                self._sage_forward(l, final)
            else:
                self._gat_forward(l, final)

    def backward(self):
        def seed_loss(d):
            st = self.states[d]
            y = self.labels[st.split.owned_gids[self.L]]
            loss, d_h, d_w, d_b = classifier_loss(self.params, st.h[self.L], y)
            st.loss_sum = loss
            st.d_h = d_h
            st.grads["cls.w"] += d_w
            st.grads["cls.b"] += d_b

        self.runner.each(seed_loss)
        for l in range(self.L, 0, -1):
            final = l == self.L
            if self.params.kind == "graphsage":
                self._sage_backward(l, final)
            else:
                self._gat_backward(l, final)

    def run(self):
        """Returns (loss summed over all targets, per-device gradient dicts)."""
        self.forward()
        self.backward()
        loss = sum(st.loss_sum for st in self.states)
        return loss, [st.grads for st in self.states]


def scatter_shuffle_forward(
    splits: list,
    plan,
    l: int,
    owned_rows: list,
    runner: PhaseRunner | None = None,
    record: IterationMetrics | None = None,
) -> list:
    """Fill every device's reference-vertex buffer at layer l from the owner.

    ``owned_rows[d]`` are device d's current vectors over its owned vertices
    at layer l. Returns per-device arrays aligned with the reference lists.
    The exchange is one barrier round; transported doubles are metered as
    peer traffic.
    """
    g = len(splits)
    width = 0
    for rows in owned_rows:
        if rows.ndim == 2:
            width = rows.shape[1]
            break
    buffers = [np.zeros((s.num_ref(l), width)) for s in splits]
    if record is not None:
        account_transfer(record, "peer", plan.pair_count(l) * width * 8)

    def phase(d):
        for o in range(g):
            if o == d:
                continue
            entry = plan.entry(l, d, o)
            if entry is None:
                continue
            buffers[d][entry.holder_idx] = owned_rows[o][entry.owner_idx]

    if runner is None:
        for d in range(g):
            phase(d)
    else:
        runner.each(phase)
    return buffers


def allreduce_and_step(
    params: ModelParams, per_device_grads: list, lr: float, num_targets: int
) -> dict:
    """Sum gradients across devices in device order, normalize by the
    mini-batch target count, and apply one SGD step to the shared replica.

    Devices hold disjoint targets of one mini-batch, so the sum is the
    mini-batch gradient. Returns the summed gradients.
    """
    total = {k: v.copy() for k, v in per_device_grads[0].items()}
    for grads in per_device_grads[1:]:
        for k in total:
            total[k] += grads[k]
    params.sgd_step(total, lr, num_targets)
    return total


# ---------------------------------------------------------------------------
# Trainer: the four-step iteration and the three execution modes
# ---------------------------------------------------------------------------


class Trainer:
    """Drives sample -> schedule -> transfer -> cooperative train iterations."""

    def __init__(
        self,
        graph: Graph,
        pm: PartitionMap,
        cache: CacheState | None,
        labels: np.ndarray,
    ):
        if graph.features is None:
            raise ValueError("graph has no features attached")
        self.graph = graph
        self.pm = pm
        self.cache = cache
        self.labels = np.asarray(labels, dtype=np.int64)
        self.num_devices = pm.num_devices
        n = graph.num_vertices
        if cache is not None:
            self.cache_masks = cache.device_masks(n)
        else:
            self.cache_masks = [np.zeros(n, dtype=bool) for _ in range(pm.num_devices)]

    # -- one iteration per mode -------------------------------------------------

    def single_step(self, sample: MiniBatchSample, params: ModelParams):
        loss, grads = run_reference(sample, params, self.graph.features, self.labels)
        return loss, grads

    def split_step(
        self,
        sample: MiniBatchSample,
        params: ModelParams,
        runner: PhaseRunner,
        record: IterationMetrics | None = None,
    ):
        splits, plan = split_minibatch(sample, self.pm, self.cache)
        manifest = transfer_manifest(splits, self.cache, self.graph.feat_dim)
        if record is not None:
            account_transfer(record, "host", manifest.host_bytes_total)
        executor = SplitExecutor(
            params, splits, plan, self.graph.features, self.labels, runner, record
        )
        loss, per_device_grads = executor.run()
        return loss, per_device_grads, splits, plan

    def data_parallel_step(
        self,
        micro_samples: list,
        params: ModelParams,
        runner: PhaseRunner,
        record: IterationMetrics | None = None,
    ):
        g = self.num_devices
        if record is not None:
            for d in range(g):
                v0 = micro_samples[d].vertices(0)
                missed = int(np.count_nonzero(~self.cache_masks[d][v0]))
                account_transfer(
                    record, "host", missed * self.graph.feat_dim * 8
                )
        slots = [None] * g

        def phase(d):
            slots[d] = run_reference(
                micro_samples[d], params, self.graph.features, self.labels
            )

        runner.each(phase)
        loss = sum(s[0] for s in slots)
        return loss, [s[1] for s in slots]

    # -- epoch driver -------------------------------------------------------------

    def run_epoch(
        self,
        mode: str,
        params: ModelParams,
        *,
        seed: int,
        epoch: int,
        fanouts,
        batch_size: int,
        lr: float,
        workers: int = 1,
        train_set=None,
    ) -> EpochMetrics:
        """One pass over the shuffled training set; mutates ``params``.

        The sampling stream depends only on (seed, epoch, iteration), never on
        the mode, so single and split runs see identical mini-batches.
        """
        if mode not in ("single", "split", "data_parallel"):
            raise ValueError(f"unknown mode {mode!r}")
        g = self.num_devices
        if train_set is None:
            train_set = np.arange(self.graph.num_vertices, dtype=np.int64)
        ss = np.random.SeedSequence([seed, epoch])
        shuffle_rng = np.random.default_rng(ss.spawn(1)[0])
        batches = epoch_batches(train_set, batch_size, shuffle_rng)
        runner = PhaseRunner(g, workers)
        metrics = EpochMetrics(epoch=epoch, mode=mode, num_devices=g)
        try:
            for it, targets in enumerate(batches):
                batch_rng = np.random.default_rng(ss.spawn(1)[0])
                rec = IterationMetrics(iteration=it, mode=mode, num_devices=g)
                t0 = time.perf_counter()
                if mode == "data_parallel":
                    micros = sample_microbatches(
                        self.graph, targets, g, fanouts, batch_rng
                    )
                else:
                    sample = sample_minibatch(self.graph, targets, fanouts, batch_rng)
                t1 = time.perf_counter()
                rec.sample_ms = (t1 - t0) * 1e3

                if mode == "single":
                    rec.host_bytes = (
                        len(sample.vertices(0)) * self.graph.feat_dim * 8
                    )
                    t2 = time.perf_counter()
                    loss_sum, grads = self.single_step(sample, params)
                    params.sgd_step(grads, lr, len(targets))
                    rec.edges_per_device[0] = sample.total_edges
                    rec.local_edge_fraction = 1.0
                elif mode == "split":
                    splits, plan = split_minibatch(sample, self.pm, self.cache)
                    manifest = transfer_manifest(
                        splits, self.cache, self.graph.feat_dim
                    )
                    t2 = time.perf_counter()
                    rec.split_ms = (t2 - t1) * 1e3
                    account_transfer(rec, "host", manifest.host_bytes_total)
                    executor = SplitExecutor(
                        params,
                        splits,
                        plan,
                        self.graph.features,
                        self.labels,
                        runner,
                        rec,
                    )
                    loss_sum, per_dev = executor.run()
                    allreduce_and_step(params, per_dev, lr, len(targets))
                    for s in splits:
                        rec.edges_per_device[s.device] = s.total_edges
                    report = split_cost(sample, self.pm, g)
                    rec.edge_skew = report.edge_skew
                    rec.local_edge_fraction = report.local_edge_fraction
                else:  # data_parallel
                    t2 = time.perf_counter()
                    loss_sum, per_dev = self.data_parallel_step(
                        micros, params, runner, rec
                    )
                    allreduce_and_step(params, per_dev, lr, len(targets))
                    for d in range(g):
                        rec.edges_per_device[d] = micros[d].total_edges
                    total = int(sum(m.total_edges for m in micros))
                    rec.redundant_edges = total - union_edge_count(micros)
                    counts = rec.edges_per_device.astype(np.float64)
                    mean = counts.mean()
                    rec.edge_skew = (
                        float((counts.max() - counts.min()) / mean) if mean else 0.0
                    )
                    rec.local_edge_fraction = 1.0
                t3 = time.perf_counter()
                rec.train_ms = (t3 - t2) * 1e3
                rec.loss = loss_sum / len(targets)
                metrics.iterations.append(rec)
        finally:
            runner.close()
        return metrics


def train_model(
    graph: Graph,
    pm: PartitionMap,
    cache: CacheState | None,
    labels: np.ndarray,
    *,
    model_kind: str,
    num_layers: int,
    hidden: int,
    fanouts,
    batch_size: int,
    lr: float,
    epochs: int,
    seed: int,
    mode: str,
    workers: int = 1,
    train_set=None,
    num_classes: int | None = None,
):
    """End-to-end training; returns (per-epoch metrics, final params)."""
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 1
    params = init_params(
        model_kind, graph.feat_dim, hidden, num_classes, num_layers, seed=seed
    )
    trainer = Trainer(graph, pm, cache, labels)
    records = []
    for epoch in range(epochs):
        records.append(
            trainer.run_epoch(
                mode,
                params,
                seed=seed,
                epoch=epoch,
                fanouts=fanouts,
                batch_size=batch_size,
                lr=lr,
                workers=workers,
                train_set=train_set,
            )
        )
    return records, params
