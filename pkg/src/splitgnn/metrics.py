"""Transfer-volume, redundancy, and timing accounting across training modes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TIMING_COLUMNS = ("sample_ms", "split_ms", "train_ms")


@dataclass
class IterationMetrics:
    """Counters for one training iteration; wall-clock fields are the only
    non-deterministic ones."""

    iteration: int
    mode: str
    num_devices: int
    host_bytes: int = 0
    peer_bytes: int = 0
    edges_per_device: np.ndarray = None
    redundant_edges: int = 0
    edge_skew: float = 0.0
    local_edge_fraction: float = 1.0
    sample_ms: float = 0.0
    split_ms: float = 0.0
    train_ms: float = 0.0
    loss: float = 0.0

    def __post_init__(self):
        if self.edges_per_device is None:
            self.edges_per_device = np.zeros(self.num_devices, dtype=np.int64)

    @property
    def edges_total(self) -> int:
        return int(self.edges_per_device.sum())


def account_transfer(record: IterationMetrics, kind: str, nbytes: int):
    """Add transferred bytes to the iteration's host or peer counter."""
    if nbytes < 0:
        raise ValueError("negative byte count")
    if kind == "host":
        record.host_bytes += int(nbytes)
    elif kind == "peer":
        record.peer_bytes += int(nbytes)
    else:
        raise ValueError(f"unknown transfer kind {kind!r}")


@dataclass
class EpochMetrics:
    epoch: int
    mode: str
    num_devices: int
    iterations: list = field(default_factory=list)

    def summary(self) -> dict:
        """Epoch totals: sums for counters, means for ratios/times/loss."""
        n = len(self.iterations)
        out = {
            "host_bytes": sum(r.host_bytes for r in self.iterations),
            "peer_bytes": sum(r.peer_bytes for r in self.iterations),
            "edges_total": sum(r.edges_total for r in self.iterations),
            "redundant_edges": sum(r.redundant_edges for r in self.iterations),
        }
        for name in ("edge_skew", "local_edge_fraction", "loss") + tuple(
            TIMING_COLUMNS
        ):
            vals = [getattr(r, name) for r in self.iterations]
            out[name] = float(np.mean(vals)) if n else 0.0
        return out


def redundancy_report(micro_samples: list, mini_sample) -> dict:
    """Edge-count overhead of overlapping micro-batches vs one mini-batch."""
    micro_total = sum(s.total_edges for s in micro_samples)
    mini = mini_sample.total_edges
    return {
        "micro_total_edges": int(micro_total),
        "mini_edges": int(mini),
        "redundancy_pct": 100.0 * (micro_total - mini) / mini if mini else 0.0,
    }


def union_edge_count(samples: list) -> int:
    """Number of distinct (layer, src, dst) edges across samples."""
    triples = np.concatenate([s.edge_gid_triples() for s in samples])
    if not len(triples):
        return 0
    return len(np.unique(triples, axis=0))


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def csv_header(num_devices: int) -> list:
    cols = ["iter", "mode", "host_bytes", "peer_bytes", "edges_total"]
    cols += [f"edges_dev{d}" for d in range(num_devices)]
    cols += [
        "redundant_edges",
        "skew",
        "local_frac",
        "sample_ms",
        "split_ms",
        "train_ms",
        "loss",
    ]
    return cols


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)  # shortest round-trip representation
    return str(v)


def emit_csv(records: list, path, num_devices: int | None = None):
    """One row per iteration plus one summary row per epoch.

    Columns are fixed by the header; counters are integers, ratios and times
    floats formatted to round-trip exactly.
    """
    if num_devices is None:
        if not records:
            raise ValueError("num_devices required when records are empty")
        num_devices = records[0].num_devices
    for rec in records:
        if rec.num_devices != num_devices:
            raise ValueError("records disagree on device count")
    header = csv_header(num_devices)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for rec in records:
            for it in rec.iterations:
                row = [
                    it.iteration,
                    it.mode,
                    it.host_bytes,
                    it.peer_bytes,
                    it.edges_total,
                    *[int(e) for e in it.edges_per_device],
                    it.redundant_edges,
                    it.edge_skew,
                    it.local_edge_fraction,
                    it.sample_ms,
                    it.split_ms,
                    it.train_ms,
                    it.loss,
                ]
                fh.write(",".join(_fmt(v) for v in row) + "\n")
            s = rec.summary()
            row = [
                f"epoch{rec.epoch}",
                rec.mode,
                s["host_bytes"],
                s["peer_bytes"],
                s["edges_total"],
                *[0] * num_devices,
                s["redundant_edges"],
                s["edge_skew"],
                s["local_edge_fraction"],
                s["sample_ms"],
                s["split_ms"],
                s["train_ms"],
                s["loss"],
            ]
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path):
    """Parse an emitted CSV back into (header, rows of typed values)."""
    with open(path, "r") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    header = lines[0].split(",")
    int_cols = {
        c
        for c in header
        if c in ("host_bytes", "peer_bytes", "edges_total", "redundant_edges")
        or c.startswith("edges_dev")
    }
    float_cols = {"skew", "local_frac", "sample_ms", "split_ms", "train_ms", "loss"}
    rows = []
    for line in lines[1:]:
        vals = line.split(",")
        row = {}
        for col, val in zip(header, vals):
            if col in int_cols:
                row[col] = int(val)
            elif col in float_cols:
                row[col] = float(val)
            else:
                row[col] = val
        rows.append(row)
    return header, rows
