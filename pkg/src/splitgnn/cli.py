"""Command-line entry point: generate, partition, sample, train, bench.

All outputs land under ``--out DIR`` with fixed names: graph.bin, labels.txt,
partition.txt, cache.txt, sample.txt, metrics.csv, checkpoint.bin,
bench_summary.csv, bench_summary.txt. Exit codes: 0 success, 1 runtime
error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from splitgnn.config import ConfigError, build_config, parse_config_file
from splitgnn.engine import train_model
from splitgnn.graph import (
    GraphError,
    community_labels,
    generate_planted_partition,
    load_binary_csr,
    load_graph,
    load_labels,
    save_binary_csr,
    save_labels,
)
from splitgnn.metrics import emit_csv
from splitgnn.models import init_params, save_checkpoint
from splitgnn.partition import (
    build_cache,
    cut_size,
    load_partition,
    partition_graph,
    save_cache,
    save_partition,
)
from splitgnn.sampling import epoch_batches, sample_minibatch
from splitgnn.scheduler import split_cost


def _load_any_graph(path, features=None):
    """Sniff binary CSR by magic; fall back to edge-list text."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    fmt = "binary-csr" if magic == b"SPLG" else "edge-list-text"
    return load_graph(path, fmt, features_path=features)


def _ensure_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_generate(args) -> int:
    graph = generate_planted_partition(
        args.n, args.communities, args.p_in, args.p_out, args.feat_dim, args.seed
    )
    labels = community_labels(args.n, args.communities)
    out = _ensure_out(args.out)
    graph_path = os.path.join(out, "graph.bin")
    labels_path = os.path.join(out, "labels.txt")
    save_binary_csr(graph, graph_path)
    save_labels(labels, labels_path)
    print(
        f"generated n={graph.num_vertices} m={graph.num_edges} "
        f"feat_dim={graph.feat_dim} -> {graph_path}, {labels_path}"
    )
    return 0


def cmd_partition(args) -> int:
    if args.balance_eps < 0:
        raise ConfigError("balance_eps must be >= 0")
    if not (0.0 <= args.cache_fraction <= 1.0):
        raise ConfigError("cache_fraction must be in [0, 1]")
    graph = _load_any_graph(args.graph)
    pm = partition_graph(graph, args.devices, args.balance_eps, args.seed)
    cache = build_cache(graph, pm, args.cache_fraction)
    out = _ensure_out(args.out)
    save_partition(pm, os.path.join(out, "partition.txt"))
    save_cache(cache, os.path.join(out, "cache.txt"))
    cut = cut_size(graph, pm)
    frac = cut / graph.num_edges if graph.num_edges else 0.0
    print(f"devices {args.devices} cut {cut} edges {graph.num_edges} fraction {frac:.4f}")
    print(f"partition sizes {pm.counts().tolist()}")
    return 0


def cmd_sample(args) -> int:
    graph = _load_any_graph(args.graph)
    fanouts = [int(x) for x in args.fanouts.split(",") if x.strip()]
    rng = np.random.default_rng(args.seed)
    if args.targets:
        targets = np.array([int(x) for x in args.targets.split(",")], dtype=np.int64)
    else:
        batches = epoch_batches(
            np.arange(graph.num_vertices, dtype=np.int64), args.batch_size, rng
        )
        targets = batches[0]
    sample = sample_minibatch(graph, targets, fanouts, rng)
    text = sample.to_text()
    if args.out:
        out = _ensure_out(args.out)
        path = os.path.join(out, "sample.txt")
        with open(path, "w") as fh:
            fh.write(text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_split_stats(args) -> int:
    graph = _load_any_graph(args.graph)
    fanouts = [int(x) for x in args.fanouts.split(",") if x.strip()]
    if args.partition:
        pm = load_partition(args.partition, args.devices, args.balance_eps)
    else:
        pm = partition_graph(graph, args.devices, args.balance_eps, args.seed)
    rng = np.random.default_rng(args.seed)
    batches = epoch_batches(
        np.arange(graph.num_vertices, dtype=np.int64), args.batch_size, rng
    )[: args.batches]
    lines = ["batch_id,layer,edges_local,edges_cross,skew,local_fraction,cost_total"]
    for batch_id, targets in enumerate(batches):
        sample = sample_minibatch(graph, targets, fanouts, rng)
        report = split_cost(sample, pm)
        for l in range(1, sample.num_layers + 1):
            local = report.edges_local_per_layer[l - 1]
            total = report.edges_total_per_layer[l - 1]
            frac = local / total if total else 1.0
            lines.append(
                f"{batch_id},{l},{local},{total - local},"
                f"{report.skew_per_layer[l - 1]!r},{frac!r},"
                f"{report.cost_per_layer[l - 1]}"
            )
        lines.append(
            f"{batch_id},all,{report.edges_local},"
            f"{report.edges_total - report.edges_local},{report.edge_skew!r},"
            f"{report.local_edge_fraction!r},{report.cost_total}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        out = _ensure_out(args.out)
        path = os.path.join(out, "split_stats.csv")
        with open(path, "w") as fh:
            fh.write(text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return 0


def _config_from_args(args) -> "RunConfig":
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {
        key: getattr(args, key, None)
        for key in (
            "graph",
            "features",
            "labels",
            "partition",
            "train_set",
            "out",
            "model",
            "mode",
            "layers",
            "hidden",
            "fanouts",
            "batch_size",
            "lr",
            "epochs",
            "cache_fraction",
            "devices",
            "seed",
            "workers",
            "balance_eps",
        )
    }
    return build_config(file_values, overrides)


def _prepare_run(cfg):
    graph = _load_any_graph(cfg.graph, features=cfg.features)
    if graph.features is None:
        raise ConfigError("graph has no features; pass features=PATH")
    if cfg.labels is None:
        raise ConfigError("labels=PATH is required for training")
    labels = load_labels(cfg.labels)
    if len(labels) != graph.num_vertices:
        raise ConfigError("label count does not match the graph")
    if cfg.partition:
        pm = load_partition(cfg.partition, cfg.devices, cfg.balance_eps)
        if len(pm.assignment) != graph.num_vertices:
            raise ConfigError("partition map does not match the graph")
    else:
        pm = partition_graph(graph, cfg.devices, cfg.balance_eps, cfg.seed)
    cache = build_cache(graph, pm, cfg.cache_fraction)
    train_set = None
    if cfg.train_set:
        with open(cfg.train_set) as fh:
            train_set = np.array(
                [int(line.strip()) for line in fh if line.strip()], dtype=np.int64
            )
    return graph, pm, cache, labels, train_set


def _run_training(cfg, mode, graph, pm, cache, labels, train_set):
    return train_model(
        graph,
        pm,
        cache,
        labels,
        model_kind=cfg.model,
        num_layers=cfg.layers,
        hidden=cfg.hidden,
        fanouts=list(cfg.fanouts),
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        epochs=cfg.epochs,
        seed=cfg.seed,
        mode=mode,
        workers=cfg.workers,
        train_set=train_set,
    )


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    graph, pm, cache, labels, train_set = _prepare_run(cfg)
    records, params = _run_training(cfg, cfg.mode, graph, pm, cache, labels, train_set)
    out = _ensure_out(cfg.out)
    metrics_path = os.path.join(out, "metrics.csv")
    ckpt_path = os.path.join(out, "checkpoint.bin")
    emit_csv(records, metrics_path, num_devices=cfg.devices)
    save_checkpoint(params, ckpt_path)
    for rec in records:
        s = rec.summary()
        print(
            f"epoch {rec.epoch} mode {rec.mode} loss {s['loss']:.6f} "
            f"host_bytes {s['host_bytes']} peer_bytes {s['peer_bytes']} "
            f"edges {s['edges_total']}"
        )
    print(f"wrote {metrics_path} and {ckpt_path}")
    return 0


BENCH_COLUMNS = [
    "mode",
    "cache_fraction",
    "host_mb",
    "peer_mb",
    "edges_total",
    "redundant_edges",
    "redundancy_pct",
    "skew",
    "local_frac",
    "sample_ms",
    "split_ms",
    "train_ms",
    "split_sample_ratio",
]


def _bench_row(mode, fraction, records):
    iters = [it for rec in records for it in rec.iterations]
    host = sum(it.host_bytes for it in iters)
    peer = sum(it.peer_bytes for it in iters)
    edges = sum(it.edges_total for it in iters)
    redundant = sum(it.redundant_edges for it in iters)
    unique = edges - redundant
    sample_ms = float(np.mean([it.sample_ms for it in iters])) if iters else 0.0
    split_ms = float(np.mean([it.split_ms for it in iters])) if iters else 0.0
    train_ms = float(np.mean([it.train_ms for it in iters])) if iters else 0.0
    return {
        "mode": mode,
        "cache_fraction": fraction,
        "host_mb": host / 1e6,
        "peer_mb": peer / 1e6,
        "edges_total": edges,
        "redundant_edges": redundant,
        "redundancy_pct": 100.0 * redundant / unique if unique else 0.0,
        "skew": float(np.mean([it.edge_skew for it in iters])) if iters else 0.0,
        "local_frac": (
            float(np.mean([it.local_edge_fraction for it in iters])) if iters else 0.0
        ),
        "sample_ms": sample_ms,
        "split_ms": split_ms,
        "train_ms": train_ms,
        "split_sample_ratio": split_ms / sample_ms if sample_ms else 0.0,
    }


def cmd_bench(args) -> int:
    cfg = _config_from_args(args)
    graph, pm, cache, labels, train_set = _prepare_run(cfg)
    sweep = [float(x) for x in args.cache_sweep.split(",") if x.strip()]
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    rows = []
    for mode in modes:
        if mode not in ("single", "split", "data_parallel"):
            raise ConfigError(f"unknown bench mode {mode!r}")
        records, _ = _run_training(cfg, mode, graph, pm, cache, labels, train_set)
        rows.append(_bench_row(mode, cfg.cache_fraction, records))
    for fraction in sweep:
        swept = build_cache(graph, pm, fraction)
        records, _ = _run_training(cfg, "split", graph, pm, swept, labels, train_set)
        rows.append(_bench_row("split", fraction, records))

    out = _ensure_out(cfg.out)
    csv_path = os.path.join(out, "bench_summary.csv")
    with open(csv_path, "w") as fh:
        fh.write(",".join(BENCH_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_bench_cell(row[c]) for c in BENCH_COLUMNS) + "\n")
    text_path = os.path.join(out, "bench_summary.txt")
    with open(text_path, "w") as fh:
        fh.write(_bench_text(rows))
    print(_bench_text(rows))
    print(f"wrote {csv_path} and {text_path}")
    return 0


def _bench_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _bench_text(rows) -> str:
    widths = {c: len(c) for c in BENCH_COLUMNS}
    rendered = []
    for row in rows:
        cells = {}
        for c in BENCH_COLUMNS:
            v = row[c]
            cells[c] = f"{v:.4f}" if isinstance(v, float) else str(v)
            widths[c] = max(widths[c], len(cells[c]))
        rendered.append(cells)
    lines = ["  ".join(c.rjust(widths[c]) for c in BENCH_COLUMNS)]
    for cells in rendered:
        lines.append("  ".join(cells[c].rjust(widths[c]) for c in BENCH_COLUMNS))
    lines.append(
        "note: *_ms columns and split_sample_ratio are simulation-relative "
        "wall-clock measurements; volume columns are exact."
    )
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitgnn",
        description="Split-parallel mini-batch GNN training on simulated devices.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a planted-partition graph")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--communities", type=int, required=True)
    p.add_argument("--p-in", type=float, default=0.02)
    p.add_argument("--p-out", type=float, default=0.001)
    p.add_argument("--feat-dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("partition", help="offline min-cut partition + cache sets")
    p.add_argument("--graph", required=True)
    p.add_argument("--devices", type=int, required=True)
    p.add_argument("--balance-eps", type=float, default=0.05, dest="balance_eps")
    p.add_argument("--cache-fraction", type=float, default=0.25, dest="cache_fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("sample", help="dump one mini-batch sample as text")
    p.add_argument("--graph", required=True)
    p.add_argument("--fanouts", default="5,5")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--targets", default=None, help="comma-separated vertex ids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser(
        "split-stats", help="per-batch split cost / locality / skew as CSV"
    )
    p.add_argument("--graph", required=True)
    p.add_argument("--partition", default=None)
    p.add_argument("--devices", type=int, required=True)
    p.add_argument("--balance-eps", type=float, default=0.05, dest="balance_eps")
    p.add_argument("--fanouts", default="5,5")
    p.add_argument("--batch-size", type=int, default=256, dest="batch_size")
    p.add_argument("--batches", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_split_stats)

    def add_run_flags(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--graph", default=None)
        p.add_argument("--features", default=None)
        p.add_argument("--labels", default=None)
        p.add_argument("--partition", default=None)
        p.add_argument("--train-set", default=None, dest="train_set")
        p.add_argument("--model", default=None)
        p.add_argument("--mode", default=None)
        p.add_argument("--layers", type=int, default=None)
        p.add_argument("--hidden", type=int, default=None)
        p.add_argument("--fanouts", default=None)
        p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument(
            "--cache-fraction", type=float, default=None, dest="cache_fraction"
        )
        p.add_argument("--devices", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--balance-eps", type=float, default=None, dest="balance_eps")
        p.add_argument("--out", default=None)

    p = sub.add_parser("train", help="train one mode; write metrics + checkpoint")
    add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="compare modes and cache sizes")
    add_run_flags(p)
    p.add_argument(
        "--modes", default="single,data_parallel,split", help="comma-separated modes"
    )
    p.add_argument(
        "--cache-sweep",
        default="",
        dest="cache_sweep",
        help="extra split-mode runs at these cache fractions",
    )
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GraphError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
