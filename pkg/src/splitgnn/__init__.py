"""Split-parallel mini-batch GNN training, simulated on in-process devices.

The pipeline: build or load a CSR graph, partition it offline, construct
per-device feature caches, then per iteration sample a mini-batch, split it
online into non-overlapping per-device work, and train GraphSage or GAT
cooperatively with explicit inter-device exchanges. A data-parallel baseline
and a single-device oracle run the same models for comparison.
"""

from splitgnn.graph import (
    Graph,
    GraphError,
    community_labels,
    generate_planted_partition,
    load_graph,
    save_binary_csr,
)
from splitgnn.partition import (
    CacheState,
    PartitionMap,
    build_cache,
    cut_size,
    partition_graph,
    refine_assignment,
)
from splitgnn.sampling import (
    MiniBatchSample,
    epoch_batches,
    sample_microbatches,
    sample_minibatch,
)
from splitgnn.scheduler import (
    LocalSplit,
    ShufflePlan,
    SplitCostReport,
    split_cost,
    split_minibatch,
    transfer_manifest,
)
from splitgnn.models import ModelParams, init_params
from splitgnn.metrics import (
    EpochMetrics,
    IterationMetrics,
    account_transfer,
    emit_csv,
    read_csv,
    redundancy_report,
)
from splitgnn.engine import Trainer, allreduce_and_step

__all__ = [
    "Graph",
    "GraphError",
    "community_labels",
    "generate_planted_partition",
    "load_graph",
    "save_binary_csr",
    "CacheState",
    "PartitionMap",
    "build_cache",
    "cut_size",
    "partition_graph",
    "refine_assignment",
    "MiniBatchSample",
    "epoch_batches",
    "sample_microbatches",
    "sample_minibatch",
    "LocalSplit",
    "ShufflePlan",
    "SplitCostReport",
    "split_cost",
    "split_minibatch",
    "transfer_manifest",
    "ModelParams",
    "init_params",
    "EpochMetrics",
    "IterationMetrics",
    "account_transfer",
    "emit_csv",
    "read_csv",
    "redundancy_report",
    "Trainer",
    "allreduce_and_step",
]
