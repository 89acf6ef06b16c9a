import numpy as np
import pytest

from splitgnn.graph import from_edges, generate_planted_partition
from splitgnn.metrics import union_edge_count
from splitgnn.sampling import epoch_batches, sample_microbatches, sample_minibatch


def path_graph():
    return from_edges(3, [0, 1], [1, 2])


def edge_set(sample, l):
    src, dst = sample.edges(l)
    sg = sample.vertices(l - 1)[src]
    dg = sample.vertices(l)[dst]
    return set(zip(sg.tolist(), dg.tolist()))


def test_path_graph_hand_simulation():
    # Degrees never exceed the fanout, so the sample is unique: every vertex
    # of each layer keeps its self-edge and pulls its full in-neighborhood.
    g = path_graph()
    sample = sample_minibatch(g, [2], [1, 1], np.random.default_rng(0))
    assert list(sample.vertices(2)) == [2]
    assert list(sample.vertices(1)) == [2, 1]
    assert list(sample.vertices(0)) == [2, 1, 0]
    assert edge_set(sample, 2) == {(2, 2), (1, 2)}
    assert edge_set(sample, 1) == {(2, 2), (1, 2), (1, 1), (0, 1)}
    assert sample.num_edges(2) == 2
    assert sample.num_edges(1) == 4


def test_zero_fanout_keeps_only_self_edges():
    g = generate_planted_partition(20, 2, 0.4, 0.1, 2, seed=0)
    targets = np.array([3, 7, 11])
    sample = sample_minibatch(g, targets, [0, 0], np.random.default_rng(1))
    for l in range(3):
        assert np.array_equal(sample.vertices(l), targets)
    for l in (1, 2):
        src, dst = sample.edges(l)
        assert np.array_equal(src, np.arange(3))
        assert np.array_equal(dst, np.arange(3))


def test_exhaustive_fanout_includes_every_in_edge():
    g = generate_planted_partition(30, 3, 0.4, 0.1, 2, seed=2)
    fan = int(g.in_degrees().max())
    sample = sample_minibatch(g, np.arange(0, 30, 5), [fan, fan], np.random.default_rng(3))
    for l in (1, 2):
        got = edge_set(sample, l)
        want = set()
        for i, v in enumerate(sample.vertices(l)):
            want.add((int(v), int(v)))  # self-edge
            for u in g.in_neighbors(int(v)):
                want.add((int(u), int(v)))
        assert got == want


def test_sampling_without_replacement_distinct():
    g = generate_planted_partition(40, 2, 0.5, 0.2, 2, seed=4)
    rng = np.random.default_rng(5)
    sample = sample_minibatch(g, np.arange(0, 40, 3), [4, 4], rng)
    for l in (1, 2):
        src, dst = sample.edges(l)
        key = src * len(sample.vertices(l)) + dst
        assert len(np.unique(key)) == len(key)
        # Per destination, sampled neighbor count respects the fanout (+ self).
        for i in range(len(sample.vertices(l))):
            incident = np.count_nonzero(dst == i)
            assert incident <= 4 + 1


def test_fanout_caps_at_degree():
    g = path_graph()
    sample = sample_minibatch(g, [2], [10, 10], np.random.default_rng(0))
    assert sample.num_edges(2) == 2  # self + the single in-edge


def test_determinism_and_seed_sensitivity():
    g = generate_planted_partition(100, 4, 0.3, 0.02, 2, seed=6)
    targets = np.arange(0, 100, 7)
    a = sample_minibatch(g, targets, [2, 2], np.random.default_rng(42))
    b = sample_minibatch(g, targets, [2, 2], np.random.default_rng(42))
    for l in range(3):
        assert np.array_equal(a.vertices(l), b.vertices(l))
    for l in (1, 2):
        assert np.array_equal(a.edges(l)[0], b.edges(l)[0])
        assert np.array_equal(a.edges(l)[1], b.edges(l)[1])
    c = sample_minibatch(g, targets, [2, 2], np.random.default_rng(43))
    assert any(
        not np.array_equal(a.vertices(l), c.vertices(l)) for l in range(3)
    ) or any(
        not np.array_equal(a.edges(l)[0], c.edges(l)[0]) for l in (1, 2)
    )


def test_monotone_coverage_in_exhaustive_regime():
    g = generate_planted_partition(30, 3, 0.4, 0.1, 2, seed=7)
    fan = int(g.in_degrees().max())
    targets = np.arange(0, 30, 4)
    small = sample_minibatch(g, targets, [fan, fan], np.random.default_rng(8))
    large = sample_minibatch(g, targets, [fan + 5, fan + 5], np.random.default_rng(8))
    for l in range(3):
        assert set(small.vertices(l)) <= set(large.vertices(l))


def test_input_self_loop_not_duplicated():
    g = from_edges(2, [0, 1], [0, 1])  # self-loops only
    sample = sample_minibatch(g, [0, 1], [5], np.random.default_rng(0))
    src, dst = sample.edges(1)
    assert len(src) == 2  # one self-edge per vertex, no duplicate pair


def test_target_validation():
    g = path_graph()
    with pytest.raises(ValueError):
        sample_minibatch(g, [], [1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_minibatch(g, [1, 1], [1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_minibatch(g, [5], [1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_minibatch(g, [1], [], np.random.default_rng(0))


def test_microbatch_g1_matches_minibatch():
    g = generate_planted_partition(40, 2, 0.3, 0.05, 2, seed=9)
    targets = np.arange(0, 40, 3)
    micro = sample_microbatches(g, targets, 1, [2, 2], np.random.default_rng(11))
    mini = sample_minibatch(g, targets, [2, 2], np.random.default_rng(11))
    assert len(micro) == 1
    for l in range(3):
        assert np.array_equal(micro[0].vertices(l), mini.vertices(l))


def disjoint_two_paths():
    # 0 -> 1 -> 2 and 3 -> 4 -> 5; the 2-hop neighborhoods of 2 and 5 are disjoint.
    return from_edges(6, [0, 1, 3, 4], [1, 2, 4, 5])


def test_disjoint_microbatches_have_no_redundancy():
    g = disjoint_two_paths()
    targets = np.array([2, 5])
    rng = np.random.default_rng(1)
    micro = sample_microbatches(g, targets, 2, [2, 2], rng)
    mini = sample_minibatch(g, targets, [2, 2], np.random.default_rng(2))
    total_micro = sum(s.total_edges for s in micro)
    assert total_micro == mini.total_edges
    assert union_edge_count(micro) == total_micro


def hub_star_graph(num_targets=8):
    """A hub vertex feeding every target: micro-batches must overlap on it."""
    n = num_targets + 1
    hub = 0
    src = np.full(num_targets, hub)
    dst = np.arange(1, n)
    return from_edges(n, src, dst), dst


def test_overlapping_microbatches_are_redundant():
    g, targets = hub_star_graph()
    rng = np.random.default_rng(3)
    micro = sample_microbatches(g, targets, 4, [1, 1], rng)
    total_micro = sum(s.total_edges for s in micro)
    union = union_edge_count(micro)
    assert total_micro > union  # the hub's self-edge alone repeats 4 times


def test_microbatch_round_robin_split():
    g = generate_planted_partition(40, 2, 0.3, 0.05, 2, seed=9)
    targets = np.arange(10)
    micro = sample_microbatches(g, targets, 3, [1], np.random.default_rng(0))
    assert np.array_equal(micro[0].targets, [0, 3, 6, 9])
    assert np.array_equal(micro[1].targets, [1, 4, 7])
    assert np.array_equal(micro[2].targets, [2, 5, 8])


def test_microbatch_needs_enough_targets():
    g = path_graph()
    with pytest.raises(ValueError):
        sample_microbatches(g, [0, 1], 3, [1], np.random.default_rng(0))


def test_epoch_batches_sizes_and_determinism():
    rng = np.random.default_rng(13)
    batches = epoch_batches(np.arange(10), 4, rng)
    assert [len(b) for b in batches] == [4, 4, 2]
    merged = np.sort(np.concatenate(batches))
    assert np.array_equal(merged, np.arange(10))
    again = epoch_batches(np.arange(10), 4, np.random.default_rng(13))
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    one = epoch_batches(np.arange(5), 99, np.random.default_rng(0))
    assert len(one) == 1 and sorted(one[0]) == list(range(5))
    with pytest.raises(ValueError):
        epoch_batches(np.arange(5), 0, rng)


def test_sample_invariants_on_random_graphs():
    rng = np.random.default_rng(21)
    for trial in range(10):
        n = int(rng.integers(5, 60))
        m = int(rng.integers(0, 6 * n))
        g = from_edges(n, rng.integers(0, n, m), rng.integers(0, n, m))
        k = int(rng.integers(1, min(n, 8)))
        targets = rng.choice(n, size=k, replace=False)
        fanouts = [int(f) for f in rng.integers(0, 5, size=int(rng.integers(1, 4)))]
        sample = sample_minibatch(g, targets, fanouts, rng)
        sample.validate(n)  # subset/self-edge/no-duplicate invariants
        # V^(l) is a positional prefix of V^(l-1).
        for l in range(1, sample.num_layers + 1):
            hi, lo = sample.vertices(l), sample.vertices(l - 1)
            assert np.array_equal(lo[: len(hi)], hi)


def test_to_text_dump():
    g = path_graph()
    sample = sample_minibatch(g, [2], [1], np.random.default_rng(0))
    text = sample.to_text()
    assert "layer 0 vertices" in text
    assert "layer 1 edges" in text
