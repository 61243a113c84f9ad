import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgtok.anchors import AnchorSet, combination_capacity
from kgtok.graph import build_graph
from kgtok.synthetic import random_graph_triples
from kgtok.tokenizer import (NewEdge, NodeHash, NodeHashes, Vocabulary, compute_anchor_distances,
                             hash_collision_stats, out_of_sample_distances, random_strategy_tokenize,
                             tokenize_graph, tokenize_node, tokenize_out_of_sample)
from oracles import all_pairs_from, canonical_hash_oracle, random_kg, undirected_adjacency


def path_graph(n, num_rel=1):
    return build_graph([(i, 0, i + 1) for i in range(n - 1)], n, num_rel)


def graph_cases(max_nodes=40):
    return st.tuples(st.integers(2, max_nodes), st.integers(0, 10**6), st.floats(0.3, 3.0))


def random_case(n, seed, density, num_rel=3, connected=False):
    rng = np.random.default_rng(seed)
    m = int(density * n)
    triples = random_graph_triples(n, max(m, n - 1), num_rel, seed) if connected else np.array(
        random_kg(rng, n, m, num_rel), dtype=np.int64).reshape(-1, 3)
    return build_graph(triples, n, num_rel), triples, rng


def test_vocabulary_layout():
    v = Vocabulary(3, 4)
    assert v.pad == 7 and v.disconnected == 8 and v.size == 9
    assert [v.describe(t)[0] for t in range(9)] == ["anchor"] * 3 + ["relation"] * 4 + ["pad", "disconnected"]
    assert v.describe(v.relation_token(2)) == ("relation", 2)
    with pytest.raises(IndexError):
        v.describe(9)


def test_distances_on_path():
    idx = compute_anchor_distances(path_graph(4), [0])
    assert idx.distances.tolist() == [[0, 1, 2, 3]]
    assert idx.max_distance == 3


def test_unreachable_marked():
    g = build_graph([(0, 0, 1), (2, 0, 3)], 4, 1)
    idx = compute_anchor_distances(g, [0])
    assert idx.distances.tolist() == [[0, 1, -1, -1]]


def test_anchor_tokenizes_to_itself_first():
    g = path_graph(6)
    idx = compute_anchor_distances(g, [5, 2])
    h = tokenize_node(g, idx, 2, 2, 1)
    assert h.anchors[0] == 1 and h.distances[0] == 0


def test_equidistant_anchors_canonical_order():
    g = path_graph(5)
    anchors = AnchorSet(np.array([0, 4]), ("x", "x"))
    idx = compute_anchor_distances(g, anchors)
    h = tokenize_node(g, idx, 2, 2, 1)
    assert h.anchors == (0, 1) and h.distances == (2, 2)
    adj = undirected_adjacency(5, g.direct_triples.tolist())
    oracle = canonical_hash_oracle(all_pairs_from(adj, [0, 4])[:, 2], 2, 4, idx.unreachable_bucket)
    assert (list(h.anchors), list(h.distances)) == oracle


def test_relation_context_padding():
    # node 0 has outgoing r0 and r1 -> 2 unique relations
    g = build_graph([(0, 0, 1), (0, 1, 2), (0, 1, 3)], 4, 2)
    idx = compute_anchor_distances(g, [1])
    h = tokenize_node(g, idx, 0, 1, 5)
    vocab = Vocabulary(1, 4)
    assert h.relations == (vocab.relation_token(0), vocab.relation_token(1), vocab.pad, vocab.pad, vocab.pad)


def test_isolated_node_disconnected():
    g = build_graph([(0, 0, 1)], 3, 1)
    idx = compute_anchor_distances(g, [0, 1])
    h = tokenize_node(g, idx, 2, 3, 1)
    vocab = Vocabulary(2, 2)
    assert h.anchors == (vocab.disconnected, vocab.pad, vocab.pad)
    assert h.distances == (idx.unreachable_bucket,) * 3
    assert h.relations == (vocab.pad,)


def test_fewer_reachable_than_k_pads():
    g = build_graph([(0, 0, 1), (2, 0, 3)], 4, 1)
    idx = compute_anchor_distances(g, [0, 3])
    h = tokenize_node(g, idx, 1, 2, 1)
    pad = Vocabulary(2, 2).pad
    assert h.anchors == (0, pad) and h.distances == (1, idx.unreachable_bucket)


def test_relation_only_hashes():
    g, _, _ = random_case(30, 1, 2.0, num_rel=8)
    hashes = tokenize_graph(g, AnchorSet(np.zeros(0, dtype=np.int64), ()), 5, 15)
    assert hashes.anchors.shape == (30, 0) and hashes.relations.shape == (30, 15)


def test_k_equals_num_anchors_lists_all():
    g = build_graph(random_graph_triples(25, 60, 2, 3), 25, 2)
    hashes = tokenize_graph(g, np.array([3, 7, 11, 20]), 4, 2)
    assert all(sorted(row) == [0, 1, 2, 3] for row in hashes.anchors.tolist())


@settings(max_examples=40, deadline=None)
@given(graph_cases(), st.integers(0, 6), st.integers(0, 5))
def test_canonical_hashes_match_bfs_oracle(case, k, m):
    n, seed, density = case
    g, triples, rng = random_case(n, seed, density)
    anchors = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
    idx = compute_anchor_distances(g, anchors)
    oracle_d = all_pairs_from(undirected_adjacency(n, triples.tolist()), anchors.tolist())
    assert idx.distances.tolist() == oracle_d.tolist()
    hashes = tokenize_graph(g, idx, k, m)
    pad = hashes.vocab.pad
    for v in range(n):
        exp_a, exp_d = canonical_hash_oracle(oracle_d[:, v].tolist(), k, pad, idx.unreachable_bucket)
        if k and all(d < 0 for d in oracle_d[:, v]):
            exp_a[0] = hashes.vocab.disconnected
        assert hashes.anchors[v].tolist() == exp_a
        assert hashes.distances[v].tolist() == exp_d
        # canonical distances never decrease along the sequence
        assert all(np.diff(hashes.distances[v]) >= 0)


@settings(max_examples=30, deadline=None)
@given(graph_cases())
def test_distance_triangle_inequality(case):
    n, seed, density = case
    g, triples, rng = random_case(n, seed, density)
    idx = compute_anchor_distances(g, rng.choice(n, size=min(n, 5), replace=False))
    d = idx.distances
    for h, _, t in triples.tolist():
        for a in range(idx.num_anchors):
            if d[a, h] >= 0:
                assert 0 <= d[a, t] <= d[a, h] + 1
            assert (d[a, h] < 0) == (d[a, t] < 0)
    for i, a in enumerate(idx.anchors):
        assert d[i, a] == 0


@settings(max_examples=30, deadline=None)
@given(graph_cases(), st.integers(1, 5), st.integers(0, 4), st.integers(0, 2**32))
def test_stochastic_preserves_anchor_distance_multiset(case, k, m, tseed):
    n, seed, density = case
    g, _, rng = random_case(n, seed, density, connected=True)
    idx = compute_anchor_distances(g, rng.choice(n, size=min(n, 6), replace=False))
    canon = tokenize_graph(g, idx, k, m, "canonical", seed=tseed)
    stoch = tokenize_graph(g, idx, k, m, "stochastic", seed=tseed)
    for v in range(n):
        pairs_c = sorted(zip(canon.anchors[v].tolist(), canon.distances[v].tolist()))
        pairs_s = sorted(zip(stoch.anchors[v].tolist(), stoch.distances[v].tolist()))
        assert pairs_c == pairs_s
        assert stoch.distances[v].tolist() == canon.distances[v].tolist()
    assert np.array_equal(canon.relations, stoch.relations)


def test_stochastic_actually_shuffles_ties():
    # star: all leaves are anchors at distance 2 from each other via the center
    g = build_graph([(0, 0, i) for i in range(1, 9)], 9, 1)
    idx = compute_anchor_distances(g, list(range(1, 9)))
    orders = {tokenize_graph(g, idx, 8, 0, "stochastic", seed=s).anchors[0].tobytes() for s in range(10)}
    assert len(orders) > 1


@settings(max_examples=30, deadline=None)
@given(graph_cases(30), st.integers(0, 5), st.integers(0, 6))
def test_hashes_commute_with_relabeling(case, k, m):
    n, seed, density = case
    g, triples, rng = random_case(n, seed, density)
    anchors = rng.choice(n, size=min(n, 5), replace=False)
    perm = rng.permutation(n)
    t2 = triples.copy()
    t2[:, 0], t2[:, 2] = perm[triples[:, 0]], perm[triples[:, 2]]
    g2 = build_graph(t2, n, 3)
    h1 = tokenize_graph(g, anchors, k, m, seed=5)
    h2 = tokenize_graph(g2, perm[anchors], k, m, seed=5)
    for v in range(n):
        assert h1[v] == h2[perm[v]]


def test_out_of_sample_distance_examples():
    g = path_graph(5)
    idx = compute_anchor_distances(g, [0])
    assert out_of_sample_distances(idx, [NewEdge(3, 0, True)]).tolist() == [4]
    assert out_of_sample_distances(idx, [NewEdge(0, 0, False)]).tolist() == [1]
    h = tokenize_out_of_sample(g, idx, [NewEdge(3, 0, True)], 1, 1)
    assert h.distances == (4,)


def test_out_of_sample_incoming_edge_uses_inverse():
    g = path_graph(4)
    idx = compute_anchor_distances(g, [0])
    h = tokenize_out_of_sample(g, idx, [NewEdge(2, 0, outgoing=False)], 1, 2)
    vocab = Vocabulary(1, 2)
    assert vocab.relation_token(1) in h.relations
    h = tokenize_out_of_sample(g, idx, [NewEdge(2, 0, outgoing=True)], 1, 2)
    assert h.relations == (vocab.relation_token(0), vocab.pad)


def test_out_of_sample_empty_edges_disconnected():
    g = path_graph(4)
    idx = compute_anchor_distances(g, [0, 3])
    h = tokenize_out_of_sample(g, idx, [], 2, 2)
    vocab = Vocabulary(2, 2)
    assert h.anchors == (vocab.disconnected, vocab.pad)
    assert h.relations == (vocab.pad, vocab.pad)


def test_out_of_sample_leaves_graph_untouched():
    g = path_graph(4)
    before = (g.indptr.copy(), g.nbr.copy())
    idx = compute_anchor_distances(g, [0])
    tokenize_out_of_sample(g, idx, [NewEdge(1, 0, True)], 1, 1)
    assert np.array_equal(before[0], g.indptr) and np.array_equal(before[1], g.nbr)


def test_out_of_sample_clamps_past_max_distance():
    g = path_graph(4)
    idx = compute_anchor_distances(g, [0])
    h = tokenize_out_of_sample(g, idx, [NewEdge(3, 0, True)], 1, 0)
    assert out_of_sample_distances(idx, [NewEdge(3, 0, True)]).tolist() == [4]
    assert h.distances == (idx.max_distance,)


@settings(max_examples=40, deadline=None)
@given(graph_cases(60), st.integers(1, 4))
def test_out_of_sample_matches_augmented_bfs(case, n_edges):
    n, seed, density = case
    g, triples, rng = random_case(n, seed, density)
    anchors = rng.choice(n, size=min(n, 5), replace=False)
    idx = compute_anchor_distances(g, anchors)
    edges = [NewEdge(int(rng.integers(n)), int(rng.integers(3)), bool(rng.integers(2))) for _ in range(n_edges)]
    aug = triples.tolist() + [(n, e.relation, e.entity) if e.outgoing else (e.entity, e.relation, n) for e in edges]
    oracle = all_pairs_from(undirected_adjacency(n + 1, aug), anchors.tolist())[:, n]
    assert out_of_sample_distances(idx, edges).tolist() == oracle.tolist()


def test_random_strategy_capacity_and_shape():
    g = build_graph(random_graph_triples(1000, 3000, 4, 0), 1000, 4)
    cap, ok = combination_capacity(50, 20, 1000)
    assert ok and cap >= 1000
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        hashes = random_strategy_tokenize(g, np.arange(50), 20, 2, seed=1)
    assert hashes.anchors.shape == (1000, 20)
    assert all(len(set(row)) == 20 for row in hashes.anchors.tolist())
    assert all(np.all(np.diff(row) >= 0) for row in hashes.distances)


def test_random_strategy_k_equals_all_anchors():
    g = build_graph(random_graph_triples(40, 80, 2, 0), 40, 2)
    with pytest.warns(UserWarning):  # C(6, 6) = 1 < 40 nodes
        hashes = random_strategy_tokenize(g, np.arange(6), 6, seed=3)
    assert all(sorted(row) == list(range(6)) for row in hashes.anchors.tolist())


def test_random_strategy_deterministic_and_warns():
    g = build_graph(random_graph_triples(40, 80, 2, 0), 40, 2)
    a = random_strategy_tokenize(g, np.arange(10), 3, seed=9)
    b = random_strategy_tokenize(g, np.arange(10), 3, seed=9)
    assert a.anchors.tobytes() == b.anchors.tobytes()
    with pytest.warns(UserWarning):
        random_strategy_tokenize(g, np.arange(4), 2)
    with pytest.raises(ValueError):
        random_strategy_tokenize(g, np.arange(4), 5)


def test_random_strategy_uniform_marginals():
    g = build_graph(random_graph_triples(3000, 6000, 2, 0), 3000, 2)
    with pytest.warns(UserWarning):
        hashes = random_strategy_tokenize(g, np.arange(10), 3, seed=4)
    counts = np.bincount(hashes.anchors.ravel(), minlength=10)
    # each anchor expected in 3/10 of the 3000 hashes; binomial sd ~ 25
    assert np.all(np.abs(counts - 900) < 5 * 25)


def test_collision_stats_examples():
    distinct = [NodeHash((0,), (1,), (3,)), NodeHash((1,), (1,), (3,))]
    assert hash_collision_stats(distinct)["collision_rate"] == 0.0
    g = build_graph([(0, 0, 1)], 4, 1)
    hashes = tokenize_graph(g, [0], 1, 1)
    stats = hash_collision_stats(hashes)
    assert (2, 3) in stats["example_colliding_pairs"]


def test_four_cycle_collision():
    g = build_graph([(0, 0, 1), (1, 0, 2), (2, 0, 3), (3, 0, 0)], 4, 1)
    for seed in range(5):
        hashes = tokenize_graph(g, [0], 1, 1, seed=seed)
        assert hashes[1] == hashes[3]
        stats = hash_collision_stats(hashes)
        assert stats["example_colliding_pairs"] == [(1, 3)]
        assert stats["unique_count"] == 3


def test_collision_ignores_relation_order():
    a = NodeHash((0,), (1,), (3, 4))
    b = NodeHash((0,), (1,), (4, 3))
    assert hash_collision_stats([a, b])["unique_count"] == 1


def test_hash_file_roundtrip(tmp_path):
    g = build_graph(random_graph_triples(30, 60, 3, 0), 30, 3)
    hashes = tokenize_graph(g, [1, 5, 9], 2, 3)
    hashes.save(tmp_path / "h.txt")
    lines = (tmp_path / "h.txt").read_text().splitlines()
    assert lines[0].startswith("k=2 m=3 num_anchors=3 num_relations=6")
    node, a, d, r = lines[1].split("\t")
    assert node == "0" and len(a.split(",")) == 2 and len(r.split(",")) == 3
    again = NodeHashes.load(tmp_path / "h.txt")
    for name in ("anchors", "distances", "relations"):
        assert np.array_equal(getattr(again, name), getattr(hashes, name))
    assert again.vocab == hashes.vocab and again.max_distance == hashes.max_distance


def test_hash_file_with_no_anchors(tmp_path):
    g = build_graph(random_graph_triples(10, 20, 2, 0), 10, 2)
    hashes = tokenize_graph(g, [], 3, 2)
    hashes.save(tmp_path / "h.txt")
    line = (tmp_path / "h.txt").read_text().splitlines()[1]
    assert line.split("\t")[1:3] == ["", ""]
    assert NodeHashes.load(tmp_path / "h.txt").anchors.shape == (10, 0)
