"""Node tokenization against a fixed anchor + relation vocabulary.

Every node becomes ``k`` anchor tokens, their hop distances and ``m``
outgoing relation tokens. Distances come from one BFS per anchor over the
adjacency with inverse edges.

Randomness is drawn from counter-based keys ``mix(seed, node, item)`` so each
node's hash is independent of thread count and evaluation order. Relational
context uses one random priority over relation types per seed, so nodes with
equal relation sets get equal contexts.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning

from .anchors import AnchorSet, combination_capacity
from .graph import KnowledgeGraph

log = logging.getLogger(__name__)

warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)

TIE_POLICIES = ("canonical", "stochastic")


@dataclass(frozen=True)
class Vocabulary:
    """Token id layout: anchors, then relations (direct + inverse), then PAD and DISCONNECTED."""

    num_anchors: int
    num_relations: int

    @property
    def pad(self) -> int:
        return self.num_anchors + self.num_relations

    @property
    def disconnected(self) -> int:
        return self.num_anchors + self.num_relations + 1

    @property
    def size(self) -> int:
        return self.num_anchors + self.num_relations + 2

    def anchor_token(self, index: int) -> int:
        if not 0 <= index < self.num_anchors:
            raise IndexError(index)
        return index

    def relation_token(self, relation: int) -> int:
        if not 0 <= relation < self.num_relations:
            raise IndexError(relation)
        return self.num_anchors + relation

    def describe(self, token: int) -> tuple[str, int]:
        if 0 <= token < self.num_anchors:
            return "anchor", token
        if self.num_anchors <= token < self.pad:
            return "relation", token - self.num_anchors
        if token == self.pad:
            return "pad", 0
        if token == self.disconnected:
            return "disconnected", 0
        raise IndexError(f"token {token} outside vocabulary of size {self.size}")


@dataclass(frozen=True)
class DistanceIndex:
    """Hop distance from every anchor to every node; -1 marks unreachable."""

    anchors: np.ndarray
    distances: np.ndarray  # (|A|, |N|) int32
    max_distance: int

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)

    @property
    def unreachable_bucket(self) -> int:
        return self.max_distance + 1


@dataclass(frozen=True)
class NodeHash:
    anchors: tuple[int, ...]
    distances: tuple[int, ...]
    relations: tuple[int, ...]

    def key(self) -> tuple:
        """Identity used for collision counting: relation order is ignored."""
        return self.anchors, self.distances, tuple(sorted(self.relations))


@dataclass
class NodeHashes:
    """Hashes of every node as three dense token arrays."""

    anchors: np.ndarray  # (N, k)
    distances: np.ndarray  # (N, k)
    relations: np.ndarray  # (N, m)
    vocab: Vocabulary
    max_distance: int

    @property
    def k(self) -> int:
        return self.anchors.shape[1]

    @property
    def m(self) -> int:
        return self.relations.shape[1]

    @property
    def unreachable_bucket(self) -> int:
        return self.max_distance + 1

    def __len__(self) -> int:
        return self.anchors.shape[0]

    def __getitem__(self, node: int) -> NodeHash:
        return NodeHash(
            tuple(self.anchors[node].tolist()),
            tuple(self.distances[node].tolist()),
            tuple(self.relations[node].tolist()),
        )

    def select(self, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.anchors[nodes], self.distances[nodes], self.relations[nodes]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(
                f"k={self.k} m={self.m} num_anchors={self.vocab.num_anchors} "
                f"num_relations={self.vocab.num_relations} max_distance={self.max_distance}\n"
            )
            for i in range(len(self)):
                a = ",".join(map(str, self.anchors[i].tolist()))
                d = ",".join(map(str, self.distances[i].tolist()))
                r = ",".join(map(str, self.relations[i].tolist()))
                fh.write(f"{i}\t{a}\t{d}\t{r}\n")

    @classmethod
    def load(cls, path: str | Path) -> "NodeHashes":
        with open(path, encoding="utf-8") as fh:
            header = dict(item.split("=", 1) for item in fh.readline().split())
            k, m = int(header["k"]), int(header["m"])
            vocab = Vocabulary(int(header["num_anchors"]), int(header["num_relations"]))
            rows_a, rows_d, rows_r = [], [], []
            for lineno, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4 or int(parts[0]) != len(rows_a):
                    raise ValueError(f"{path}:{lineno}: malformed hash line")
                rows_a.append(_ints(parts[1]))
                rows_d.append(_ints(parts[2]))
                rows_r.append(_ints(parts[3]))
        n = len(rows_a)
        max_distance = int(header.get("max_distance", 0))
        return cls(
            np.array(rows_a, dtype=np.int64).reshape(n, k),
            np.array(rows_d, dtype=np.int64).reshape(n, k),
            np.array(rows_r, dtype=np.int64).reshape(n, m),
            vocab,
            max_distance,
        )


def _ints(field: str) -> list[int]:
    return [int(x) for x in field.split(",")] if field else []


# --- counter-based randomness -------------------------------------------------

@njit(cache=True)
def _splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@njit(cache=True)
def mix(seed, node, item):
    """64-bit key for (seed, node, item); the only randomness source in hashing."""
    h = _splitmix64(np.uint64(seed))
    h = _splitmix64(h ^ np.uint64(node))
    return _splitmix64(h ^ np.uint64(item))


# --- distances ----------------------------------------------------------------

@njit(cache=True)
def _bfs(indptr, nbr, source, out):
    n = out.shape[0]
    for i in range(n):
        out[i] = -1
    queue = np.empty(n, dtype=np.int64)
    out[source] = 0
    queue[0] = source
    head, tail = 0, 1
    while head < tail:
        u = queue[head]
        head += 1
        du = out[u] + 1
        for e in range(indptr[u], indptr[u + 1]):
            v = nbr[e]
            if out[v] < 0:
                out[v] = du
                queue[tail] = v
                tail += 1


@njit(parallel=True, cache=True)
def _bfs_many(indptr, nbr, sources, out):
    for i in prange(sources.shape[0]):
        _bfs(indptr, nbr, sources[i], out[i])


def compute_anchor_distances(graph: KnowledgeGraph, anchor_set: AnchorSet | Sequence[int]) -> DistanceIndex:
    anchors = np.asarray(getattr(anchor_set, "entities", anchor_set), dtype=np.int64)
    n = graph.num_entities
    if len(anchors) and (anchors.min() < 0 or anchors.max() >= n):
        raise ValueError("anchor id out of bounds")
    dist = np.empty((len(anchors), n), dtype=np.int32)
    if len(anchors) and n:
        _bfs_many(graph.indptr, graph.nbr, anchors, dist)
    max_d = int(dist.max()) if dist.size else 0
    return DistanceIndex(anchors, dist, max(max_d, 0))


# --- hashing kernels ----------------------------------------------------------

@njit(cache=True)
def _hash_one(dcol, rels, k, m, num_anchors, num_rel, policy, seed, key,
              unreachable, out_a, out_d, out_r):
    pad = num_anchors + num_rel
    # k nearest reachable anchors ordered by (distance, token) via insertion
    cnt = 0
    for a in range(num_anchors):
        d = dcol[a]
        if d < 0 or k == 0:
            continue
        if cnt == k and d >= out_d[k - 1]:
            continue
        j = cnt if cnt < k else k - 1
        while j > 0 and out_d[j - 1] > d:
            out_a[j] = out_a[j - 1]
            out_d[j] = out_d[j - 1]
            j -= 1
        out_a[j] = a
        out_d[j] = d
        if cnt < k:
            cnt += 1
    if policy == 1 and cnt > 1:
        # shuffle inside equal-distance runs; selected set unchanged
        keys = np.empty(cnt, dtype=np.uint64)
        for i in range(cnt):
            keys[i] = mix(seed, key, out_a[i])
        start = 0
        while start < cnt:
            stop = start + 1
            while stop < cnt and out_d[stop] == out_d[start]:
                stop += 1
            for i in range(start + 1, stop):
                ka, kk = out_a[i], keys[i]
                j = i
                while j > start and keys[j - 1] > kk:
                    keys[j] = keys[j - 1]
                    out_a[j] = out_a[j - 1]
                    j -= 1
                keys[j] = kk
                out_a[j] = ka
            start = stop
    for i in range(cnt, k):
        out_a[i] = pad
        out_d[i] = unreachable
    if cnt == 0 and k > 0 and num_anchors > 0:
        out_a[0] = pad + 1

    # relational context: the m relations ranked first by a seed-level random
    # priority (same for every node), emitted sorted by id
    nr = rels.shape[0]
    if nr <= m:
        for i in range(nr):
            out_r[i] = num_anchors + rels[i]
        for i in range(nr, m):
            out_r[i] = pad
    elif m > 0:
        keys = np.empty(nr, dtype=np.uint64)
        for i in range(nr):
            keys[i] = mix(seed ^ np.uint64(0x5EED), 0, rels[i])
        order = np.argsort(keys)[:m]
        order.sort()
        for i in range(m):
            out_r[i] = num_anchors + rels[order[i]]


@njit(parallel=True, cache=True)
def _hash_nodes(dist, rel_indptr, rel_types, nodes, k, m, num_anchors, num_rel,
                policy, seed, unreachable, out_a, out_d, out_r):
    for i in prange(nodes.shape[0]):
        v = nodes[i]
        _hash_one(dist[:, v], rel_types[rel_indptr[v]:rel_indptr[v + 1]], k, m,
                  num_anchors, num_rel, policy, seed, v, unreachable,
                  out_a[i], out_d[i], out_r[i])


@njit(parallel=True, cache=True)
def _random_subsets(num_nodes, num_anchors, k, seed, out):
    for v in prange(num_nodes):
        keys = np.empty(num_anchors, dtype=np.uint64)
        for a in range(num_anchors):
            keys[a] = mix(seed, v, a)
        out[v] = np.argsort(keys)[:k]


def _policy_code(tie_policy: str) -> int:
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"unknown tie policy {tie_policy!r}; expected one of {TIE_POLICIES}")
    return TIE_POLICIES.index(tie_policy)


def _check_km(k: int, m: int, num_anchors: int) -> int:
    if k < 0 or m < 0:
        raise ValueError("k and m must be non-negative")
    # with no anchors there are no anchor slots at all
    return k if num_anchors else 0


def _hash_batch(graph, index, nodes, k, m, tie_policy, seed):
    num_anchors = index.num_anchors
    k = _check_km(k, m, num_anchors)
    nodes = np.asarray(nodes, dtype=np.int64)
    out_a = np.empty((len(nodes), k), dtype=np.int64)
    out_d = np.empty((len(nodes), k), dtype=np.int64)
    out_r = np.empty((len(nodes), m), dtype=np.int64)
    dist = index.distances if num_anchors else np.zeros((0, graph.num_entities), dtype=np.int32)
    if len(nodes):
        _hash_nodes(dist, graph.rel_indptr, graph.rel_types, nodes, k, m, num_anchors,
                    graph.num_total_relations, _policy_code(tie_policy), np.uint64(seed),
                    index.unreachable_bucket, out_a, out_d, out_r)
    return out_a, out_d, out_r


def tokenize_node(
    graph: KnowledgeGraph,
    index: DistanceIndex,
    node: int,
    k: int,
    m: int,
    tie_policy: str = "canonical",
    seed: int = 0,
) -> NodeHash:
    graph._check_node(node)
    a, d, r = _hash_batch(graph, index, [node], k, m, tie_policy, seed)
    return NodeHash(tuple(a[0].tolist()), tuple(d[0].tolist()), tuple(r[0].tolist()))


def tokenize_graph(
    graph: KnowledgeGraph,
    anchor_set: AnchorSet | DistanceIndex,
    k: int,
    m: int,
    tie_policy: str = "canonical",
    seed: int = 0,
) -> NodeHashes:
    index = anchor_set if isinstance(anchor_set, DistanceIndex) else compute_anchor_distances(graph, anchor_set)
    a, d, r = _hash_batch(graph, index, np.arange(graph.num_entities), k, m, tie_policy, seed)
    return NodeHashes(a, d, r, Vocabulary(index.num_anchors, graph.num_total_relations), index.max_distance)


# --- out-of-sample nodes --------------------------------------------------------

@dataclass(frozen=True)
class NewEdge:
    """Edge between an unseen node and a seen entity.

    ``outgoing`` means ``(new, relation, entity)``; otherwise ``(entity, relation, new)``.
    """

    entity: int
    relation: int
    outgoing: bool


def out_of_sample_distances(index: DistanceIndex, edges: Iterable[NewEdge]) -> np.ndarray:
    """Exact anchor distances of a new node: 1 + min over its seen neighbours (-1 if none reachable)."""
    nbrs = np.array(sorted({e.entity for e in edges}), dtype=np.int64)
    if index.num_anchors == 0 or len(nbrs) == 0:
        return np.full(index.num_anchors, -1, dtype=np.int64)
    d = index.distances[:, nbrs].astype(np.int64)
    d = np.where(d < 0, np.iinfo(np.int64).max, d)
    best = d.min(axis=1)
    return np.where(best == np.iinfo(np.int64).max, -1, best + 1)


def tokenize_out_of_sample(
    graph: KnowledgeGraph,
    index: DistanceIndex,
    edges: Sequence[NewEdge],
    k: int,
    m: int,
    tie_policy: str = "canonical",
    seed: int = 0,
    node_key: int | None = None,
) -> NodeHash:
    """Hash an unseen node from its edges to the known graph without modifying it.

    Distances past the largest bucket known to the index are clamped to it.
    ``node_key`` feeds the sampling keys and defaults to ``graph.num_entities``.
    """
    num_rel = graph.num_total_relations
    for e in edges:
        if not 0 <= e.entity < graph.num_entities or not 0 <= e.relation < graph.num_direct_relations:
            raise ValueError(f"edge {e} references an unknown entity or relation")
    k = _check_km(k, m, index.num_anchors)
    dcol = out_of_sample_distances(index, edges)
    dcol = np.minimum(dcol, index.max_distance).astype(np.int32)
    rels = np.array(sorted({e.relation if e.outgoing else e.relation + graph.num_direct_relations
                            for e in edges}), dtype=np.int64)
    out_a = np.empty(k, dtype=np.int64)
    out_d = np.empty(k, dtype=np.int64)
    out_r = np.empty(m, dtype=np.int64)
    key = graph.num_entities if node_key is None else node_key
    _hash_one(dcol, rels, k, m, index.num_anchors, num_rel, _policy_code(tie_policy),
              np.uint64(seed), key, index.unreachable_bucket, out_a, out_d, out_r)
    return NodeHash(tuple(out_a.tolist()), tuple(out_d.tolist()), tuple(out_r.tolist()))


def random_strategy_tokenize(
    graph: KnowledgeGraph,
    anchor_set: AnchorSet | DistanceIndex,
    k: int,
    m: int = 0,
    seed: int = 0,
) -> NodeHashes:
    """Each node gets k anchors drawn uniformly without replacement.

    Slots are ordered by (distance, token) with unreachable anchors last.
    """
    index = anchor_set if isinstance(anchor_set, DistanceIndex) else compute_anchor_distances(graph, anchor_set)
    num_anchors, n = index.num_anchors, graph.num_entities
    if k > num_anchors:
        raise ValueError(f"k={k} exceeds the {num_anchors} available anchors")
    _, enough = combination_capacity(num_anchors, k, n)
    if not enough:
        warnings.warn(f"C({num_anchors}, {k}) < {n} nodes: random hashes cannot all be unique", stacklevel=2)
    picks = np.empty((n, k), dtype=np.int64)
    if n and k:
        _random_subsets(n, num_anchors, k, np.uint64(seed), picks)
    dist = index.distances[picks, np.arange(n)[:, None]].astype(np.int64) if k else np.zeros((n, 0), np.int64)
    dist = np.where(dist < 0, index.unreachable_bucket, dist)
    order = np.lexsort((picks, dist), axis=1) if k else np.zeros((n, 0), np.int64)
    anchors = np.take_along_axis(picks, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    # relational context is shared with the deterministic strategy
    _, _, rels = _hash_batch(graph, index, np.arange(n), 0, m, "canonical", seed)
    return NodeHashes(anchors, dist, rels, Vocabulary(num_anchors, graph.num_total_relations), index.max_distance)


def hash_collision_stats(hashes: NodeHashes | Sequence[NodeHash], max_examples: int = 10) -> dict:
    """Count hashes shared by several nodes (relation order ignored)."""
    if isinstance(hashes, NodeHashes):
        rows = np.concatenate(
            [hashes.anchors, hashes.distances, np.sort(hashes.relations, axis=1)], axis=1)
        n = len(hashes)
    else:
        keys = [h.key() for h in hashes]
        n = len(keys)
        rows = np.array([a + d + r for a, d, r in keys], dtype=np.int64).reshape(n, -1)
    if n == 0:
        return {"num_nodes": 0, "unique_count": 0, "collision_rate": 0.0, "example_colliding_pairs": []}
    if rows.shape[1] == 0:
        inverse, counts = np.zeros(n, dtype=np.int64), np.array([n])
    else:
        _, inverse, counts = np.unique(rows, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
    shared = counts[inverse] > 1
    examples: list[tuple[int, int]] = []
    first_seen: dict[int, int] = {}
    for node in np.flatnonzero(shared).tolist():
        group = int(inverse[node])
        if group in first_seen and len(examples) < max_examples:
            examples.append((first_seen[group], node))
        first_seen.setdefault(group, node)
    return {
        "num_nodes": n,
        "unique_count": int(len(counts)),
        "collision_rate": float(shared.mean()),
        "example_colliding_pairs": examples,
    }


def set_num_threads(n: int) -> None:
    """Cap the worker threads used by the BFS and hashing kernels."""
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
