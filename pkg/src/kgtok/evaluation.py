"""Filtered ranking evaluation for link and relation prediction."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .decoders import make_decoder
from .encoder import ParameterStore, encode, encode_all
from .graph import KnowledgeGraph
from .tokenizer import DistanceIndex, NewEdge, NodeHashes, tokenize_out_of_sample

HITS_AT = (1, 3, 10)


class Scorer(Protocol):
    def score_tails(self, heads: np.ndarray, relations: np.ndarray) -> np.ndarray: ...

    def score_heads(self, relations: np.ndarray, tails: np.ndarray) -> np.ndarray: ...


def aggregate_metrics(ranks: Sequence[float] | np.ndarray) -> dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("cannot aggregate an empty rank list")
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for k in HITS_AT:
        out[f"hits@{k}"] = float(np.mean(ranks <= k))
    return out


@dataclass
class RankingReport:
    """Per-query ranks plus their aggregate metrics."""

    queries: list[tuple] = field(default_factory=list)
    ranks: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def num_queries(self) -> int:
        return len(self.ranks)

    def metrics(self) -> dict[str, float]:
        return {**aggregate_metrics(self.ranks), "num_queries": self.num_queries}

    def to_json(self) -> str:
        m = self.metrics()
        keys = ("mrr", "hits@1", "hits@3", "hits@10", "num_queries")
        return json.dumps({key: m[key] for key in keys}) + "\n"

    def write_queries_csv(self, path, header: str = "head,relation,tail,direction,rank") -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for q, rank in zip(self.queries, self.ranks.tolist()):
                fh.write(",".join(map(str, q)) + f",{rank}\n")


def realistic_rank(scores: np.ndarray, true_idx: int, filtered: Iterable[int] = ()) -> float:
    """Mean of optimistic and pessimistic rank of ``true_idx`` after dropping ``filtered``."""
    keep = np.ones(len(scores), dtype=bool)
    keep[list(filtered)] = False
    keep[true_idx] = True
    target = scores[true_idx]
    s = scores[keep]
    higher = int(np.sum(s > target))
    ties = int(np.sum(s == target))  # includes the true candidate itself
    return ((1 + higher) + (higher + ties)) / 2.0


def _known_index(known: Iterable[tuple[int, int, int]]):
    tails, heads = defaultdict(set), defaultdict(set)
    for h, r, t in known:
        tails[h, r].add(t)
        heads[r, t].add(h)
    return tails, heads


def filtered_ranks(
    scorer: Scorer,
    test_triples: np.ndarray,
    known: Iterable[tuple[int, int, int]],
    num_entities: int | None = None,
    batch_size: int = 256,
) -> RankingReport:
    """Rank the true tail of ``(h, r, ?)`` and true head of ``(?, r, t)`` for every test triple."""
    test = np.asarray(test_triples, dtype=np.int64).reshape(-1, 3)
    tails, heads = _known_index(known)
    queries, ranks = [], []
    for lo in range(0, len(test), batch_size):
        chunk = test[lo: lo + batch_size]
        st = scorer.score_tails(chunk[:, 0], chunk[:, 1])
        sh = scorer.score_heads(chunk[:, 1], chunk[:, 2])
        if num_entities is not None and st.shape[1] != num_entities:
            raise ValueError(f"scorer returned {st.shape[1]} candidates, expected {num_entities}")
        for i, (h, r, t) in enumerate(chunk.tolist()):
            queries.append((h, r, t, "tail"))
            ranks.append(realistic_rank(st[i], t, tails.get((h, r), ())))
            queries.append((h, r, t, "head"))
            ranks.append(realistic_rank(sh[i], h, heads.get((r, t), ())))
    return RankingReport(queries, np.array(ranks, dtype=np.float64))


def relation_prediction_ranks(
    scorer,
    test_triples: np.ndarray,
    known: Iterable[tuple[int, int, int]],
) -> RankingReport:
    """Rank the true relation of ``(h, ?, t)``; ``scorer.score_relations(h, t)`` gives ``(Q, R)``."""
    test = np.asarray(test_triples, dtype=np.int64).reshape(-1, 3)
    between = defaultdict(set)
    for h, r, t in known:
        between[h, t].add(r)
    queries, ranks = [], []
    if len(test):
        scores = scorer.score_relations(test[:, 0], test[:, 2])
        for i, (h, r, t) in enumerate(test.tolist()):
            queries.append((h, r, t, "relation"))
            ranks.append(realistic_rank(scores[i], r, between.get((h, t), ())))
    return RankingReport(queries, np.array(ranks, dtype=np.float64))


class EmbeddingScorer:
    """Scores against a materialized matrix of entity encodings."""

    def __init__(self, entity_vectors: np.ndarray, relations: np.ndarray, decoder, num_direct_relations: int | None = None):
        self.entities = entity_vectors
        self.relations = relations
        self.decoder = decoder
        self.num_direct_relations = num_direct_relations if num_direct_relations is not None else len(relations) // 2

    @classmethod
    def from_store(cls, store: ParameterStore, hashes: NodeHashes) -> "EmbeddingScorer":
        return cls(encode_all(store, hashes), store.params["relations"], make_decoder(store.config.decoder))

    def score_tails(self, heads, relations):
        return self.decoder.score_tails(self.entities[heads], self.relations[relations], self.entities)

    def score_heads(self, relations, tails):
        return self.decoder.score_heads(self.relations[relations], self.entities[tails], self.entities)

    def score_relations(self, heads, tails):
        nr = self.num_direct_relations
        h = self.entities[heads][:, None, :]
        t = self.entities[tails][:, None, :]
        r = self.relations[:nr][None, :, :]
        h, t = np.broadcast_to(h, (len(heads), nr, h.shape[-1])), np.broadcast_to(t, (len(tails), nr, t.shape[-1]))
        return self.decoder.score(h, np.broadcast_to(r, (len(heads),) + r.shape[1:]), t)


def out_of_sample_eval(
    graph: KnowledgeGraph,
    index: DistanceIndex,
    store: ParameterStore,
    unseen: Mapping[object, Sequence[NewEdge]],
    hashes: NodeHashes | None = None,
    entity_vectors: np.ndarray | None = None,
    tie_policy: str = "canonical",
    seed: int = 0,
) -> RankingReport:
    """Mask each edge of each unseen node in turn and rank its seen endpoint.

    The unseen node is re-tokenized from its remaining edges. Other edges of
    the same node with the same relation and direction are filtered.
    """
    if entity_vectors is None:
        if hashes is None:
            raise ValueError("pass either hashes or precomputed entity_vectors")
        entity_vectors = encode_all(store, hashes)
    cfg = store.config
    decoder = make_decoder(cfg.decoder)
    rel = store.params["relations"]
    queries, ranks = [], []
    for i, (node, edges) in enumerate(unseen.items()):
        edges = list(edges)
        for j, masked in enumerate(edges):
            rest = edges[:j] + edges[j + 1:]
            h = tokenize_out_of_sample(graph, index, rest, cfg.k, cfg.m, tie_policy, seed,
                                       node_key=graph.num_entities + i)
            vec = encode(store, np.array([h.anchors], dtype=np.int64).reshape(1, cfg.k),
                         np.array([h.distances], dtype=np.int64).reshape(1, cfg.k),
                         np.array([h.relations], dtype=np.int64).reshape(1, cfg.m)).vectors
            r = rel[[masked.relation]]
            if masked.outgoing:
                scores = decoder.score_tails(vec, r, entity_vectors)[0]
            else:
                scores = decoder.score_heads(r, vec, entity_vectors)[0]
            same = [e.entity for e in edges
                    if e.relation == masked.relation and e.outgoing == masked.outgoing and e.entity != masked.entity]
            queries.append((node, masked.relation, masked.entity, "tail" if masked.outgoing else "head"))
            ranks.append(realistic_rank(scores, masked.entity, same))
    return RankingReport(queries, np.array(ranks, dtype=np.float64))
