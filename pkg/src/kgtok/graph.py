"""Knowledge graph data model, triple ingestion and structural queries."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _cc


class TripleFormatError(ValueError):
    """Raised for a malformed line in a triple file."""

    def __init__(self, lineno: int, line: str, source: str = "<stream>"):
        self.lineno = lineno
        self.source = source
        super().__init__(f"{source}:{lineno}: expected 'head<TAB>relation<TAB>tail', got {line!r}")


@dataclass
class LabelMaps:
    """Bijective string label <-> dense id maps, ids assigned first-seen."""

    entities: dict[str, int] = field(default_factory=dict)
    relations: dict[str, int] = field(default_factory=dict)

    def entity_id(self, label: str) -> int:
        idx = self.entities.get(label)
        if idx is None:
            idx = self.entities[label] = len(self.entities)
        return idx

    def relation_id(self, label: str) -> int:
        idx = self.relations.get(label)
        if idx is None:
            idx = self.relations[label] = len(self.relations)
        return idx

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def entity_labels(self) -> list[str]:
        return list(self.entities)

    def relation_labels(self) -> list[str]:
        return list(self.relations)

    def copy(self) -> "LabelMaps":
        return LabelMaps(dict(self.entities), dict(self.relations))


def parse_triples(
    stream: TextIO | Iterable[str],
    labels: LabelMaps | None = None,
    source: str = "<stream>",
) -> tuple[np.ndarray, LabelMaps]:
    """Parse tab-separated triples into an ``(n, 3)`` int64 array of ids.

    Blank lines and lines starting with ``#`` are skipped. When ``labels`` is
    given it is extended in place; existing ids are never reassigned.
    """
    if labels is None:
        labels = LabelMaps()
    rows: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(parts):
            raise TripleFormatError(lineno, line, source)
        h, r, t = parts
        rows.append((labels.entity_id(h), labels.relation_id(r), labels.entity_id(t)))
    triples = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return triples, labels


def read_triples(path: str | Path, labels: LabelMaps | None = None) -> tuple[np.ndarray, LabelMaps]:
    with open(path, encoding="utf-8") as fh:
        return parse_triples(fh, labels, source=str(path))


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable multigraph with inverse edges materialized in CSR form.

    Relation ``r + num_direct_relations`` is the inverse of relation ``r``.
    ``indptr``/``rel``/``nbr`` form the out-adjacency of every entity,
    inverse edges included.
    """

    num_entities: int
    num_direct_relations: int
    direct_triples: np.ndarray
    indptr: np.ndarray
    rel: np.ndarray
    nbr: np.ndarray
    # per-entity sorted unique outgoing relation types, CSR over the same ids
    rel_indptr: np.ndarray
    rel_types: np.ndarray
    labels: LabelMaps | None = None

    @property
    def num_total_relations(self) -> int:
        return 2 * self.num_direct_relations

    @property
    def num_adjacency_entries(self) -> int:
        return int(self.indptr[-1])

    def degree(self) -> np.ndarray:
        """Out-degree counting inverse edges (equals total degree)."""
        return np.diff(self.indptr)

    def neighbors(self, node: int) -> list[tuple[int, int]]:
        """``(relation, tail)`` pairs on the out-adjacency of ``node``."""
        self._check_node(node)
        lo, hi = self.indptr[node], self.indptr[node + 1]
        return list(zip(self.rel[lo:hi].tolist(), self.nbr[lo:hi].tolist()))

    def triple_set(self) -> set[tuple[int, int, int]]:
        return {tuple(t) for t in self.direct_triples.tolist()}

    def _check_node(self, node: int) -> None:
        if not 0 <= node < self.num_entities:
            raise IndexError(f"node {node} out of range [0, {self.num_entities})")


def _csr(src: np.ndarray, cols: list[np.ndarray], n: int) -> tuple[np.ndarray, list[np.ndarray]]:
    order = np.argsort(src, kind="stable")
    counts = np.bincount(src, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, [c[order] for c in cols]


def build_graph(
    direct_triples: np.ndarray | Iterable[tuple[int, int, int]],
    num_entities: int,
    num_direct_relations: int,
    labels: LabelMaps | None = None,
) -> KnowledgeGraph:
    triples = np.asarray(direct_triples, dtype=np.int64).reshape(-1, 3)
    if num_entities < 0 or num_direct_relations < 0:
        raise ValueError("entity and relation counts must be non-negative")
    if len(triples):
        h, r, t = triples.T
        if h.min() < 0 or t.min() < 0 or max(h.max(), t.max()) >= num_entities:
            raise ValueError(f"entity id out of bounds for {num_entities} entities")
        if r.min() < 0 or r.max() >= num_direct_relations:
            raise ValueError(f"relation id out of bounds for {num_direct_relations} relations")
    else:
        h = r = t = np.zeros(0, dtype=np.int64)

    src = np.concatenate([h, t])
    rels = np.concatenate([r, r + num_direct_relations])
    dst = np.concatenate([t, h])
    # stable sort keeps direct edges before inverse ones within a node, in input order
    indptr, (rel_sorted, nbr_sorted) = _csr(src, [rels, dst], num_entities)

    pairs = np.unique(src * max(2 * num_direct_relations, 1) + rels) if len(src) else np.zeros(0, np.int64)
    width = max(2 * num_direct_relations, 1)
    rel_src = pairs // width
    rel_indptr, (rel_types,) = _csr(rel_src, [pairs % width], num_entities)

    return KnowledgeGraph(
        num_entities=num_entities,
        num_direct_relations=num_direct_relations,
        direct_triples=triples,
        indptr=indptr,
        rel=rel_sorted.astype(np.int64),
        nbr=nbr_sorted.astype(np.int64),
        rel_indptr=rel_indptr,
        rel_types=rel_types.astype(np.int64),
        labels=labels,
    )


def out_relation_types(graph: KnowledgeGraph, node: int) -> set[int]:
    graph._check_node(node)
    lo, hi = graph.rel_indptr[node], graph.rel_indptr[node + 1]
    return set(graph.rel_types[lo:hi].tolist())


def adjacency_matrix(graph: KnowledgeGraph) -> csr_matrix:
    """Unweighted entity adjacency (duplicates summed) in scipy CSR form."""
    n = graph.num_entities
    data = np.ones(len(graph.nbr), dtype=np.float64)
    return csr_matrix((data, graph.nbr, graph.indptr), shape=(n, n))


def connected_components(graph: KnowledgeGraph) -> np.ndarray:
    """Component id per node, components numbered by their smallest member."""
    n = graph.num_entities
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    _, raw = _cc(adjacency_matrix(graph), directed=False)
    first = np.full(raw.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, raw, np.arange(n))
    # rank components by smallest member id -> labels 0..c-1
    relabel = np.empty_like(first)
    relabel[np.argsort(first, kind="stable")] = np.arange(len(first))
    return relabel[raw]


@dataclass
class DatasetSplits:
    """Train/valid/test triples over one shared id space."""

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    labels: LabelMaps

    @property
    def num_entities(self) -> int:
        return self.labels.num_entities

    @property
    def num_relations(self) -> int:
        return self.labels.num_relations

    def train_graph(self) -> KnowledgeGraph:
        return build_graph(self.train, self.num_entities, self.num_relations, self.labels)

    def known_triples(self) -> set[tuple[int, int, int]]:
        """Deduplicated union of all splits, used as the ranking filter."""
        out: set[tuple[int, int, int]] = set()
        for part in (self.train, self.valid, self.test):
            out.update(map(tuple, part.tolist()))
        return out


def load_splits(train: str | Path, valid: str | Path, test: str | Path) -> DatasetSplits:
    labels = LabelMaps()
    tr, labels = read_triples(train, labels)
    va, labels = read_triples(valid, labels)
    te, labels = read_triples(test, labels)
    return DatasetSplits(tr, va, te, labels)
