"""Anchor selection: random, top-degree, PageRank and mixed strategies."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import KnowledgeGraph, LabelMaps

log = logging.getLogger(__name__)

STRATEGIES = ("random", "degree", "pagerank", "mixed")


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str = "mixed"
    fraction_pagerank: float = 0.4
    fraction_degree: float = 0.4
    fraction_random: float = 0.2
    damping: float = 0.85
    tolerance: float = 1e-8
    max_iters: int = 100

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown anchor strategy {self.kind!r}; expected one of {STRATEGIES}")
        fractions = (self.fraction_pagerank, self.fraction_degree, self.fraction_random)
        if min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"mixed fractions must be non-negative and sum to 1, got {fractions}")


@dataclass(frozen=True)
class AnchorSet:
    """Ordered anchors; position i is vocabulary token i."""

    entities: np.ndarray
    provenance: tuple[str, ...]

    def __post_init__(self):
        if len(np.unique(self.entities)) != len(self.entities):
            raise ValueError("anchor set contains duplicates")
        if len(self.provenance) != len(self.entities):
            raise ValueError("one provenance tag per anchor required")

    def __len__(self) -> int:
        return len(self.entities)

    def save(self, path: str | Path, labels: LabelMaps | None = None) -> None:
        names = labels.entity_labels() if labels is not None else None
        with open(path, "w", encoding="utf-8") as fh:
            for tok, (ent, tag) in enumerate(zip(self.entities.tolist(), self.provenance)):
                fh.write(f"{tok}\t{names[ent] if names else ent}\t{tag}\n")

    @classmethod
    def load(cls, path: str | Path, labels: LabelMaps | None = None) -> "AnchorSet":
        ents, tags = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                tok, label, tag = line.rstrip("\n").split("\t")
                if int(tok) != len(ents):
                    raise ValueError(f"{path}:{lineno}: anchor token ids must be contiguous")
                ents.append(labels.entities[label] if labels is not None else int(label))
                tags.append(tag)
        return cls(np.array(ents, dtype=np.int64), tuple(tags))


@dataclass(frozen=True)
class PageRankResult:
    scores: np.ndarray
    iterations: int
    converged: bool
    delta: float


def pagerank(
    graph: KnowledgeGraph,
    damping: float = 0.85,
    tolerance: float = 1e-8,
    max_iters: int = 100,
) -> PageRankResult:
    """Uniform-teleport PageRank over the adjacency with inverse edges.

    Mass sitting on nodes without out-edges is spread uniformly. Iteration
    stops when the L1 change drops below ``tolerance``.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError(f"damping must be in [0, 1), got {damping}")
    n = graph.num_entities
    if n == 0:
        return PageRankResult(np.zeros(0), 0, True, 0.0)
    deg = graph.degree().astype(np.float64)
    src = np.repeat(np.arange(n), graph.degree())
    dst = graph.nbr
    dangling = deg == 0
    inv_deg = np.divide(1.0, deg, out=np.zeros(n), where=~dangling)

    x = np.full(n, 1.0 / n)
    delta = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        # bincount accumulates in fixed edge order -> reproducible sums
        spread = np.bincount(dst, weights=(x * inv_deg)[src], minlength=n)
        leaked = x[dangling].sum()
        new = damping * (spread + leaked / n) + (1.0 - damping) / n
        new /= new.sum()
        delta = float(np.abs(new - x).sum())
        x = new
        if delta < tolerance:
            return PageRankResult(x, it, True, delta)
    log.info("pagerank stopped after %d iterations, L1 delta %.3g", it, delta)
    return PageRankResult(x, it, False, delta)


def _rank_desc(scores: np.ndarray) -> np.ndarray:
    """Node ids by descending score, ties to the smaller id."""
    return np.lexsort((np.arange(len(scores)), -scores))


def select_anchors(
    graph: KnowledgeGraph,
    strategy: SelectionStrategy | str,
    num_anchors: int,
    seed: int = 0,
) -> AnchorSet:
    if isinstance(strategy, str):
        strategy = SelectionStrategy(kind=strategy)
    n = graph.num_entities
    if num_anchors < 0 or num_anchors > n:
        raise ValueError(f"cannot select {num_anchors} anchors from {n} entities")

    if strategy.kind == "mixed":
        n_ppr = math.floor(strategy.fraction_pagerank * num_anchors + 1e-9)
        n_deg = math.floor(strategy.fraction_degree * num_anchors + 1e-9)
        buckets = [("pagerank", n_ppr), ("degree", n_deg), ("random", num_anchors - n_ppr - n_deg)]
    else:
        buckets = [(strategy.kind, num_anchors)]

    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    tags: list[str] = []
    taken = np.zeros(n, dtype=bool)
    for kind, size in buckets:
        if size == 0:
            continue
        if kind == "pagerank":
            order = _rank_desc(pagerank(graph, strategy.damping, strategy.tolerance, strategy.max_iters).scores)
        elif kind == "degree":
            order = _rank_desc(graph.degree().astype(np.float64))
        else:
            order = rng.permutation(n)
        picked = order[~taken[order]][:size]
        taken[picked] = True
        chosen.extend(picked.tolist())
        tags.extend([kind] * len(picked))
    return AnchorSet(np.array(chosen, dtype=np.int64), tuple(tags))


def combination_capacity(num_anchors: int, k: int, num_nodes: int | None = None) -> tuple[int, bool]:
    """Exact C(num_anchors, k) and whether it reaches ``num_nodes``."""
    if k < 0 or k > num_anchors:
        raise ValueError(f"k={k} must lie in [0, num_anchors={num_anchors}]")
    capacity = math.comb(num_anchors, k)
    return capacity, (num_nodes is None or capacity >= num_nodes)
