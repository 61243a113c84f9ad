"""Anchor-based tokenization and embedding of knowledge-graph nodes."""

__version__ = "0.1.0"

from .anchors import AnchorSet, SelectionStrategy, combination_capacity, pagerank, select_anchors
from .encoder import EncoderConfig, ParameterStore, encode, init_parameters, memory_estimate
from .evaluation import EmbeddingScorer, aggregate_metrics, filtered_ranks, out_of_sample_eval
from .graph import KnowledgeGraph, LabelMaps, build_graph, connected_components, parse_triples
from .tokenizer import (DistanceIndex, NewEdge, NodeHash, NodeHashes, Vocabulary, compute_anchor_distances,
                        tokenize_graph, tokenize_node, tokenize_out_of_sample)
from .training import TrainConfig, train

__all__ = [
    "AnchorSet", "SelectionStrategy", "combination_capacity", "pagerank", "select_anchors",
    "EncoderConfig", "ParameterStore", "encode", "init_parameters", "memory_estimate",
    "EmbeddingScorer", "aggregate_metrics", "filtered_ranks", "out_of_sample_eval",
    "KnowledgeGraph", "LabelMaps", "build_graph", "connected_components", "parse_triples",
    "DistanceIndex", "NewEdge", "NodeHash", "NodeHashes", "Vocabulary", "compute_anchor_distances",
    "tokenize_graph", "tokenize_node", "tokenize_out_of_sample", "TrainConfig", "train",
]
