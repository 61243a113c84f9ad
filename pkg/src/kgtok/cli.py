"""Command line pipeline: ingest -> select-anchors -> tokenize -> train -> eval.

Each stage reads the previous stage's artifacts from the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .anchors import AnchorSet, SelectionStrategy, select_anchors
from .config import ConfigError, RunConfig, load_config, sub_seed
from .encoder import EncoderConfig, ParameterStore, encode_all, init_parameters, memory_estimate
from .evaluation import EmbeddingScorer, filtered_ranks, out_of_sample_eval, relation_prediction_ranks
from .graph import DatasetSplits, KnowledgeGraph, LabelMaps, build_graph, connected_components, load_splits
from .tokenizer import (NewEdge, NodeHashes, compute_anchor_distances, hash_collision_stats, set_num_threads,
                        tokenize_graph)
from .training import train

log = logging.getLogger("kgtok")

ENTITIES, RELATIONS = "entities.tsv", "relations.tsv"
SPLITS = ("train", "valid", "test")
ANCHORS, HASHES, COLLISIONS = "anchors.tsv", "hashes.txt", "collisions.json"
CHECKPOINT, LOSS_LOG, METRICS = "checkpoint.bin", "loss.csv", "metrics.json"


class CommandError(RuntimeError):
    pass


# --- artifacts ---------------------------------------------------------------------

def _write_lines(path: Path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{line}\n" for line in lines)


def _read_labels(out: Path) -> LabelMaps:
    labels = LabelMaps()
    for fname, table in ((ENTITIES, labels.entities), (RELATIONS, labels.relations)):
        with open(_need(out / fname), encoding="utf-8") as fh:
            for line in fh:
                idx, label = line.rstrip("\n").split("\t", 1)
                table[label] = int(idx)
    return labels


def _need(path: Path) -> Path:
    if not path.is_file():
        raise CommandError(f"missing artifact {path}; run the earlier pipeline stage first")
    return path


def load_ingested(out: Path) -> DatasetSplits:
    labels = _read_labels(out)
    parts = []
    for name in SPLITS:
        with open(_need(out / f"{name}.ids"), encoding="utf-8") as fh:
            rows = [line.split("\t") for line in fh if line.strip()]
        parts.append(np.array(rows, dtype=np.int64).reshape(-1, 3))
    return DatasetSplits(*parts, labels)


def _graph(splits: DatasetSplits) -> KnowledgeGraph:
    return build_graph(splits.train, splits.num_entities, splits.num_relations, splits.labels)


def _hashes(out: Path, store: ParameterStore) -> NodeHashes:
    hashes = NodeHashes.load(_need(out / HASHES))
    cfg = store.config
    if (hashes.k, hashes.m, hashes.vocab, hashes.max_distance) != (cfg.k, cfg.m, cfg.vocab, cfg.max_distance):
        raise CommandError(
            f"checkpoint expects k={cfg.k} m={cfg.m} {cfg.vocab} max_distance={cfg.max_distance}, hash file has "
            f"k={hashes.k} m={hashes.m} {hashes.vocab} max_distance={hashes.max_distance}")
    return hashes


def _store(path: Path) -> ParameterStore:
    _need(path)
    _need(path.with_suffix(".json"))
    return ParameterStore.load(path)


# --- commands ------------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> dict:
    cfg.require_files(*SPLITS)
    splits = load_splits(cfg.train, cfg.valid, cfg.test)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_lines(out / ENTITIES, (f"{i}\t{label}" for label, i in splits.labels.entities.items()))
    _write_lines(out / RELATIONS, (f"{i}\t{label}" for label, i in splits.labels.relations.items()))
    for name in SPLITS:
        _write_lines(out / f"{name}.ids", ("\t".join(map(str, row)) for row in getattr(splits, name).tolist()))
    return {"entities": splits.num_entities, "direct_relations": splits.num_relations,
            "total_relations": 2 * splits.num_relations,
            **{name: len(getattr(splits, name)) for name in SPLITS}}


def cmd_select_anchors(cfg: RunConfig) -> dict:
    splits = load_ingested(cfg.out_dir)
    graph = _graph(splits)
    if cfg.num_anchors > graph.num_entities:
        raise CommandError(f"num_anchors={cfg.num_anchors} exceeds {graph.num_entities} entities")
    anchors = select_anchors(graph, SelectionStrategy(kind=cfg.anchor_strategy), cfg.num_anchors,
                             seed=sub_seed(cfg.seed, "anchors"))
    anchors.save(cfg.out_dir / ANCHORS, splits.labels)
    return {"anchors": len(anchors), "provenance": dict(Counter(anchors.provenance))}


def _load_anchors(cfg: RunConfig, splits: DatasetSplits) -> AnchorSet:
    path = cfg.out_dir / ANCHORS
    if cfg.num_anchors == 0 and not path.is_file():
        return AnchorSet(np.zeros(0, dtype=np.int64), ())
    anchors = AnchorSet.load(_need(path), splits.labels)
    if len(anchors) != cfg.num_anchors:
        raise CommandError(f"{path} holds {len(anchors)} anchors but num_anchors={cfg.num_anchors}; rerun select-anchors")
    return anchors


def cmd_tokenize(cfg: RunConfig) -> dict:
    splits = load_ingested(cfg.out_dir)
    graph = _graph(splits)
    anchors = _load_anchors(cfg, splits)
    hashes = tokenize_graph(graph, anchors, cfg.anchors_per_node, cfg.context_size, cfg.tie_policy,
                            seed=sub_seed(cfg.seed, "tokenize"))
    hashes.save(cfg.out_dir / HASHES)
    stats = hash_collision_stats(hashes)
    (cfg.out_dir / COLLISIONS).write_text(json.dumps(stats, indent=2) + "\n")
    return {"nodes": len(hashes), "k": hashes.k, "m": hashes.m, "max_distance": hashes.max_distance,
            "unique_hashes": stats["unique_count"], "collision_rate": stats["collision_rate"]}


def cmd_train(cfg: RunConfig, checkpoint: Path | None = None) -> dict:
    out = cfg.out_dir
    splits = load_ingested(out)
    hashes = NodeHashes.load(_need(out / HASHES))
    enc_cfg = EncoderConfig.for_hashes(hashes, dim=cfg.dim, hidden=cfg.hidden, decoder=cfg.decoder,
                                       seed=sub_seed(cfg.seed, "init"))
    store = init_parameters(enc_cfg)
    result = train(splits.train, hashes, store, cfg.train_config(), known=splits.known_triples())
    checkpoint = checkpoint or out / CHECKPOINT
    store.save(checkpoint, extra={"run_seed": cfg.seed, "epochs": cfg.epochs})
    result.write_csv(out / LOSS_LOG)
    final = result.log[-1][1] if result.log else None
    return {"checkpoint": str(checkpoint), "epochs": cfg.epochs, "final_loss": final,
            "parameters": store.num_parameters()}


def _read_oos(path: Path, labels: LabelMaps) -> dict[str, list[NewEdge]]:
    """Triples with exactly one unknown endpoint, grouped by that endpoint."""
    unseen: dict[str, list[NewEdge]] = {}
    with open(_need(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CommandError(f"{path}:{lineno}: expected 3 tab-separated fields")
            h, r, t = parts
            if r not in labels.relations:
                raise CommandError(f"{path}:{lineno}: unknown relation {r!r}")
            rid = labels.relations[r]
            if h in labels.entities and t not in labels.entities:
                unseen.setdefault(t, []).append(NewEdge(labels.entities[h], rid, outgoing=False))
            elif t in labels.entities and h not in labels.entities:
                unseen.setdefault(h, []).append(NewEdge(labels.entities[t], rid, outgoing=True))
            else:
                raise CommandError(f"{path}:{lineno}: exactly one endpoint must be unseen")
    return unseen


def cmd_eval(cfg: RunConfig, checkpoint: Path | None = None, split: str = "test", task: str = "link",
             oos: Path | None = None, per_query: Path | None = None) -> dict:
    out = cfg.out_dir
    store = _store(checkpoint or out / CHECKPOINT)
    splits = load_ingested(out)
    hashes = _hashes(out, store)
    if len(hashes) != splits.num_entities:
        raise CommandError(f"hash file covers {len(hashes)} nodes, dataset has {splits.num_entities}")
    scorer = EmbeddingScorer.from_store(store, hashes)
    if oos is not None:
        graph = _graph(splits)
        index = compute_anchor_distances(graph, _load_anchors(cfg, splits))
        report = out_of_sample_eval(graph, index, store, _read_oos(oos, splits.labels),
                                    entity_vectors=scorer.entities, tie_policy=cfg.tie_policy,
                                    seed=sub_seed(cfg.seed, "tokenize"))
    elif task == "relation":
        report = relation_prediction_ranks(scorer, getattr(splits, split), splits.known_triples())
    else:
        report = filtered_ranks(scorer, getattr(splits, split), splits.known_triples(), splits.num_entities)
    (out / METRICS).write_text(report.to_json())
    if per_query is not None:
        report.write_queries_csv(per_query)
    return json.loads(report.to_json())


def cmd_stats(cfg: RunConfig) -> dict:
    splits = load_ingested(cfg.out_dir)
    graph = _graph(splits)
    degree = graph.degree()
    comps = connected_components(graph)
    stats = {
        "entities": graph.num_entities,
        "direct_relations": graph.num_direct_relations,
        "total_relations": graph.num_total_relations,
        "train_triples": len(splits.train),
        "components": int(comps.max() + 1) if len(comps) else 0,
        "degree_histogram": {str(d): int(c) for d, c in sorted(Counter(degree.tolist()).items())},
    }
    if (cfg.out_dir / ANCHORS).is_file() or cfg.num_anchors == 0:
        index = compute_anchor_distances(graph, _load_anchors(cfg, splits))
        if index.num_anchors:
            d = index.distances
            nearest = np.where(d < 0, np.iinfo(np.int32).max, d).min(axis=0)
            stats["anchor_distance_histogram"] = _hist(d[d >= 0])
            stats["nearest_anchor_distance_histogram"] = _hist(nearest[nearest < np.iinfo(np.int32).max])
            stats["unreachable_pairs"] = int(np.sum(d < 0))
    vocab = cfg.num_anchors + graph.num_total_relations + 2
    stats["memory_estimate"] = {
        "vocabulary": {"rows": vocab, "dim": cfg.dim, **memory_estimate(vocab, cfg.dim)},
        "shallow": {"rows": graph.num_entities, "dim": cfg.dim, **memory_estimate(graph.num_entities, cfg.dim)},
    }
    return stats


def _hist(values: np.ndarray) -> dict[str, int]:
    vals, counts = np.unique(values, return_counts=True)
    return {str(int(v)): int(c) for v, c in zip(vals, counts)}


def cmd_export_embeddings(cfg: RunConfig, checkpoint: Path | None = None, dest: Path | None = None) -> dict:
    out = cfg.out_dir
    store = _store(checkpoint or out / CHECKPOINT)
    hashes = _hashes(out, store)
    labels = _read_labels(out).entity_labels()
    if len(labels) != len(hashes):
        raise CommandError(f"{len(labels)} entity labels but {len(hashes)} hashes")
    vectors = encode_all(store, hashes)
    dest = dest or out / "embeddings.tsv"
    _write_lines(dest, (label + "\t" + " ".join(f"{x:.6g}" for x in row) for label, row in zip(labels, vectors.tolist())))
    return {"embeddings": str(dest), "rows": len(labels), "dim": vectors.shape[1]}


# --- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads (1 = deterministic)")
    common.add_argument("--out", type=str, help="output directory (overrides config 'out')")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kgtok", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    ingest = sub.add_parser("ingest", parents=[common], help="parse train/valid/test triple files")
    for name in SPLITS:
        ingest.add_argument(f"--{name}", type=str, help=f"{name} triples (overrides config)")
    sub.add_parser("select-anchors", parents=[common], help="pick the anchor vocabulary")
    sub.add_parser("tokenize", parents=[common], help="hash every node")
    tr = sub.add_parser("train", parents=[common], help="train encoder and decoder")
    tr.add_argument("--checkpoint", type=Path)
    ev = sub.add_parser("eval", parents=[common], help="filtered ranking metrics")
    ev.add_argument("--checkpoint", type=Path)
    ev.add_argument("--split", choices=("valid", "test"), default="test")
    ev.add_argument("--task", choices=("link", "relation"), default="link")
    ev.add_argument("--oos", type=Path, help="out-of-sample triples (one endpoint unseen)")
    ev.add_argument("--per-query", type=Path, help="write per-query ranks as CSV")
    sub.add_parser("stats", parents=[common], help="graph, anchor and memory statistics")
    ex = sub.add_parser("export-embeddings", parents=[common], help="entity encodings as TSV")
    ex.add_argument("--checkpoint", type=Path)
    ex.add_argument("--dest", type=Path)
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {"seed": args.seed, "out": args.out}
    for name in SPLITS:
        overrides[name] = getattr(args, name, None)
    return cfg.with_overrides(**overrides)


def run(argv: list[str] | None = None) -> dict:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg = _resolve_config(args)
    set_num_threads(args.threads)
    with threadpool_limits(limits=args.threads):
        match args.command:
            case "ingest":
                return cmd_ingest(cfg)
            case "select-anchors":
                return cmd_select_anchors(cfg)
            case "tokenize":
                return cmd_tokenize(cfg)
            case "train":
                return cmd_train(cfg, args.checkpoint)
            case "eval":
                return cmd_eval(cfg, args.checkpoint, args.split, args.task, args.oos, args.per_query)
            case "stats":
                return cmd_stats(cfg)
            case "export-embeddings":
                return cmd_export_embeddings(cfg, args.checkpoint, args.dest)
    raise AssertionError(args.command)


def main(argv: list[str] | None = None) -> int:
    try:
        result = run(argv)
    except (ConfigError, CommandError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
