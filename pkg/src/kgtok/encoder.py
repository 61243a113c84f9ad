"""Vocabulary/distance embedding tables and the two-layer MLP hash encoder.

Gradients are computed by hand. ``backward`` accumulates into the store's
gradient buffers, which the optimizer consumes and clears.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tokenizer import NodeHash, NodeHashes, Vocabulary

DECODERS = ("rotate", "distmult")
_MAGIC = b"KGTOKCK1"


@dataclass(frozen=True)
class EncoderConfig:
    num_anchors: int
    num_relations: int  # direct + inverse
    k: int
    m: int
    max_distance: int
    dim: int = 32
    hidden: int | None = None
    out_dim: int | None = None
    decoder: str = "distmult"
    seed: int = 0

    def __post_init__(self):
        if self.out_dim is None:
            object.__setattr__(self, "out_dim", self.dim)
        if self.hidden is None:
            object.__setattr__(self, "hidden", 2 * self.out_dim)
        if self.dim <= 0 or self.hidden <= 0 or self.out_dim <= 0:
            raise ValueError("embedding, hidden and output dims must be positive")
        if self.k < 0 or self.m < 0 or self.k + self.m == 0:
            raise ValueError("need at least one hash slot (k + m > 0)")
        if self.max_distance < 0 or self.num_anchors < 0 or self.num_relations < 0:
            raise ValueError("table sizes must be non-negative")
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.decoder == "rotate" and self.out_dim % 2:
            raise ValueError("rotate decoder needs an even output dimension")

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.num_anchors, self.num_relations)

    @property
    def distance_rows(self) -> int:
        return self.max_distance + 2

    @property
    def unreachable_bucket(self) -> int:
        return self.max_distance + 1

    @classmethod
    def for_hashes(cls, hashes: NodeHashes, **kw) -> "EncoderConfig":
        return cls(hashes.vocab.num_anchors, hashes.vocab.num_relations, hashes.k, hashes.m,
                   hashes.max_distance, **kw)


@dataclass
class ParameterStore:
    config: EncoderConfig
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.grads:
            self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    @property
    def dtype(self):
        return self.params["V"].dtype

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore(self.config, {n: p.astype(dtype) for n, p in self.params.items()})

    def copy(self) -> "ParameterStore":
        return ParameterStore(self.config, {n: p.copy() for n, p in self.params.items()},
                              {n: g.copy() for n, g in self.grads.items()})

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(self.params)))
            for name, p in self.params.items():
                raw = name.encode()
                fh.write(struct.pack("<I", len(raw)) + raw)
                fh.write(struct.pack("<I", p.ndim))
                fh.write(struct.pack(f"<{p.ndim}Q", *p.shape))
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
        sidecar = {"encoder": asdict(self.config), **(extra or {})}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path, dtype=np.float32) -> "ParameterStore":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        config = EncoderConfig(**meta["encoder"])
        params: dict[str, np.ndarray] = {}
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise ValueError(f"{path}: not a kgtok checkpoint")
            (count,) = struct.unpack("<I", fh.read(4))
            for _ in range(count):
                (nlen,) = struct.unpack("<I", fh.read(4))
                name = fh.read(nlen).decode()
                (ndim,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
                size = math.prod(shape)
                params[name] = np.frombuffer(fh.read(4 * size), dtype="<f4").reshape(shape).astype(dtype)
        store = cls(config, params)
        expected = _shapes(config)
        for name, shape in expected.items():
            if params.get(name, np.empty(0)).shape != shape:
                raise ValueError(f"{path}: tensor {name} has shape {params.get(name, np.empty(0)).shape}, expected {shape}")
        return store


def _shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    rel_width = cfg.out_dim // 2 if cfg.decoder == "rotate" else cfg.out_dim
    return {
        "V": (cfg.vocab.size, cfg.dim),
        "Z": (cfg.distance_rows, cfg.dim),
        "W1": (cfg.hidden, (cfg.k + cfg.m) * cfg.dim),
        "b1": (cfg.hidden,),
        "W2": (cfg.out_dim, cfg.hidden),
        "b2": (cfg.out_dim,),
        "relations": (cfg.num_relations, rel_width),
    }


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_parameters(config: EncoderConfig, seed: int | None = None, dtype=np.float32) -> ParameterStore:
    """Glorot-uniform tables and weights, zero biases, zero PAD and UNREACHABLE rows."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in _shapes(config).items():
        if name.startswith("b"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif name == "relations" and config.decoder == "rotate":
            params[name] = rng.uniform(-math.pi, math.pi, size=shape).astype(dtype)
        else:
            bound = glorot_bound(shape[1], shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    params["V"][config.vocab.pad] = 0.0
    params["Z"][config.unreachable_bucket] = 0.0
    return ParameterStore(config, params)


# --- forward / backward -----------------------------------------------------------

@dataclass
class EncodedBatch:
    vectors: np.ndarray
    cache: dict | None = None


def _check_tokens(cfg: EncoderConfig, anchors, dists, rels) -> None:
    if anchors.shape[1] != cfg.k or rels.shape[1] != cfg.m or dists.shape != anchors.shape:
        raise ValueError(f"hash shape ({anchors.shape[1]}, {rels.shape[1]}) does not match encoder (k={cfg.k}, m={cfg.m})")
    size = cfg.vocab.size
    for arr in (anchors, rels):
        if arr.size and (arr.min() < 0 or arr.max() >= size):
            raise IndexError(f"token id outside vocabulary of size {size}")
    if dists.size and (dists.min() < 0 or dists.max() > cfg.unreachable_bucket):
        raise IndexError(f"distance bucket outside [0, {cfg.unreachable_bucket}]")


def _vectorize(store: ParameterStore, anchors, dists, rels) -> tuple[np.ndarray, tuple]:
    cfg = store.config
    V, Z = store.params["V"], store.params["Z"]
    pad = cfg.vocab.pad
    a_on = anchors != pad
    z_on = a_on & (dists != cfg.unreachable_bucket)
    r_on = rels != pad
    xa = V[anchors] * a_on[..., None] + Z[dists] * z_on[..., None]
    xr = V[rels] * r_on[..., None]
    return np.concatenate([xa, xr], axis=1), (a_on, z_on, r_on)


def vectorize_hash(store: ParameterStore, node_hash: NodeHash) -> np.ndarray:
    """``(k+m, d)`` matrix: anchor rows add their distance embedding; PAD rows are zero."""
    a = np.array([node_hash.anchors], dtype=np.int64).reshape(1, -1)
    d = np.array([node_hash.distances], dtype=np.int64).reshape(1, -1)
    r = np.array([node_hash.relations], dtype=np.int64).reshape(1, -1)
    _check_tokens(store.config, a, d, r)
    return _vectorize(store, a, d, r)[0][0]


def encode(
    store: ParameterStore,
    anchors: np.ndarray,
    dists: np.ndarray,
    rels: np.ndarray,
    dropout: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> EncodedBatch:
    """``W2 relu(W1 flat(hash) + b1) + b2`` for a batch of hashes.

    Inverted dropout on the hidden layer is active only with ``train=True``;
    the returned batch keeps its activations only in that mode.
    """
    cfg = store.config
    anchors, dists, rels = (np.asarray(x, dtype=np.int64) for x in (anchors, dists, rels))
    _check_tokens(cfg, anchors, dists, rels)
    p = store.params
    x, masks = _vectorize(store, anchors, dists, rels)
    flat = x.reshape(len(x), -1)
    pre = flat @ p["W1"].T + p["b1"]
    hid = np.maximum(pre, 0.0)
    keep = None
    if train and dropout > 0.0:
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = (rng.random(hid.shape) >= dropout).astype(hid.dtype) / (1.0 - dropout)
        hid = hid * keep
    out = hid @ p["W2"].T + p["b2"]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite encoder output")
    cache = None
    if train:
        cache = dict(anchors=anchors, dists=dists, rels=rels, masks=masks, flat=flat, pre=pre, hid=hid, keep=keep)
    return EncodedBatch(out, cache)


def encode_mlp(store: ParameterStore, vectorized: np.ndarray, dropout: float = 0.0,
               train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply the MLP to one already-vectorized ``(k+m, d)`` hash."""
    p = store.params
    flat = np.asarray(vectorized).reshape(-1)
    if flat.shape[0] != p["W1"].shape[1]:
        raise ValueError(f"expected {p['W1'].shape[1]} inputs, got {flat.shape[0]}")
    hid = np.maximum(p["W1"] @ flat + p["b1"], 0.0)
    if train and dropout > 0.0:
        hid = hid * (rng.random(hid.shape) >= dropout) / (1.0 - dropout)
    return p["W2"] @ hid + p["b2"]


def backward(store: ParameterStore, batch: EncodedBatch, grad_out: np.ndarray) -> None:
    """Accumulate d(loss)/d(params) given d(loss)/d(encoded vectors)."""
    if batch.cache is None:
        raise RuntimeError("backward needs a batch encoded with train=True")
    c, p, g = batch.cache, store.params, store.grads
    cfg = store.config
    grad_out = np.asarray(grad_out, dtype=store.dtype)
    if grad_out.shape != batch.vectors.shape:
        raise ValueError(f"gradient shape {grad_out.shape} != output shape {batch.vectors.shape}")

    g["W2"] += grad_out.T @ c["hid"]
    g["b2"] += grad_out.sum(axis=0)
    d_hid = grad_out @ p["W2"]
    if c["keep"] is not None:
        d_hid = d_hid * c["keep"]
    d_pre = d_hid * (c["pre"] > 0)
    g["W1"] += d_pre.T @ c["flat"]
    g["b1"] += d_pre.sum(axis=0)
    d_x = (d_pre @ p["W1"]).reshape(len(grad_out), cfg.k + cfg.m, cfg.dim)

    a_on, z_on, r_on = c["masks"]
    d_anchor, d_rel = d_x[:, : cfg.k], d_x[:, cfg.k:]
    # np.add.at applies updates in index order, so duplicates sum deterministically
    np.add.at(g["V"], c["anchors"][a_on], d_anchor[a_on])
    np.add.at(g["Z"], c["dists"][z_on], d_anchor[z_on])
    np.add.at(g["V"], c["rels"][r_on], d_rel[r_on])
    g["V"][cfg.vocab.pad] = 0.0
    g["Z"][cfg.unreachable_bucket] = 0.0


def encode_all(store: ParameterStore, hashes: NodeHashes, chunk: int = 4096) -> np.ndarray:
    """Eval-mode encodings of every node, ``(N, out_dim)``."""
    out = np.empty((len(hashes), store.config.out_dim), dtype=store.dtype)
    for lo in range(0, len(hashes), chunk):
        idx = np.arange(lo, min(lo + chunk, len(hashes)))
        out[idx] = encode(store, *hashes.select(idx)).vectors
    return out


def memory_estimate(vocab_size: int, dim: int, bytes_per_param: int = 4) -> dict:
    """Embedding-table footprint; GB is 10**9 bytes, GiB is 2**30."""
    n_bytes = vocab_size * dim * bytes_per_param
    return {
        "bytes": n_bytes,
        "gb": n_bytes / 1e9,
        "gib": n_bytes / 2**30,
        "gb_rounded": round(n_bytes / 1e9, 2),
        "gib_rounded": round(n_bytes / 2**30, 2),
    }
