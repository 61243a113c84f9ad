"""Mini-batch training of the hash encoder and decoder relations."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .decoders import make_decoder
from .encoder import ParameterStore, backward, encode
from .losses import bce_loss_smoothed, nssal_loss
from .optim import Adam
from .tokenizer import NodeHashes

log = logging.getLogger(__name__)

LOSSES = ("nssal", "bce")
MAX_FILTER_ATTEMPTS = 20


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "nssal"
    margin: float = 9.0
    adv_temperature: float = 1.0
    num_negatives: int = 16
    label_smoothing: float = 0.0
    dropout: float = 0.1
    lr: float = 5e-4
    batch_size: int = 512
    epochs: int = 10
    seed: int = 0
    filter_negatives: bool = False

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.loss == "nssal" and self.margin <= 0:
            raise ValueError("nssal margin must be positive")
        if self.num_negatives < 1:
            raise ValueError("need at least one negative per positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0:
            raise ValueError("batch_size >= 1, epochs >= 0 and lr >= 0 required")


def sample_negatives(
    batch: np.ndarray,
    num_entities: int,
    num_negatives: int,
    rng: np.random.Generator | int,
    mode: str = "both",
    known: set[tuple[int, int, int]] | None = None,
) -> np.ndarray:
    """Corrupt head or tail of each triple with a uniform entity -> ``(B, n, 3)``.

    ``mode='both'`` flips a fair coin per corruption. With ``known``, a corruption
    that is a known triple is redrawn up to 20 times and then kept as is.
    """
    if num_negatives < 1:
        raise ValueError("num_negatives must be >= 1")
    if mode not in ("both", "head", "tail"):
        raise ValueError(f"unknown corruption mode {mode!r}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    b = len(batch)
    neg = np.repeat(batch[:, None, :], num_negatives, axis=1)
    if mode == "both":
        col = np.where(rng.random((b, num_negatives)) < 0.5, 0, 2)
    else:
        col = np.full((b, num_negatives), 0 if mode == "head" else 2)
    neg[np.arange(b)[:, None], np.arange(num_negatives)[None, :], col] = rng.integers(0, num_entities, (b, num_negatives))
    if known:
        for i in range(b):
            for j in range(num_negatives):
                c = col[i, j]
                for _ in range(MAX_FILTER_ATTEMPTS):
                    if tuple(neg[i, j].tolist()) not in known:
                        break
                    neg[i, j, c] = rng.integers(0, num_entities)
    return neg


def batch_loss(
    store: ParameterStore,
    decoder,
    hashes: NodeHashes,
    pos: np.ndarray,
    neg: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> float:
    """Loss of one batch; gradients of every parameter accumulate into ``store.grads``."""
    ids, inv = np.unique(np.concatenate([pos[:, [0, 2]].ravel(), neg[..., [0, 2]].ravel()]), return_inverse=True)
    nb = 2 * len(pos)
    pos_idx = inv[:nb].reshape(-1, 2)
    neg_idx = inv[nb:].reshape(neg.shape[0], neg.shape[1], 2)

    enc = encode(store, *hashes.select(ids), dropout=cfg.dropout, train=True, rng=rng)
    ent = enc.vectors
    rel = store.params["relations"]

    h, r, t = ent[pos_idx[:, 0]], rel[pos[:, 1]], ent[pos_idx[:, 1]]
    nh, nr, nt = ent[neg_idx[..., 0]], rel[neg[..., 1]], ent[neg_idx[..., 1]]
    s_pos = decoder.score(h, r, t)
    s_neg = decoder.score(nh, nr, nt)

    if cfg.loss == "nssal":
        loss, d_pos, d_neg = nssal_loss(s_pos, s_neg, cfg.margin, cfg.adv_temperature)
    else:
        loss, d_pos, d_neg = bce_loss_smoothed(s_pos, s_neg, cfg.label_smoothing)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    gh, gr, gt = decoder.backward(h, r, t, d_pos)
    gnh, gnr, gnt = decoder.backward(nh, nr, nt, d_neg)
    g_ent = np.zeros_like(ent)
    np.add.at(g_ent, pos_idx[:, 0], gh)
    np.add.at(g_ent, pos_idx[:, 1], gt)
    np.add.at(g_ent, neg_idx[..., 0].ravel(), gnh.reshape(-1, ent.shape[1]))
    np.add.at(g_ent, neg_idx[..., 1].ravel(), gnt.reshape(-1, ent.shape[1]))
    g_rel = store.grads["relations"]
    np.add.at(g_rel, pos[:, 1], gr)
    np.add.at(g_rel, neg[..., 1].ravel(), gnr.reshape(-1, rel.shape[1]))
    backward(store, enc, g_ent)
    return loss


@dataclass
class TrainResult:
    store: ParameterStore
    log: list[tuple[int, float, float]] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss,wall_seconds\n")
            for epoch, loss, wall in self.log:
                fh.write(f"{epoch},{loss:.8f},{wall:.3f}\n")


def train(
    triples: np.ndarray,
    hashes: NodeHashes,
    store: ParameterStore,
    cfg: TrainConfig,
    decoder=None,
    known: set[tuple[int, int, int]] | None = None,
    callback=None,
) -> TrainResult:
    """Train ``store`` in place on ``triples``; deterministic for a fixed seed."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(hashes) == 0 or store.config.k != hashes.k or store.config.m != hashes.m:
        raise ValueError("hashes do not match the parameter store's (k, m)")
    if store.config.vocab != hashes.vocab:
        raise ValueError(f"hash vocabulary {hashes.vocab} != store vocabulary {store.config.vocab}")
    decoder = decoder or make_decoder(store.config.decoder)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(lr=cfg.lr)
    result = TrainResult(store)
    num_entities = len(hashes)
    filt = known if cfg.filter_negatives else None
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(triples))
        total, batches = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            pos = triples[order[lo: lo + cfg.batch_size]]
            neg = sample_negatives(pos, num_entities, cfg.num_negatives, rng, known=filt)
            try:
                loss = batch_loss(store, decoder, hashes, pos, neg, cfg, rng)
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch}, batch starting at {lo}: {exc}") from exc
            opt.step(store.params, store.grads)
            total += loss
            batches += 1
        mean = total / max(batches, 1)
        result.log.append((epoch, mean, time.perf_counter() - start))
        log.debug("epoch %d loss %.5f", epoch, mean)
        if callback is not None:
            callback(epoch, mean)
    return result
