"""Triple scoring functions over encoded entity vectors.

Each decoder scores batches of aligned ``(h, r, t)`` rows, backpropagates a
per-score gradient, and scores one side against every candidate entity for
ranking.
"""

from __future__ import annotations

import numpy as np


class RotatE:
    """Score ``-|h * e^{i theta} - t|`` with real/imaginary halves of the vectors."""

    name = "rotate"

    @staticmethod
    def _split(x):
        half = x.shape[-1] // 2
        return x[..., :half], x[..., half:]

    def _check(self, h, theta):
        if h.shape[-1] % 2:
            raise ValueError("rotate needs an even entity dimension")
        if theta.shape[-1] * 2 != h.shape[-1]:
            raise ValueError(f"phase width {theta.shape[-1]} != half entity dim {h.shape[-1] // 2}")

    def _rotate(self, h, theta):
        re, im = self._split(h)
        c, s = np.cos(theta), np.sin(theta)
        return np.concatenate([re * c - im * s, re * s + im * c], axis=-1)

    def score(self, h: np.ndarray, theta: np.ndarray, t: np.ndarray) -> np.ndarray:
        self._check(h, theta)
        diff = self._rotate(h, theta) - t
        return -np.sqrt(np.sum(diff * diff, axis=-1))

    def backward(self, h, theta, t, grad_score):
        """Gradients wrt ``h``, ``theta`` and ``t`` for upstream ``grad_score``."""
        re, im = self._split(h)
        c, s = np.cos(theta), np.sin(theta)
        dre = re * c - im * s - t[..., : re.shape[-1]]
        dim = re * s + im * c - t[..., re.shape[-1]:]
        norm = np.sqrt(np.sum(dre * dre + dim * dim, axis=-1, keepdims=True))
        # d(-norm)/d(diff) = -diff / norm; undefined at 0, taken as 0 there
        w = -grad_score[..., None] / np.maximum(norm, 1e-12)
        gre, gim = w * dre, w * dim
        g_h = np.concatenate([gre * c + gim * s, -gre * s + gim * c], axis=-1)
        g_t = -np.concatenate([gre, gim], axis=-1)
        g_theta = gre * (-re * s - im * c) + gim * (re * c - im * s)
        return g_h, g_theta, g_t

    def score_tails(self, h: np.ndarray, theta: np.ndarray, entities: np.ndarray) -> np.ndarray:
        """``(Q, N)`` scores of every entity as tail of ``(h_q, r_q, ?)``."""
        return -_pairwise_l2(self._rotate(h, theta), entities)

    def score_heads(self, theta: np.ndarray, t: np.ndarray, entities: np.ndarray) -> np.ndarray:
        # rotation is an isometry: |c * r - t| = |c - t * conj(r)|
        return -_pairwise_l2(self._rotate(t, -theta), entities)


class DistMult:
    """Trilinear score ``sum_i h_i r_i t_i``."""

    name = "distmult"

    def score(self, h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        if not h.shape[-1] == r.shape[-1] == t.shape[-1]:
            raise ValueError("distmult needs equal head, relation and tail widths")
        # (h * t) * r: elementwise products commute exactly, so swapping h and t is bit-identical
        return np.sum(h * t * r, axis=-1)

    def backward(self, h, r, t, grad_score):
        g = grad_score[..., None]
        return g * r * t, g * h * t, g * h * r

    def score_tails(self, h, r, entities):
        return (h * r) @ entities.T

    def score_heads(self, r, t, entities):
        return (t * r) @ entities.T


def _pairwise_l2(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.empty((len(x), len(y)), dtype=np.result_type(x, y))
    # explicit differences rather than the |x|^2 - 2xy + |y|^2 expansion: exact ties stay exact
    for i in range(len(x)):
        d = y - x[i]
        out[i] = np.sqrt(np.einsum("ij,ij->i", d, d))
    return out


def make_decoder(name: str):
    if name == "rotate":
        return RotatE()
    if name == "distmult":
        return DistMult()
    raise ValueError(f"unknown decoder {name!r}")


def rotate_score(h, phase, t) -> float:
    h, phase, t = (np.asarray(x, dtype=np.float64) for x in (h, phase, t))
    return float(RotatE().score(h, phase, t))


def distmult_score(h, r, t) -> float:
    h, r, t = (np.asarray(x, dtype=np.float64) for x in (h, r, t))
    return float(DistMult().score(h, r, t))
