"""Link-prediction losses returning the scalar loss and its score gradients."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_expit, softmax


def nssal_loss(pos: np.ndarray, neg: np.ndarray, margin: float, temperature: float):
    """Self-adversarial negative-sampling loss, averaged over positives.

    ``pos`` is ``(B,)``, ``neg`` is ``(B, n)``. Negative weights
    ``softmax(temperature * neg)`` are treated as constants.
    Returns ``(loss, d_pos, d_neg)``.
    """
    pos = np.asarray(pos)
    neg = np.asarray(neg)
    if neg.ndim != 2 or neg.shape[1] < 1 or neg.shape[0] != pos.shape[0]:
        raise ValueError(f"need (B,) positives and (B, n>=1) negatives, got {pos.shape} and {neg.shape}")
    b = len(pos)
    weights = softmax(temperature * neg, axis=1)
    per_pos = -log_expit(margin + pos)
    per_neg = -(weights * log_expit(-neg - margin)).sum(axis=1)
    loss = float((per_pos + per_neg).mean())
    d_pos = -expit(-(margin + pos)) / b
    d_neg = weights * expit(neg + margin) / b
    return loss, d_pos, d_neg


def bce_loss_smoothed(pos: np.ndarray, neg: np.ndarray, smoothing: float):
    """Sigmoid cross-entropy, targets ``1 - smoothing`` / ``smoothing``, mean over all terms."""
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"label smoothing must be in [0, 1), got {smoothing}")
    pos = np.asarray(pos)
    neg = np.asarray(neg)
    count = pos.size + neg.size

    def term(logits, target):
        # softplus(z) - y z == -(y log s(z) + (1 - y) log(1 - s(z)))
        loss = np.logaddexp(0.0, logits) - target * logits
        return loss.sum(), (expit(logits) - target) / count

    lp, d_pos = term(pos, 1.0 - smoothing)
    ln, d_neg = term(neg, smoothing)
    return float((lp + ln) / count), d_pos, d_neg
