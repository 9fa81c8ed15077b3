"""Softmax head, categorical cross-entropy and the L2 weight penalty."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError

PROB_CLAMP = 1e-12


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, k):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ConfigError(f"labels outside 0..{k - 1}")
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _check_one_hot(y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
        raise ConfigError("label rows must be one-hot")
    return y


def cce_loss(probs, labels):
    """Batch mean of ``-sum_k y_k log p_k`` with probabilities clamped to
    ``[1e-12, 1 - 1e-12]``."""
    y = _check_one_hot(labels)
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    if p.shape != y.shape:
        raise ConfigError(f"probabilities {p.shape} and labels {y.shape} differ in shape")
    return float(-np.sum(y * np.log(p)) / len(y))


def softmax_cce_grad(probs, labels):
    """Gradient of the mean CCE w.r.t. the logits feeding the softmax."""
    y = _check_one_hot(labels)
    return (np.asarray(probs) - y) / len(y)


def l2_penalty(weights, lam):
    """``lam * sum ||w||^2`` and the matching per-array gradients ``2 lam w``."""
    total = 0.0
    grads = []
    for w in weights:
        total += float(np.sum(w * w))
        grads.append(2.0 * lam * w)
    return lam * total, grads
