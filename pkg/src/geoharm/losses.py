"""Losses with gradients with respect to the network outputs.

Every ``*_grad`` function returns ``(mean loss, dloss/doutputs)`` for a batch.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, log_expit, logsumexp, softmax

LOSS_KINDS = ("ce", "bce", "mse", "assume_negative")


def _check_rows(outputs, targets):
    if len(outputs) != len(targets):
        raise ValueError(f"batch size mismatch: {len(outputs)} outputs vs {len(targets)} targets")
    if len(outputs) == 0:
        raise ValueError("empty batch")


def cross_entropy_grad(logits, labels):
    logits = np.asarray(logits, float)
    labels = np.asarray(labels)
    _check_rows(logits, labels)
    if logits.ndim != 2 or labels.ndim != 1:
        raise ValueError("cross-entropy expects (n, K) logits and (n,) class indices")
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"class index outside [0, {k})")
    rows = np.arange(n)
    loss = np.mean(logsumexp(logits, axis=1) - logits[rows, labels])
    g = softmax(logits, axis=1)
    g[rows, labels] -= 1.0
    return float(loss), g / n


def bce_grad(logits, targets):
    logits = np.asarray(logits, float)
    targets = np.asarray(targets, float)
    _check_rows(logits, targets)
    z = logits.reshape(len(logits), -1)
    if z.shape[1] != 1:
        raise ValueError("binary cross-entropy expects a single logit per sample")
    y = targets.reshape(-1, 1)
    # -[y log s(z) + (1-y) log(1-s(z))], written with log-sigmoid for stability
    loss = -np.mean(y * log_expit(z) + (1 - y) * log_expit(-z))
    g = (expit(z) - y) / len(z)
    return float(loss), g.reshape(logits.shape)


def mse_grad(pred, targets):
    pred = np.asarray(pred, float)
    targets = np.asarray(targets, float)
    if pred.ndim == 2 and targets.ndim == 1 and pred.shape[1] == 1:
        targets = targets[:, None]
    if pred.shape != targets.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from target shape {targets.shape}")
    _check_rows(pred, targets)
    diff = pred - targets
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def assume_negative_loss(pred, positive_class, pred_rand, lambda_pos=1.0):
    """Presence-only loss for one sample from per-class probabilities.

    ``pred`` are probabilities at the observed location, ``pred_rand`` at a
    random location; the observed class is weighted by ``lambda_pos``.
    """
    pred = np.asarray(pred, float)
    pred_rand = np.asarray(pred_rand, float)
    if pred.shape != pred_rand.shape or pred.ndim != 1:
        raise ValueError("pred and pred_rand must be 1-d of equal length")
    for name, p in (("pred", pred), ("pred_rand", pred_rand)):
        if np.any(p <= 0) or np.any(p >= 1):
            raise ValueError(f"{name} must lie strictly inside (0, 1); apply a sigmoid first")
    if not 0 <= positive_class < len(pred):
        raise ValueError(f"positive class {positive_class} out of range")
    pos = np.zeros(len(pred), dtype=bool)
    pos[positive_class] = True
    terms = np.where(pos, lambda_pos * np.log(pred), np.log1p(-pred)) + np.log1p(-pred_rand)
    return float(-np.mean(terms))


def assume_negative_grad(logits, labels, logits_rand, lambda_pos=1.0):
    """Batched assume-negative loss on logits.

    Returns ``(loss, dL/dlogits, dL/dlogits_rand)``; the loss is averaged over
    classes and then over the batch.
    """
    logits = np.asarray(logits, float)
    logits_rand = np.asarray(logits_rand, float)
    labels = np.asarray(labels)
    _check_rows(logits, labels)
    n, k = logits.shape
    rows = np.arange(n)
    pos = np.zeros_like(logits, dtype=bool)
    pos[rows, labels] = True
    # log s(z) = log_expit(z); log(1 - s(z)) = log_expit(-z)
    terms = np.where(pos, lambda_pos * log_expit(logits), log_expit(-logits)) + log_expit(-logits_rand)
    loss = -terms.sum() / (n * k)
    s = expit(logits)
    g = np.where(pos, -lambda_pos * (1 - s), s) / (n * k)
    g_rand = expit(logits_rand) / (n * k)
    return float(loss), g, g_rand


def loss_value(kind, outputs, targets):
    if kind == "ce":
        return cross_entropy_grad(outputs, targets)[0]
    if kind == "bce":
        return bce_grad(outputs, targets)[0]
    if kind == "mse":
        return mse_grad(outputs, targets)[0]
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_grad(kind, outputs, targets):
    if kind == "ce":
        return cross_entropy_grad(outputs, targets)
    if kind == "bce":
        return bce_grad(outputs, targets)
    if kind == "mse":
        return mse_grad(outputs, targets)
    raise ValueError(f"unknown loss kind {kind!r}")
