"""Pure-numpy training kernels (fallback when the compiled core is absent).

Semantics match ``_ckernels``: softmax cross-entropy with max-subtraction,
mini-batch SGD with an optional proximal pull toward the starting point.
Results agree with the compiled path up to float summation order.
"""

from __future__ import annotations

import numpy as np


def ce_loss(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
) -> float:
    """Mean softmax cross-entropy of the linear model on the given samples."""
    logits = features @ weights.T + bias
    zmax = logits.max(axis=1)
    lse = np.log(np.exp(logits - zmax[:, None]).sum(axis=1)) + zmax
    true = logits[np.arange(logits.shape[0]), labels]
    return float(np.mean(lse - true))


def ce_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of ``ce_loss``: (softmax - onehot) times features."""
    n = features.shape[0]
    logits = features @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(n), labels] -= 1.0
    return (probs.T @ features) / n, probs.mean(axis=0)


def fedprox_sgd(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    perms: np.ndarray,
    batch_size: int,
    lr: float,
    mu: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Mini-batch SGD on cross-entropy plus (mu/2)||w - w_start||^2.

    ``perms`` holds one pre-shuffled index permutation per epoch; batches are
    consecutive chunks of each permutation.  The proximal gradient
    mu*(w - w_start) is applied at every step.  Returns new arrays.
    """
    w = weights.copy()
    b = bias.copy()
    n = features.shape[0]
    for perm in perms:
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            gw, gb = ce_grad(w, b, features[idx], labels[idx])
            if mu != 0.0:
                gw += mu * (w - weights)
                gb += mu * (b - bias)
            w -= lr * gw
            b -= lr * gb
    return w, b
