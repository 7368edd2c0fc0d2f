"""Numeric hot loops: logistic-regression training, mask tallying, bootstrap.

Each kernel has a pure-numpy implementation and an optional numba ``@njit``
version. Selection happens once at import time from the ``XAIQA_NUMBA``
environment variable:

    XAIQA_NUMBA=0   force the numpy path
    XAIQA_NUMBA=1   require numba (ImportError if it is missing)
    unset           use numba when importable, numpy otherwise

All randomness (epoch permutations, mask draws, resample indices) is drawn
by callers from seeded numpy generators and passed in as arrays, so both
backends are deterministic for a given seed. The two backends agree to
floating-point accumulation order; see tests for the tolerance contract.

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FLAG = os.environ.get("XAIQA_NUMBA", "").strip().lower()

if _FLAG in {"0", "false", "off", "no"}:
    _HAS_NUMBA = False
elif _FLAG in {"1", "true", "on", "yes"}:
    from numba import njit  # noqa: F401  (hard requirement when forced)

    _HAS_NUMBA = True
else:
    try:
        from numba import njit

        _HAS_NUMBA = True
    except ImportError:
        _HAS_NUMBA = False


def backend() -> str:
    """Name of the active kernel backend: 'numba' or 'numpy'."""
    return "numba" if _HAS_NUMBA else "numpy"


# -- logistic regression ----------------------------------------------------
#
# Per-label logistic regression over a shared feature matrix, mini-batch
# gradient descent with L2 weight decay on the weights (bias undecayed).
# Reported loss: mean binary cross-entropy over (docs, labels) plus
# (l2/2) * mean over labels of ||w_j||^2.
#
# Epoch-level backtracking keeps the full-set loss non-increasing (within
# 1e-6): when an epoch raises the loss, the step size is halved and the
# epoch redone from its starting weights. Halving is deterministic, so
# training stays a pure function of (inputs, seed-drawn order).

_LOSS_TOLERANCE = 1e-6
_MAX_HALVINGS = 200


def _fit_logistic_np(X, Y, order, batch_size, lr, l2):
    n, n_feat = X.shape
    n_labels = Y.shape[1]
    wt = np.zeros((n_feat, n_labels))
    bias = np.zeros(n_labels)
    epochs = order.shape[0]
    losses = np.zeros(epochs)
    prev_loss = _logistic_loss_np(X, Y, wt, bias, l2)
    for e in range(epochs):
        for _ in range(_MAX_HALVINGS):
            wt_try = wt.copy()
            bias_try = bias.copy()
            for start in range(0, n, batch_size):
                rows = order[e, start : start + batch_size]
                xb = X[rows]
                z = xb @ wt_try + bias_try
                if not np.isfinite(z).all():
                    return wt, bias, losses, e, start // batch_size
                p = _sigmoid_np(z)
                g = (p - Y[rows]) / rows.shape[0]
                wt_try -= lr * (xb.T @ g + l2 * wt_try)
                bias_try -= lr * g.sum(axis=0)
            new_loss = _logistic_loss_np(X, Y, wt_try, bias_try, l2)
            if new_loss <= prev_loss + _LOSS_TOLERANCE:
                break
            lr *= 0.5
        wt, bias, prev_loss = wt_try, bias_try, new_loss
        losses[e] = new_loss
    return wt, bias, losses, -1, -1


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logistic_loss_np(X, Y, wt, bias, l2):
    z = X @ wt + bias
    bce = np.maximum(z, 0.0) - Y * z + np.log1p(np.exp(-np.abs(z)))
    return bce.mean() + 0.5 * l2 * (wt * wt).sum() / Y.shape[1]


# -- masked-sampling tally ---------------------------------------------------


def _msp_tally_np(masks, probs):
    m = masks.astype(np.float64)
    u = 1.0 - m
    sums_masked = m.T @ probs
    sums_unmasked = u.T @ probs
    n_masked = masks.sum(axis=0).astype(np.int64)
    n_unmasked = masks.shape[0] - n_masked
    return sums_masked, sums_unmasked, n_masked, n_unmasked


# -- bootstrap resample means -------------------------------------------------


def _bootstrap_means_np(values, idx):
    return values[idx].mean(axis=1)


if _HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _loss_nb(X, Y, wt, bias, l2):  # pragma: no cover - mirrored by numpy path
        n, n_feat = X.shape
        n_labels = Y.shape[1]
        total = 0.0
        for i in range(n):
            for j in range(n_labels):
                z = bias[j]
                for f in range(n_feat):
                    z += X[i, f] * wt[f, j]
                hi = z if z > 0.0 else 0.0
                total += hi - Y[i, j] * z + math.log1p(math.exp(-abs(z)))
        reg = 0.0
        for j in range(n_labels):
            for f in range(n_feat):
                reg += wt[f, j] * wt[f, j]
        return total / (n * n_labels) + 0.5 * l2 * reg / n_labels

    @njit(cache=True, nogil=True)
    def _fit_logistic_nb(X, Y, order, batch_size, lr, l2):  # pragma: no cover - mirrored by numpy path
        n, n_feat = X.shape
        n_labels = Y.shape[1]
        wt = np.zeros((n_feat, n_labels))
        bias = np.zeros(n_labels)
        epochs = order.shape[0]
        losses = np.zeros(epochs)
        prev_loss = _loss_nb(X, Y, wt, bias, l2)
        for e in range(epochs):
            wt_try = wt.copy()
            bias_try = bias.copy()
            new_loss = prev_loss
            for _ in range(_MAX_HALVINGS):
                wt_try[:, :] = wt
                bias_try[:] = bias
                for start in range(0, n, batch_size):
                    stop = min(start + batch_size, n)
                    nb = stop - start
                    grad = np.zeros((n_feat, n_labels))
                    gb = np.zeros(n_labels)
                    for r in range(start, stop):
                        i = order[e, r]
                        for j in range(n_labels):
                            z = bias_try[j]
                            for f in range(n_feat):
                                z += X[i, f] * wt_try[f, j]
                            if not math.isfinite(z):
                                return wt, bias, losses, e, start // batch_size
                            if z >= 0.0:
                                p = 1.0 / (1.0 + math.exp(-z))
                            else:
                                ez = math.exp(z)
                                p = ez / (1.0 + ez)
                            g = (p - Y[i, j]) / nb
                            gb[j] += g
                            for f in range(n_feat):
                                grad[f, j] += X[i, f] * g
                    for j in range(n_labels):
                        bias_try[j] -= lr * gb[j]
                        for f in range(n_feat):
                            wt_try[f, j] -= lr * (grad[f, j] + l2 * wt_try[f, j])
                new_loss = _loss_nb(X, Y, wt_try, bias_try, l2)
                if new_loss <= prev_loss + _LOSS_TOLERANCE:
                    break
                lr *= 0.5
            wt[:, :] = wt_try
            bias[:] = bias_try
            prev_loss = new_loss
            losses[e] = new_loss
        return wt, bias, losses, -1, -1

    @njit(cache=True, nogil=True)
    def _msp_tally_nb(masks, probs):  # pragma: no cover - mirrored by numpy path
        k, m = masks.shape
        n_labels = probs.shape[1]
        sums_masked = np.zeros((m, n_labels))
        sums_unmasked = np.zeros((m, n_labels))
        n_masked = np.zeros(m, dtype=np.int64)
        n_unmasked = np.zeros(m, dtype=np.int64)
        for it in range(k):
            for s in range(m):
                if masks[it, s]:
                    n_masked[s] += 1
                    for j in range(n_labels):
                        sums_masked[s, j] += probs[it, j]
                else:
                    n_unmasked[s] += 1
                    for j in range(n_labels):
                        sums_unmasked[s, j] += probs[it, j]
        return sums_masked, sums_unmasked, n_masked, n_unmasked

    @njit(cache=True, nogil=True)
    def _bootstrap_means_nb(values, idx):  # pragma: no cover - mirrored by numpy path
        r, n = idx.shape
        means = np.empty(r)
        for i in range(r):
            acc = 0.0
            for j in range(n):
                acc += values[idx[i, j]]
            means[i] = acc / n
        return means


def fit_logistic(X, Y, order, batch_size, lr, l2):
    """Train per-label logistic weights; returns (wt, bias, losses, bad_epoch, bad_batch).

    ``order`` is an (epochs, n) int64 array of pre-drawn row permutations.
    ``bad_epoch``/``bad_batch`` are -1 on success, else the first position
    where a non-finite logit was seen (training stops there).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    order = np.ascontiguousarray(order, dtype=np.int64)
    if _HAS_NUMBA:
        return _fit_logistic_nb(X, Y, order, int(batch_size), float(lr), float(l2))
    return _fit_logistic_np(X, Y, order, int(batch_size), float(lr), float(l2))


def msp_tally(masks, probs):
    """Sum label probabilities per sentence over masked/unmasked iterations.

    masks: (K, m) bool/uint8, True where the sentence was masked.
    probs: (K, L) float64 label probabilities of each perturbed text.
    Returns (sums_masked, sums_unmasked, n_masked, n_unmasked).
    """
    masks = np.ascontiguousarray(masks, dtype=np.uint8)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    if _HAS_NUMBA:
        return _msp_tally_nb(masks, probs)
    return _msp_tally_np(masks, probs)


def bootstrap_means(values, idx):
    """Mean of ``values[idx[i]]`` for each resample row ``i``."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if _HAS_NUMBA:
        return _bootstrap_means_nb(values, idx)
    return _bootstrap_means_np(values, idx)
