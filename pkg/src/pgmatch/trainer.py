"""Weighted mini-batch SGD and the newbob learning-rate schedule."""
from dataclasses import dataclass

import numpy as np

from . import model


class TrainingError(RuntimeError):
    pass


def epoch_order(n, seed, epoch):
    return np.random.default_rng([seed, 4, epoch]).permutation(n)


def _step(params, vec, grad, lr, where):
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient in {where}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = vec - lr * grad
    if not np.all(np.isfinite(out)):
        raise TrainingError(f"non-finite parameters after {where}")
    return out


def weighted_epoch(params, X, y, ids, weights, batch_size, lr, seed, epoch=0):
    """One pass of weighted SGD over ``ids``.

    Each mini-batch step descends the weighted mean loss
    ``sum(w_i * nll_i) / sum(w_i)``.  Zero-weight instances are dropped
    before shuffling.
    """
    ids = np.asarray(ids, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if ids.shape != weights.shape:
        raise TrainingError("ids and weights differ in length")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise TrainingError("weights must be nonnegative and not all zero")
    keep = weights > 0
    ids, weights = ids[keep], weights[keep]
    order = epoch_order(len(ids), seed, epoch)
    ids, weights = ids[order], weights[order]
    vec = params.flat()
    for b, lo in enumerate(range(0, len(ids), batch_size)):
        sl = slice(lo, lo + batch_size)
        w = weights[sl]
        g = model.weighted_full_grad(params, X[ids[sl]], y[ids[sl]], w) / w.sum()
        vec = _step(params, vec, g, lr, f"epoch {epoch} batch {b}")
        params = params.with_flat(vec)
    return params


def sgd_epoch(params, X, y, ids, batch_size, lr, seed, epoch=0):
    """Plain (unweighted) mini-batch SGD with the same shuffling as :func:`weighted_epoch`."""
    ids = np.asarray(ids, dtype=np.int64)
    ids = ids[epoch_order(len(ids), seed, epoch)]
    vec = params.flat()
    for b, lo in enumerate(range(0, len(ids), batch_size)):
        idx = ids[lo:lo + batch_size]
        g = model.full_grad(params, X[idx], y[idx])
        vec = _step(params, vec, g, lr, f"epoch {epoch} batch {b}")
        params = params.with_flat(vec)
    return params


@dataclass(frozen=True)
class LrState:
    current_lr: float
    best_val_loss: float = np.inf
    anneal_factor: float = 0.8
    anneal_threshold: float = 0.0025


def maybe_anneal(state, new_val_loss):
    """Newbob: shrink the rate when relative validation improvement is small."""
    best = state.best_val_loss
    lr = state.current_lr
    if np.isfinite(best):
        rel = (best - new_val_loss) / max(abs(best), 1e-12)
        if rel < state.anneal_threshold:
            lr *= state.anneal_factor
    return LrState(lr, min(best, new_val_loss), state.anneal_factor, state.anneal_threshold)


def evaluate(params, ds):
    """(mean NLL, classification error rate) on a dataset."""
    z = model.logits(params, ds.X)
    nll = -model.log_softmax(z)[np.arange(len(ds)), ds.y]
    err = float(np.mean(np.argmax(z, axis=1) != ds.y))
    return float(nll.mean()), err
