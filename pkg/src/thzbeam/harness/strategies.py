"""Per-beam classifiers turned into beam selections.

Every learned strategy scores each candidate beam against each class; the
selection assigns one distinct beam to every RF chain (classes 1..n_rf) by
maximizing the summed score over a linear assignment.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import log_softmax

from ..baselines import KnnModel, LinearSvmModel, MlpModel
from ..ensemble import EnsembleModel
from ..neuralnet import ClassifierModel, ImageSet, predict_logits


def class_scores(model, features: np.ndarray, side: int = 32, embedding: str = "outer") -> np.ndarray:
    """(N, n_classes) scores, higher is more likely; argmax equals the model's prediction."""
    x = np.asarray(features, dtype=np.float64)
    if isinstance(model, ClassifierModel):
        return log_softmax(predict_logits(model, ImageSet(np.zeros(len(x)), x, side, embedding)), axis=1)
    if isinstance(model, EnsembleModel):
        votes = model.votes(ImageSet(np.zeros(len(x)), x, side, embedding))
        mass = np.zeros((len(x), model.n_classes))
        for m, c in enumerate(model.weights):
            mass[np.arange(len(x)), votes[:, m]] += c
        return mass
    if isinstance(model, KnnModel):
        # vote fractions of the k neighbours; tie-break matches knn_predict through a tiny class bias
        counts = _knn_counts(model, x)
        return counts / model.k - 1e-9 * np.arange(model.n_classes)
    if isinstance(model, LinearSvmModel):
        return model.margins(x)
    if isinstance(model, MlpModel):
        return log_softmax(model.logits(x), axis=1)
    raise TypeError(f"unsupported model {type(model).__name__}")


def _knn_counts(model: KnnModel, x, chunk: int = 512):
    tr = model.features
    sq = np.sum(tr ** 2, axis=1)
    out = np.zeros((len(x), model.n_classes))
    for s in range(0, len(x), chunk):
        q = x[s:s + chunk]
        d = np.sum(q ** 2, axis=1)[:, None] - 2 * q @ tr.T + sq[None]
        near = np.argsort(d, axis=1, kind="stable")[:, :model.k + 8]
        exact = np.sum((q[:, None, :] - tr[near]) ** 2, axis=2)
        order = np.lexsort((near, exact), axis=1)[:, :model.k]
        votes = model.labels[np.take_along_axis(near, order, axis=1)]
        np.add.at(out[s:s + chunk], (np.arange(len(q))[:, None], votes), 1)
    return out


def assign_beams(scores: np.ndarray, beams, n_rf: int) -> tuple:
    """Pick n_rf distinct beams, one per RF chain, maximizing the summed class-k scores.

    `scores` is (n_candidates, n_rf + 1); column 0 is the "unassigned" class.
    Returns the chosen beam indices in ascending order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[1] != n_rf + 1:
        raise ValueError(f"scores have {scores.shape[1]} classes, expected {n_rf + 1}")
    if scores.shape[0] < n_rf:
        raise ValueError("fewer candidate beams than RF chains")
    # prefer beams the model considers assigned at all: score relative to class 0
    gain = scores[:, 1:] - scores[:, :1]
    rows, _ = linear_sum_assignment(-gain)
    return tuple(sorted(int(beams[r]) for r in rows))
