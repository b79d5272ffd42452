"""Reference classifiers on the flat feature vectors: k-NN, linear
one-vs-rest SVM and a small MLP. None of them uses the image expansion.

All three save to the BSNN checkpoint format with their own type tag.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_softmax

from .neuralnet import TrainConfig, TrainingDivergedError, checkpoint_bytes, make_optimizer, parse_checkpoint
from .neuralnet.layers import ActivationLayer, Linear
from .neuralnet.train import class_weights_for

__all__ = [
    "KnnModel",
    "knn_fit",
    "knn_predict",
    "LinearSvmModel",
    "svm_train",
    "svm_predict",
    "MlpModel",
    "mlp_train",
    "mlp_predict",
    "save_baseline",
    "load_baseline",
]


# --- k-NN --------------------------------------------------------------------

@dataclass
class KnnModel:
    k: int
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not 1 <= self.k <= len(self.labels):
            raise ValueError(f"k must lie in [1, {len(self.labels)}], got {self.k}")


def knn_fit(features, labels, k: int = 5, n_classes: int | None = None) -> KnnModel:
    labels = np.asarray(labels, dtype=np.int64)
    return KnnModel(k, features, labels, int(n_classes or labels.max() + 1))


def knn_predict(model: KnnModel, x, chunk: int = 512) -> np.ndarray:
    """Majority label of the k nearest training points (Euclidean).

    Equal distances prefer the lower training index; equal vote counts the
    lower class.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    tr = model.features
    sq = np.sum(tr ** 2, axis=1)
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), chunk):
        q = x[s:s + chunk]
        # exact squared distances: the expanded form can tie-break wrongly through rounding
        d = np.sum(q ** 2, axis=1)[:, None] - 2 * q @ tr.T + sq[None]
        near = np.argsort(d, axis=1, kind="stable")[:, :model.k + 8]
        exact = np.sum((q[:, None, :] - tr[near]) ** 2, axis=2)
        order = np.lexsort((near, exact), axis=1)[:, :model.k]
        nn = np.take_along_axis(near, order, axis=1)
        votes = model.labels[nn]
        counts = np.zeros((len(q), model.n_classes), dtype=np.int64)
        np.add.at(counts, (np.arange(len(q))[:, None], votes), 1)
        out[s:s + chunk] = np.argmax(counts, axis=1)
    return out


# --- linear SVM --------------------------------------------------------------

@dataclass
class LinearSvmModel:
    weights: np.ndarray  # (F, K)
    bias: np.ndarray  # (K,)
    lam: float = 1e-3

    @property
    def n_classes(self) -> int:
        return self.bias.size

    def margins(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias


def svm_train(features, labels, n_classes: int | None = None, lam: float = 1e-3, lr: float = 1e-2,
              epochs: int = 30, minibatch: int = 128, seed: int = 0,
              class_weighting: str = "none") -> LinearSvmModel:
    """One-vs-rest hinge loss plus lam ||w||^2, minibatch subgradient steps."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    k = int(n_classes or y.max() + 1)
    if x.ndim != 2 or len(x) != len(y) or len(y) == 0:
        raise ValueError("features must be a nonempty N x F matrix matching labels")
    sw_all = class_weights_for(y, k)[y] if class_weighting == "balanced" else np.ones(len(y))
    rng = np.random.default_rng(seed)
    w = np.zeros((x.shape[1], k))
    b = np.zeros(k)
    targets = np.where(y[:, None] == np.arange(k)[None], 1.0, -1.0)
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for s in range(0, len(y), minibatch):
            idx = order[s:s + minibatch]
            xb, tb, sw = x[idx], targets[idx], sw_all[idx]
            active = (tb * (xb @ w + b) < 1) * tb * sw[:, None]
            gw = -xb.T @ active / len(idx) + 2 * lam * w
            gb = -active.sum(axis=0) / len(idx)
            w -= lr * gw
            b -= lr * gb
    return LinearSvmModel(w, b, lam)


def svm_predict(model: LinearSvmModel, x) -> np.ndarray:
    return np.argmax(model.margins(np.atleast_2d(x)), axis=1)


# --- MLP ---------------------------------------------------------------------

class MlpModel:
    """Fully connected ReLU network with a softmax head, parameters in one flat vector."""

    def __init__(self, n_features: int, n_classes: int, widths=(64, 32), seed: int = 0):
        if n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        self.n_features, self.n_classes, self.widths = int(n_features), int(n_classes), tuple(int(w) for w in widths)
        dims = (self.n_features,) + self.widths + (self.n_classes,)
        self.layers = []
        for i in range(len(dims) - 1):
            self.layers.append(Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                self.layers.append(ActivationLayer("relu"))
        shapes = [l.param_shapes(None) for l in self.layers]
        total = sum(int(np.prod(s)) for ss in shapes for s in ss)
        self.params = np.zeros(total)
        self.grads = np.zeros(total)
        off = 0
        for layer, ss in zip(self.layers, shapes):
            pv, gv = [], []
            for s in ss:
                n = int(np.prod(s))
                pv.append(self.params[off:off + n].reshape(s))
                gv.append(self.grads[off:off + n].reshape(s))
                off += n
            layer.bind(pv, gv)
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng)

    @property
    def n_params(self) -> int:
        return self.params.size

    def spec(self) -> dict:
        return {"n_features": self.n_features, "n_classes": self.n_classes, "widths": list(self.widths)}

    def logits(self, x):
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def loss_and_grad(self, x, labels, class_weights=None):
        labels = np.asarray(labels, dtype=np.int64)
        logp = log_softmax(self.logits(x), axis=1)
        n = len(labels)
        sw = np.ones(n) if class_weights is None else np.asarray(class_weights)[labels]
        loss = float(-(sw * logp[np.arange(n), labels]).sum() / sw.sum())
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss}")
        dz = np.exp(logp)
        dz[np.arange(n), labels] -= 1.0
        dz *= (sw / sw.sum())[:, None]
        for layer in reversed(self.layers):
            dz = layer.backward(dz)
        return loss, self.grads.copy()


def mlp_train(features, labels, n_classes: int, cfg: TrainConfig | None = None, widths=(64, 32),
              seed: int | None = None) -> MlpModel:
    """Minibatch training with the same optimizer machinery and schedule as the CNN."""
    cfg = cfg or TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty training set")
    seed = cfg.seed if seed is None else seed
    model = MlpModel(x.shape[1], n_classes, widths, seed)
    opt = make_optimizer(cfg.optimizer, model.n_params)
    weights = class_weights_for(y, n_classes) if cfg.class_weighting == "balanced" else None
    rng = np.random.default_rng(seed)
    order = np.arange(len(y))
    for _ in range(cfg.max_epochs):
        if cfg.shuffle_per_epoch:
            order = rng.permutation(len(y))
        for s in range(0, len(y), cfg.minibatch):
            idx = order[s:s + cfg.minibatch]
            _, g = model.loss_and_grad(x[idx], y[idx], weights)
            opt.step(model.params, g, cfg.initial_lr)
    return model


def mlp_predict(model: MlpModel, x) -> np.ndarray:
    return np.argmax(model.logits(np.atleast_2d(x)), axis=1)


# --- checkpoints -------------------------------------------------------------

def save_baseline(model, path) -> None:
    """BSNN checkpoint tagged "knn", "svm" or "mlp"."""
    if isinstance(model, KnnModel):
        blob = {"k": model.k, "n_classes": model.n_classes, "n_train": len(model.labels),
                "n_features": model.features.shape[1]}
        params = np.concatenate([model.features.ravel(), model.labels.astype(np.float64)])
        kind = "knn"
    elif isinstance(model, LinearSvmModel):
        blob = {"n_features": model.weights.shape[0], "n_classes": model.n_classes, "lam": model.lam}
        params = np.concatenate([model.weights.ravel(), model.bias])
        kind = "svm"
    elif isinstance(model, MlpModel):
        blob, params, kind = model.spec(), model.params, "mlp"
    else:
        raise TypeError(f"not a baseline model: {type(model).__name__}")
    Path(path).write_bytes(checkpoint_bytes(kind, blob, params))


def load_baseline(path):
    header, p = parse_checkpoint(Path(path).read_bytes(), str(path))
    kind, s = header.get("type"), header["spec"]
    if kind == "knn":
        n, f = s["n_train"], s["n_features"]
        return KnnModel(s["k"], p[:n * f].reshape(n, f), p[n * f:].astype(np.int64), s["n_classes"])
    if kind == "svm":
        f, k = s["n_features"], s["n_classes"]
        return LinearSvmModel(p[:f * k].reshape(f, k).copy(), p[f * k:].copy(), s["lam"])
    if kind == "mlp":
        m = MlpModel(s["n_features"], s["n_classes"], s["widths"])
        if p.size != m.n_params:
            raise ValueError(f"{path}: {p.size} parameters, spec needs {m.n_params}")
        m.params[...] = p
        return m
    raise ValueError(f"{path}: unknown baseline type {kind!r}")
