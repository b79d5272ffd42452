from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import log_softmax

from ..dataset import BeamDataset, expand_batch
from .network import ClassifierModel, TrainingDivergedError, TrainingLog
from .optim import OptimizerKind, make_optimizer


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 6
    minibatch: int = 128
    initial_lr: float = 1e-3
    validation_frequency: int = 3
    shuffle_per_epoch: bool = True
    optimizer: OptimizerKind = OptimizerKind.ADAM
    seed: int = 0
    class_weighting: str = "none"  # "none" | "balanced"

    def __post_init__(self):
        object.__setattr__(self, "optimizer", OptimizerKind(str(getattr(self.optimizer, "value", self.optimizer)).lower()))
        if min(self.max_epochs, self.minibatch, self.validation_frequency) < 1:
            raise ValueError("epochs, minibatch and validation frequency must be >= 1")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if self.class_weighting not in ("none", "balanced"):
            raise ValueError(f"unknown class_weighting {self.class_weighting!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value
        return d


class ImageSet:
    """Feature vectors that are expanded to images one minibatch at a time.

    Either `features` (N, F) with an image side, or pre-built `images`
    (N, H, W, C) can back the set.
    """

    def __init__(self, labels, features=None, side=32, embedding="outer", images=None, dtype=np.float64):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.features = None if features is None else np.asarray(features, dtype=np.float64)
        self._images = None if images is None else np.asarray(images, dtype=dtype)
        if (self.features is None) == (self._images is None):
            raise ValueError("pass exactly one of features or images")
        self.side, self.embedding, self.dtype = side, embedding, dtype

    @classmethod
    def from_dataset(cls, ds: BeamDataset, side=32, embedding="outer", dtype=np.float64):
        return cls(ds.labels, ds.features, side, embedding, dtype=dtype)

    def __len__(self):
        return len(self.labels)

    def images(self, idx=None):
        if idx is None:
            idx = np.arange(len(self))
        if self._images is not None:
            return self._images[idx]
        return expand_batch(self.features[idx], self.side, self.embedding, dtype=self.dtype)

    def subset(self, idx):
        if self._images is not None:
            return ImageSet(self.labels[idx], images=self._images[idx], dtype=self.dtype)
        return ImageSet(self.labels[idx], self.features[idx], self.side, self.embedding, dtype=self.dtype)


def fit_input_standardization(data: ImageSet, batch_size=1024):
    """Per-channel mean and std over all pixels of `data`; zero-variance channels get std 1."""
    if len(data) == 0:
        raise ValueError("empty image set")
    total = sq = None
    count = 0
    for b in _batches(len(data), batch_size):
        x = data.images(b).astype(np.float64)
        flat = x.reshape(-1, x.shape[-1])
        total = flat.sum(axis=0) if total is None else total + flat.sum(axis=0)
        sq = (flat ** 2).sum(axis=0) if sq is None else sq + (flat ** 2).sum(axis=0)
        count += flat.shape[0]
    mean = total / count
    var = np.maximum(sq / count - mean ** 2, 0.0)
    std = np.sqrt(var)
    # channels that never vary (the zero padding channels) pass through unchanged
    flat_ch = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return tuple(np.where(flat_ch, 0.0, mean).tolist()), tuple(np.where(flat_ch, 1.0, std).tolist())


def _batches(n, size):
    return [np.arange(i, min(i + size, n)) for i in range(0, n, size)]


def predict_logits(model, data: ImageSet, batch_size=512):
    if len(data) == 0:
        return np.zeros((0, model.spec.n_classes))
    return np.concatenate([model.logits(data.images(b)) for b in _batches(len(data), batch_size)])


def evaluate(model, data: ImageSet, batch_size=512):
    """(mean cross-entropy, accuracy) in eval mode."""
    z = predict_logits(model, data, batch_size)
    logp = log_softmax(z, axis=1)
    loss = -logp[np.arange(len(data)), data.labels].mean()
    return float(loss), float(np.mean(np.argmax(z, axis=1) == data.labels))


def evaluate_accuracy(model, data: ImageSet) -> float:
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    return evaluate(model, data)[1]


def accuracy(pred, labels) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))


def balanced_accuracy(pred, labels, n_classes=None) -> float:
    """Mean per-class recall over the classes present in `labels`."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    classes = np.unique(labels) if n_classes is None else [c for c in range(n_classes) if np.any(labels == c)]
    return float(np.mean([np.mean(pred[labels == c] == c) for c in classes]))


def class_weights_for(labels, n_classes):
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    w = np.where(counts > 0, len(labels) / (n_classes * np.maximum(counts, 1)), 0.0)
    return w


def train(model: ClassifierModel, train_set: ImageSet, val_set: ImageSet | None, cfg: TrainConfig):
    """Minibatch training with per-epoch shuffling.

    Every `validation_frequency` iterations the next validation minibatch
    (cycling through the set) is scored and logged as phase "val"; the full
    validation set is scored at the end of each epoch as "val_epoch".
    Returns (model, log); the model is updated in place.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg.optimizer, model.n_params, model.dtype)
    log = model.log = TrainingLog()
    weights = (class_weights_for(train_set.labels, model.spec.n_classes)
               if cfg.class_weighting == "balanced" else None)
    mask = None if model.trainable.all() else model.trainable.astype(model.dtype)
    val_batches = _batches(len(val_set), cfg.minibatch) if val_set is not None and len(val_set) else []
    vi = 0
    it = 0
    order = np.arange(len(train_set))
    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.shuffle_per_epoch:
            order = rng.permutation(len(train_set))
        for b in _batches(len(train_set), cfg.minibatch):
            idx = order[b]
            it += 1
            try:
                loss, grad, z = model.loss_and_grad(train_set.images(idx), train_set.labels[idx],
                                                    train=True, rng=rng, class_weights=weights)
            except TrainingDivergedError as e:
                e.log = log
                raise
            opt.step(model.params, grad, cfg.initial_lr, mask)
            log.add(it, epoch, "train", loss, np.mean(np.argmax(z, axis=1) == train_set.labels[idx]))
            if val_batches and it % cfg.validation_frequency == 0:
                vb = val_batches[vi % len(val_batches)]
                vi += 1
                vloss, vacc = evaluate(model, val_set.subset(vb))
                log.add(it, epoch, "val", vloss, vacc)
        if val_batches:
            vloss, vacc = evaluate(model, val_set)
            log.add(it, epoch, "val_epoch", vloss, vacc)
    return model, log
