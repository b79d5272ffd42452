"""Sequential weak-learner ensemble with misclassified-sample forwarding and
weighted majority voting.

Learner m is trained on a fresh random subset of the training pool united
with the pool samples the current ensemble gets wrong. Its vote weight c_m
is picked from a small grid by a greedy line search on a held-out fit slice.
"""
from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .neuralnet import (
    ClassifierModel,
    ImageSet,
    NetworkSpec,
    TrainConfig,
    TrainingDivergedError,
    model_from_bytes,
    model_to_bytes,
    predict_logits,
    train,
)
from .neuralnet.train import balanced_accuracy

__all__ = [
    "EnsembleConfig",
    "EnsembleModel",
    "EnsembleFailedError",
    "weighted_vote",
    "train_ensemble",
    "predict",
    "ensemble_error",
    "save_ensemble",
    "load_ensemble",
]


class EnsembleFailedError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    m1: int = 5
    subset_fraction: float = 0.6
    weight_grid: tuple = (0.25, 0.5, 0.75, 1.0)
    fit_fraction: float = 0.2
    tolerance: float = 0.005  # largest fit-slice error increase a new learner may cause
    fit_metric: str = "error"  # "error" (0-1) or "balanced_error" (1 - balanced accuracy)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "weight_grid", tuple(float(c) for c in self.weight_grid))
        if self.m1 < 1:
            raise ValueError("m1 must be >= 1")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError("subset_fraction must lie in (0, 1]")
        if not 0 < self.fit_fraction < 1:
            raise ValueError("fit_fraction must lie in (0, 1)")
        if not self.weight_grid or min(self.weight_grid) < 0 or not np.all(np.isfinite(self.weight_grid)):
            raise ValueError("weight_grid must be nonempty, finite and nonnegative")
        if self.fit_metric not in ("error", "balanced_error"):
            raise ValueError(f"unknown fit_metric {self.fit_metric!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weight_grid"] = list(self.weight_grid)
        return d


def weighted_vote(votes, weights, n_classes: int) -> np.ndarray:
    """votes (N, M) class indices, weights (M,) -> (N,) winners.

    The winner maximizes sum_m c_m 1[vote_m = class]; exact ties go to the
    lower class index.
    """
    votes = np.asarray(votes, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if votes.ndim != 2 or votes.shape[1] != len(weights):
        raise ValueError(f"votes {votes.shape} do not match {len(weights)} weights")
    mass = np.zeros((votes.shape[0], n_classes))
    for m, c in enumerate(weights):
        mass[np.arange(len(votes)), votes[:, m]] += c
    return np.argmax(mass, axis=1)


def _error(pred, labels, metric, n_classes):
    if metric == "balanced_error":
        return 1.0 - balanced_accuracy(pred, labels, n_classes)
    return float(np.mean(pred != labels))


@dataclass
class EnsembleModel:
    learners: list
    weights: np.ndarray
    n_classes: int
    config: EnsembleConfig = field(default_factory=EnsembleConfig)
    seeds: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # one dict per learner

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.learners) != len(self.weights):
            raise ValueError("learner count must equal weight count")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("weights must be finite and nonnegative")

    def votes(self, data: ImageSet) -> np.ndarray:
        """(N, M) argmax class of every learner; skipped learners vote 0 with weight 0."""
        out = np.zeros((len(data), len(self.learners)), dtype=np.int64)
        for m, learner in enumerate(self.learners):
            if learner is not None:
                out[:, m] = np.argmax(predict_logits(learner, data), axis=1)
        return out

    def predict(self, data: ImageSet) -> np.ndarray:
        return weighted_vote(self.votes(data), self.weights, self.n_classes)


def predict(ens: EnsembleModel, data: ImageSet) -> np.ndarray:
    return ens.predict(data)


def ensemble_error(ens: EnsembleModel, data: ImageSet) -> float:
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(ens.predict(data) != data.labels))


def train_ensemble(train_set: ImageSet, val_set: ImageSet | None, cfg: EnsembleConfig,
                   net_spec: NetworkSpec, train_cfg: TrainConfig, log=None) -> EnsembleModel:
    """Greedy stagewise ensemble construction.

    A `fit_fraction` slice of the training set is held out from every weak
    learner and used only to choose the vote weights. A learner whose best
    grid weight would raise the fit-slice error by more than `tolerance` gets
    weight 0. Diverged learners are skipped with weight 0; if every learner
    is skipped EnsembleFailedError is raised. `val_set`, when given, is only
    used to record each learner's validation scores in the trace.
    """
    n = len(train_set)
    if n < 2:
        raise ValueError("training set needs at least 2 samples")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_fit = min(max(int(np.floor(n * cfg.fit_fraction)), 1), n - 1)
    fit_idx, pool = np.sort(perm[:n_fit]), np.sort(perm[n_fit:])
    fit_set, pool_set = train_set.subset(fit_idx), train_set.subset(pool)
    k = net_spec.n_classes
    subset_size = max(int(round(cfg.subset_fraction * len(pool))), 1)

    learners, weights, seeds, trace = [], [], [], []
    pool_votes = np.zeros((len(pool), 0), dtype=np.int64)
    fit_votes = np.zeros((n_fit, 0), dtype=np.int64)
    pool_pred = None
    fit_err = None
    for m in range(cfg.m1):
        subset = rng.choice(len(pool), size=subset_size, replace=False)
        wrong = np.zeros(0, dtype=np.int64) if pool_pred is None else np.flatnonzero(pool_pred != pool_set.labels)
        extra = np.setdiff1d(wrong, subset)
        if len(extra) > subset_size:
            extra = rng.choice(extra, size=subset_size, replace=False)
        idx = np.sort(np.concatenate([subset, extra]))
        seed = int(rng.integers(2**31))
        seeds.append(seed)
        entry = {"learner": m, "train_size": int(len(idx)), "forwarded": int(len(extra)), "seed": seed}
        model = ClassifierModel(net_spec, seed=seed)
        try:
            train(model, pool_set.subset(idx), None, _with_seed(train_cfg, seed))
        except TrainingDivergedError as e:
            entry.update(status="diverged", weight=0.0, message=str(e))
            learners.append(None)
            weights.append(0.0)
            trace.append(entry)
            pool_votes = np.column_stack([pool_votes, np.zeros(len(pool), np.int64)])
            fit_votes = np.column_stack([fit_votes, np.zeros(n_fit, np.int64)])
            if log:
                log(entry)
            continue
        pv = np.argmax(predict_logits(model, pool_set), axis=1)
        fv = np.argmax(predict_logits(model, fit_set), axis=1)
        fit_votes = np.column_stack([fit_votes, fv])
        pool_votes = np.column_stack([pool_votes, pv])
        best_c, best_err = None, None
        for c in cfg.weight_grid:
            e = _error(weighted_vote(fit_votes, weights + [c], k), fit_set.labels, cfg.fit_metric, k)
            if best_err is None or e < best_err:
                best_c, best_err = c, e
        if fit_err is not None and best_err > fit_err + cfg.tolerance:
            best_c, best_err, status = 0.0, fit_err, "rejected"
        else:
            status = "accepted"
        weights.append(best_c)
        learners.append(model)
        fit_err = best_err
        if any(weights):
            pool_pred = weighted_vote(pool_votes, weights, k)
        entry.update(status=status, weight=best_c, fit_error=best_err,
                     learner_fit_error=_error(fv, fit_set.labels, cfg.fit_metric, k))
        if val_set is not None and len(val_set):
            vp = np.argmax(predict_logits(model, val_set), axis=1)
            entry.update(val_accuracy=float(np.mean(vp == val_set.labels)),
                         val_balanced_accuracy=balanced_accuracy(vp, val_set.labels, k))
        trace.append(entry)
        if log:
            log(entry)
    if not any(w > 0 for w in weights):
        raise EnsembleFailedError("every weak learner diverged or was rejected")
    return EnsembleModel(learners, np.array(weights), k, cfg, seeds, trace)


def _with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    d = cfg.to_dict()
    d["seed"] = seed
    return TrainConfig(**d)


# --- container ---------------------------------------------------------------
#
# A zip archive holding learner_<m>.bsnn checkpoints and manifest.json with the
# weights, per-learner seeds, config and training trace. Entries carry a fixed
# timestamp so identical ensembles produce identical bytes.

_ZIP_TIME = (1980, 1, 1, 0, 0, 0)


def save_ensemble(ens: EnsembleModel, path) -> None:
    manifest = {
        "format": "thzbeam-ensemble",
        "version": 1,
        "n_classes": ens.n_classes,
        "weights": ens.weights.tolist(),
        "seeds": list(ens.seeds),
        "config": ens.config.to_dict(),
        "trace": ens.trace,
        "learners": [None if l is None else f"learner_{m}.bsnn" for m, l in enumerate(ens.learners)],
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(zipfile.ZipInfo("manifest.json", _ZIP_TIME),
                    json.dumps(manifest, indent=2, sort_keys=True))
        for name, learner in zip(manifest["learners"], ens.learners):
            if learner is None:
                continue
            zf.writestr(zipfile.ZipInfo(name, _ZIP_TIME), model_to_bytes(learner))


def load_ensemble(path) -> EnsembleModel:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != "thzbeam-ensemble":
            raise ValueError(f"{path}: not an ensemble container")
        learners = [None if name is None else model_from_bytes(zf.read(name), f"{path}:{name}")
                    for name in manifest["learners"]]
    cfg = EnsembleConfig(**manifest["config"])
    return EnsembleModel(learners, np.array(manifest["weights"]), manifest["n_classes"], cfg,
                         manifest["seeds"], manifest["trace"])
