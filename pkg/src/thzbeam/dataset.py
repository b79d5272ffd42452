"""Sample construction: features, normalization, GMM channel descriptor,
oracle labels, image expansion and train/validation splitting.
"""
from __future__ import annotations

import csv
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .beam_select import BeamSelection, SelectionConfig, beam_energy, candidate_pool, oracle_select
from .channel import ChannelRealization

__all__ = [
    "Normalizer",
    "normalize",
    "GmmModel",
    "GmmCollapseError",
    "fit_gmm",
    "gmm_points",
    "LabeledSample",
    "label_realization",
    "BeamDataset",
    "build_datasets",
    "bicubic_matrix",
    "bicubic_resize",
    "expand_to_image",
    "expand_batch",
    "ImageTensor",
    "split_dataset",
    "save_dataset",
    "load_dataset",
    "export_csv",
]


# --- normalization ----------------------------------------------------------

@dataclass
class Normalizer:
    """Per-feature (a - mean) / (max - min); constant features map to zero."""
    mean: np.ndarray
    span: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Normalizer":
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError(f"need an M x F matrix with M >= 2, got shape {x.shape}")
        span = x.max(axis=0) - x.min(axis=0)
        const = np.flatnonzero(span == 0)
        if len(const):
            warnings.warn(f"constant feature columns {const.tolist()} normalized to zero", RuntimeWarning)
        return cls(x.mean(axis=0), span)

    @property
    def constant_columns(self) -> np.ndarray:
        return np.flatnonzero(self.span == 0)

    def transform(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        safe = np.where(self.span == 0, 1.0, self.span)
        return np.where(self.span == 0, 0.0, (x - self.mean) / safe)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "span": self.span.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["mean"], float), np.asarray(d["span"], float))


def normalize(features: np.ndarray) -> np.ndarray:
    return Normalizer.fit(features).transform(features)


# --- GMM ---------------------------------------------------------------------

class GmmCollapseError(RuntimeError):
    pass


@dataclass
class GmmModel:
    """Diagonal GMM over (phi_r, phi_t, |alpha|) triples.

    `weights` (K,), `means` (K, 3), `stds` (K, 3); `amplitude` is the largest
    mixture density over the fitted points. `log_likelihood` holds the mean
    log-likelihood after every EM iteration.
    """
    amplitude: float
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    log_likelihood: list = field(default_factory=list)
    reinitialized: int = 0

    @property
    def k(self) -> int:
        return len(self.weights)

    def component_vectors(self) -> np.ndarray:
        """Rows q_k = [w_k, mu_r, mu_t, mu_a, sigma_r, sigma_t, sigma_a]."""
        return np.column_stack([self.weights, self.means, self.stds])

    def flatten(self) -> np.ndarray:
        """q = [A, q_1, ..., q_K]."""
        return np.concatenate([[self.amplitude], self.component_vectors().ravel()])

    def log_density(self, points: np.ndarray) -> np.ndarray:
        return logsumexp(_component_logpdf(points, self.weights, self.means, self.stds), axis=1)


def _component_logpdf(x, w, mu, sd):
    # (N, K): log w_k + log N(x | mu_k, diag(sd_k^2))
    z = (x[:, None, :] - mu[None]) / sd[None]
    return (np.log(np.maximum(w, 1e-300))[None]
            - 0.5 * np.sum(z ** 2, axis=2)
            - np.sum(np.log(sd), axis=1)[None]
            - 0.5 * x.shape[1] * np.log(2 * np.pi))


SIGMA_MIN = 1e-6
GMM_REG_COVAR = 1e-6  # variance regularization used for per-realization fits


def fit_gmm(points, k: int, tol: float = 1e-8, max_iter: int = 200, seed: int = 0,
            reg_covar: float = 0.0) -> GmmModel:
    """EM for a diagonal-covariance mixture of k Gaussians.

    Initialization takes k distinct points chosen by farthest-point sampling
    from a seeded start. A component whose std drops below 1e-6 on an axis
    where the data itself varies is re-seeded once; a second collapse raises.
    `reg_covar` is added to every variance in the M-step; with few points per
    component (a handful of paths per realization) it is what keeps
    single-point components from collapsing.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"points must be an N x D array, got shape {x.shape}")
    n, d = x.shape
    if k < 1 or n < k:
        raise ValueError(f"need 1 <= k <= number of points, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    data_sd = x.std(axis=0)
    degenerate_axis = data_sd < SIGMA_MIN
    init_sd = np.sqrt(np.maximum(data_sd, SIGMA_MIN) ** 2 + reg_covar)

    mu = _farthest_points(x, k, rng)
    sd = np.tile(init_sd, (k, 1))
    w = np.full(k, 1.0 / k)
    history = []
    reinit = 0
    for _ in range(max_iter):
        logp = _component_logpdf(x, w, mu, sd)
        ll_each = logsumexp(logp, axis=1)
        history.append(float(ll_each.mean()))
        if len(history) > 1 and history[-1] - history[-2] < tol:
            break
        resp = np.exp(logp - ll_each[:, None])
        nk = resp.sum(axis=0)
        w = nk / n
        mu = (resp.T @ x) / np.maximum(nk, 1e-300)[:, None]
        var = np.einsum("nk,nkd->kd", resp, (x[:, None, :] - mu[None]) ** 2) / np.maximum(nk, 1e-300)[:, None]
        sd = np.sqrt(np.maximum(var, 0.0) + reg_covar)
        collapsed = np.any((sd < SIGMA_MIN) & ~degenerate_axis[None], axis=1) | (nk < 1e-12)
        if np.any(collapsed):
            if reinit:
                raise GmmCollapseError(f"components {np.flatnonzero(collapsed).tolist()} collapsed twice")
            reinit += 1
            for j in np.flatnonzero(collapsed):
                mu[j] = x[rng.integers(n)]
                sd[j] = init_sd
                w[j] = 1.0 / k
            w = w / w.sum()
            history.clear()
        sd = np.maximum(sd, SIGMA_MIN)
    w = w / w.sum()
    dens = np.exp(logsumexp(_component_logpdf(x, w, mu, sd), axis=1))
    return GmmModel(float(dens.max()), w, mu, sd, history, reinit)


def _farthest_points(x, k, rng):
    idx = [int(rng.integers(len(x)))]
    dist = np.sum((x - x[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        j = int(np.argmax(dist))
        idx.append(j)
        dist = np.minimum(dist, np.sum((x - x[j]) ** 2, axis=1))
    return x[idx].copy()


def gmm_points(real: ChannelRealization) -> np.ndarray:
    return np.column_stack([real.aoas, real.aods, np.abs(real.gains)])


# --- labeling -----------------------------------------------------------------

@dataclass(frozen=True)
class LabeledSample:
    base: np.ndarray
    beam_descriptor: np.ndarray
    label: int
    realization_id: int
    beam: int

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([self.base, self.beam_descriptor])


def _side_info(h_b, side):
    e_r, e_t = beam_energy(h_b)
    return (e_t, h_b.shape[1]) if side == "tx" else (e_r, h_b.shape[0])


def _beam_rows(real, sel, cfg, side, base):
    energy, n = _side_info(real.beamspace, side)
    pool_r, pool_t = candidate_pool(real.beamspace, cfg)
    pool = pool_t if side == "tx" else pool_r
    chosen = sel.tx_beams if side == "tx" else sel.rx_beams
    frac = energy / energy.sum() if energy.sum() > 0 else np.zeros_like(energy)
    rows = []
    for b in pool:
        desc = np.array([b / max(n - 1, 1), frac[b]])
        label = chosen.index(b) + 1 if b in chosen else 0
        rows.append(LabeledSample(base, desc, label, real.realization_id, int(b)))
    return rows


def label_realization(real: ChannelRealization, cfg: SelectionConfig, snr_db: float = 10.0,
                      side: str = "tx", normalizer: Normalizer | None = None,
                      selection: BeamSelection | None = None) -> list[LabeledSample]:
    """One labeled sample per candidate beam on `side`.

    The label is the 1-based RF chain that the oracle assigns to the beam
    (position in its ordered beam tuple), 0 for beams left unassigned.
    """
    if side not in ("tx", "rx"):
        raise ValueError(f"side must be 'tx' or 'rx', got {side!r}")
    if selection is None:
        selection, _ = oracle_select(real.beamspace, cfg, snr_db=snr_db)
    base = real.features()
    if normalizer is not None:
        base = normalizer.transform(base)
    return _beam_rows(real, selection, cfg, side, base)


@dataclass
class BeamDataset:
    """Array form of a labeled sample set for one side of the link."""
    features: np.ndarray  # (M, F + 2): normalized realization features then beam descriptor
    labels: np.ndarray  # (M,) uint8
    realization_ids: np.ndarray  # (M,) uint64
    beams: np.ndarray  # (M,)
    n_classes: int
    side: str = "tx"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def subset(self, mask_or_idx) -> "BeamDataset":
        return BeamDataset(self.features[mask_or_idx], self.labels[mask_or_idx],
                           self.realization_ids[mask_or_idx], self.beams[mask_or_idx],
                           self.n_classes, self.side, dict(self.meta))

    def samples(self) -> list[LabeledSample]:
        return [LabeledSample(f[:-2], f[-2:], int(y), int(r), int(b))
                for f, y, r, b in zip(self.features, self.labels, self.realization_ids, self.beams)]


def build_datasets(reals: Sequence[ChannelRealization], cfg: SelectionConfig, snr_db: float = 10.0,
                   normalizer: Normalizer | None = None, with_gmm: bool = False, gmm_k: int | None = None,
                   selections: Sequence[BeamSelection] | None = None):
    """Label every realization with the oracle and assemble tx and rx datasets.

    Returns ({"tx": BeamDataset, "rx": BeamDataset}, normalizer, selections).
    The normalizer is fitted on these realizations unless one is passed in.
    """
    if len(reals) == 0:
        raise ValueError("no realizations")
    if selections is None:
        selections = [oracle_select(r.beamspace, cfg, snr_db=snr_db)[0] for r in reals]
    raw = np.array([r.features() for r in reals])
    if with_gmm:
        k = gmm_k or reals[0].config.n_clusters
        raw = np.hstack([raw, np.array([fit_gmm(gmm_points(r), k, reg_covar=GMM_REG_COVAR).flatten()
                                        for r in reals])])
    if normalizer is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            normalizer = Normalizer.fit(raw) if len(reals) > 1 else Normalizer(raw[0] * 0, raw[0] * 0)
    base = normalizer.transform(raw)
    out = {}
    for side, n_rf in (("tx", cfg.n_rf_tx), ("rx", cfg.n_rf_rx)):
        rows = [s for r, sel, b in zip(reals, selections, base) for s in _beam_rows(r, sel, cfg, side, b)]
        out[side] = BeamDataset(
            features=np.array([s.features for s in rows]),
            labels=np.array([s.label for s in rows], dtype=np.uint8),
            realization_ids=np.array([s.realization_id for s in rows], dtype=np.uint64),
            beams=np.array([s.beam for s in rows], dtype=np.int64),
            n_classes=n_rf + 1, side=side,
            meta={"n_beams": reals[0].config.n_tx if side == "tx" else reals[0].config.n_rx},
        )
    return out, normalizer, list(selections)


# --- image expansion ---------------------------------------------------------

def _catmull_rom(t):
    t = np.abs(t)
    a = -0.5
    return np.where(t <= 1, (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1,
                    np.where(t < 2, a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a, 0.0))


def bicubic_matrix(n: int, m: int) -> np.ndarray:
    """(m, n) Catmull-Rom resampling matrix with corner-aligned grids.

    Output i samples the source at i (n-1)/(m-1). Taps outside the source are
    linearly extrapolated from the two nearest edge samples, so affine signals
    are reproduced everywhere, including at the borders.
    """
    if n < 1 or m < 1:
        raise ValueError("sizes must be positive")
    if n == 1:
        return np.ones((m, 1))
    r = np.zeros((m, n))
    pos = np.arange(m) * (n - 1) / (m - 1) if m > 1 else np.zeros(1)
    for i, x in enumerate(pos):
        j0 = min(int(np.floor(x)), n - 2)
        for j in range(j0 - 1, j0 + 3):
            wgt = float(_catmull_rom(x - j))
            if wgt == 0.0:
                continue
            if j < 0:
                # f(j) = f(0) + j (f(1) - f(0))
                r[i, 0] += wgt * (1 - j)
                r[i, 1] += wgt * j
            elif j > n - 1:
                e = j - (n - 1)
                r[i, n - 1] += wgt * (1 + e)
                r[i, n - 2] -= wgt * e
            else:
                r[i, j] += wgt
    return r


def bicubic_resize(img: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    width = height if width is None else width
    return bicubic_matrix(img.shape[0], height) @ img @ bicubic_matrix(img.shape[1], width).T


@dataclass(frozen=True)
class ImageTensor:
    data: np.ndarray  # (H, W, 3)
    source_sample_id: int


def _embed(v: np.ndarray, embedding: str) -> np.ndarray:
    if embedding == "outer":
        return np.outer(v, v)
    if embedding == "tile":
        return np.tile(v, (len(v), 1))
    raise ValueError(f"unknown embedding {embedding!r}")


def expand_to_image(sample: LabeledSample | np.ndarray, target: int = 32, embedding: str = "outer",
                    sample_id: int = 0) -> ImageTensor:
    """Feature vector -> square matrix -> bicubic resize -> channel 0 of a 3-channel image."""
    if target < 4:
        raise ValueError(f"target side must be >= 4, got {target}")
    v = sample.features if isinstance(sample, LabeledSample) else np.asarray(sample, dtype=np.float64)
    img = np.zeros((target, target, 3))
    img[:, :, 0] = bicubic_resize(_embed(v, embedding), target)
    return ImageTensor(img, sample_id)


def expand_batch(features: np.ndarray, target: int = 32, embedding: str = "outer",
                 dtype=np.float64) -> np.ndarray:
    """Batched expansion straight to network layout (B, target, target, 3)."""
    if target < 4:
        raise ValueError(f"target side must be >= 4, got {target}")
    x = np.asarray(features, dtype=np.float64)
    r = bicubic_matrix(x.shape[1], target)
    rv = x @ r.T  # (B, target)
    out = np.zeros((len(x), target, target, 3), dtype=dtype)
    if embedding == "outer":
        # R (v v^T) R^T = (R v)(R v)^T
        out[..., 0] = rv[:, :, None] * rv[:, None, :]
    elif embedding == "tile":
        # rows of the tiled matrix are identical, and R's rows sum to one
        out[..., 0] = np.broadcast_to(rv[:, None, :], (len(x), target, target))
    else:
        raise ValueError(f"unknown embedding {embedding!r}")
    return out


# --- splitting ---------------------------------------------------------------

def split_realizations(realization_ids, train_fraction: float, seed: int):
    """Shuffle the distinct realization ids and cut at floor(R * fraction), keeping both sides nonempty."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    ids = np.unique(np.asarray(realization_ids))
    if len(ids) < 2:
        raise ValueError("need at least 2 realizations to split")
    perm = np.random.default_rng(seed).permutation(ids)
    cut = min(max(int(np.floor(len(ids) * train_fraction)), 1), len(ids) - 1)
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def split_dataset(samples: BeamDataset, train_fraction: float = 0.7, seed: int = 0):
    """Grouped split: all beams of one realization land on the same side."""
    train_ids, _ = split_realizations(samples.realization_ids, train_fraction, seed)
    mask = np.isin(samples.realization_ids, train_ids)
    return samples.subset(mask), samples.subset(~mask)


# --- persistence -------------------------------------------------------------
#
# BSDS record, little-endian:
#   4s  magic "BSDS"
#   u16 version (1)
#   u16 reserved (0)
#   u32 feature_count
#   u32 class_count
#   u64 sample_count
#   then sample_count x (u64 realization_id, u8 label, feature_count x f64)
# Provenance (configs, seeds, side, normalizer statistics) goes into `<file>.json`.

MAGIC_DATASET = b"BSDS"
_DS_VERSION = 1
_DS_HEADER = struct.Struct("<4sHHIIQ")


def _record_dtype(f):
    return np.dtype([("rid", "<u8"), ("label", "u1"), ("x", "<f8", (f,))])


def save_dataset(ds: BeamDataset, path, provenance: dict | None = None) -> None:
    path = Path(path)
    f = ds.feature_count
    rec = np.zeros(len(ds), dtype=_record_dtype(f))
    rec["rid"] = ds.realization_ids
    rec["label"] = ds.labels
    rec["x"] = ds.features
    with open(path, "wb") as fh:
        fh.write(_DS_HEADER.pack(MAGIC_DATASET, _DS_VERSION, 0, f, ds.n_classes, len(ds)))
        fh.write(rec.tobytes())
    side = {"side": ds.side, **ds.meta, **(provenance or {})}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def load_dataset(path) -> BeamDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    buf = path.read_bytes()
    magic, version, _, f, n_classes, count = _DS_HEADER.unpack_from(buf, 0)
    if magic != MAGIC_DATASET:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _DS_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    rec = np.frombuffer(buf, dtype=_record_dtype(f), count=count, offset=_DS_HEADER.size)
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    x = rec["x"].copy()
    n_beams = meta.get("n_beams")
    beams = (np.rint(x[:, -2] * max(n_beams - 1, 1)).astype(np.int64) if n_beams
             else np.zeros(count, dtype=np.int64))
    return BeamDataset(x, rec["label"].copy(), rec["rid"].copy(), beams, int(n_classes),
                       meta.get("side", "tx"), meta)


def export_csv(ds: BeamDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["realization_id", "label"] + [f"f{i}" for i in range(ds.feature_count)])
        for rid, y, x in zip(ds.realization_ids, ds.labels, ds.features):
            w.writerow([int(rid), int(y)] + [repr(float(v)) for v in x])
