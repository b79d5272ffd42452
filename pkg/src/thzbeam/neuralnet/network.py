from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from .activations import Activation
from .layers import (
    ActivationLayer,
    AvgPoolGrid,
    Conv2D,
    Dropout,
    Inception,
    Linear,
    MaxPool2,
)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class InceptionSpec:
    w1: int
    w3: int
    w5: int
    wp: int

    def __post_init__(self):
        if min(self.w1, self.w3, self.w5, self.wp) < 1:
            raise ValueError("inception branch widths must be >= 1")

    @property
    def c_out(self) -> int:
        return self.w1 + self.w3 + self.w5 + self.wp


@dataclass(frozen=True)
class NetworkSpec:
    """stem conv -> act -> pool -> [inception -> pool]... -> avg pool -> dropout -> linear -> softmax.

    A 2x2 max pool follows the stem and every inception block except the last.
    """
    input_side: int = 32
    in_channels: int = 3
    stem_width: int = 16
    stem_kernel: int = 3
    inception_blocks: tuple = (InceptionSpec(8, 8, 4, 4), InceptionSpec(12, 12, 4, 4))
    dropout_rate: float = 0.4
    n_classes: int = 5
    activation: Activation = Activation("relu")
    head_pool_grid: int = 1
    # fixed per-channel input standardization (x - mean) / std, fitted on training images
    input_mean: tuple | None = None
    input_std: tuple | None = None

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, InceptionSpec) else InceptionSpec(**b) if isinstance(b, dict)
                       else InceptionSpec(*b) for b in self.inception_blocks)
        object.__setattr__(self, "inception_blocks", blocks)
        object.__setattr__(self, "activation", Activation.parse(self.activation))
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.stem_width < 1 or self.input_side < 1:
            raise ValueError("widths and input side must be >= 1")
        for name in ("input_mean", "input_std"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(a) for a in v)
                if len(v) != self.in_channels or not all(np.isfinite(v)):
                    raise ValueError(f"{name} needs {self.in_channels} finite values")
                object.__setattr__(self, name, v)
        if self.input_std is not None and min(self.input_std) <= 0:
            raise ValueError("input_std must be positive")

    def with_standardization(self, mean, std) -> "NetworkSpec":
        return replace(self, input_mean=tuple(mean), input_std=tuple(std))

    def with_activation(self, act) -> "NetworkSpec":
        return replace(self, activation=Activation.parse(act))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation"] = str(self.activation)
        d["inception_blocks"] = [asdict(b) for b in self.inception_blocks]
        for name in ("input_mean", "input_std"):
            if d[name] is not None:
                d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)

    def parameter_count(self) -> int:
        """Closed-form count, independent of the layer objects."""
        c = self.in_channels
        n = self.stem_kernel ** 2 * c * self.stem_width + self.stem_width
        c = self.stem_width
        for b in self.inception_blocks:
            n += b.w1 * (c + 1) + b.w3 * (9 * c + 1) + b.w5 * (25 * c + 1) + b.wp * (c + 1)
            c = b.c_out
        feat = c * self.head_pool_grid ** 2
        return n + feat * self.n_classes + self.n_classes


def build_layers(spec: NetworkSpec):
    act = spec.activation
    layers = [Conv2D(spec.in_channels, spec.stem_width, spec.stem_kernel, input_grad=False),
              ActivationLayer(act), MaxPool2()]
    c = spec.stem_width
    for i, b in enumerate(spec.inception_blocks):
        layers.append(Inception(c, b.w1, b.w3, b.w5, b.wp, act))
        c = b.c_out
        if i < len(spec.inception_blocks) - 1:
            layers.append(MaxPool2())
    layers += [AvgPoolGrid(spec.head_pool_grid), Dropout(spec.dropout_rate)]
    layers.append(Linear(c * spec.head_pool_grid ** 2, spec.n_classes))
    return layers


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)  # (iteration, epoch, phase, loss, accuracy)

    def add(self, iteration, epoch, phase, loss, accuracy):
        self.rows.append((int(iteration), int(epoch), phase, float(loss), float(accuracy)))

    def phase(self, name):
        return [r for r in self.rows if r[2] == name]

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write("iteration,epoch,phase,loss,accuracy\n")
            for it, ep, ph, loss, acc in self.rows:
                f.write(f"{it},{ep},{ph},{loss:.10g},{acc:.10g}\n")


class ClassifierModel:
    """Layer stack with all parameters in one flat vector.

    `forward` returns class probabilities; `loss_and_grad` returns the mean
    cross-entropy and its gradient w.r.t. the flat parameter vector.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers = build_layers(spec)
        shape = (spec.input_side, spec.input_side, spec.in_channels)
        shapes_per_layer = []
        for layer in self.layers:
            shapes_per_layer.append(layer.param_shapes(shape))
            shape = layer.output_shape(shape)
        total = sum(int(np.prod(s)) for shapes in shapes_per_layer for s in shapes)
        self.params = np.zeros(total, dtype=self.dtype)
        self.grads = np.zeros(total, dtype=self.dtype)
        self.trainable = np.ones(total, dtype=bool)
        off = 0
        self._slices = []
        for layer, shapes in zip(self.layers, shapes_per_layer):
            pv, gv = [], []
            start = off
            for s in shapes:
                n = int(np.prod(s))
                pv.append(self.params[off:off + n].reshape(s))
                gv.append(self.grads[off:off + n].reshape(s))
                off += n
            layer.bind(pv, gv)
            self._slices.append(slice(start, off))
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng)
        self.log = TrainingLog()

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def head_slice(self) -> slice:
        return self._slices[-1]

    def freeze_all_but_head(self):
        self.trainable[:] = False
        self.trainable[self.head_slice] = True

    def unfreeze(self):
        self.trainable[:] = True

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        s = self.spec
        if x.ndim != 4 or x.shape[1:] != (s.input_side, s.input_side, s.in_channels):
            raise ValueError(f"expected input (B, {s.input_side}, {s.input_side}, {s.in_channels}), got {x.shape}")
        return x

    def logits(self, x, train=False, rng=None):
        h = self._check_input(x)
        if self.spec.input_mean is not None:
            h = h - np.asarray(self.spec.input_mean, dtype=self.dtype)
        if self.spec.input_std is not None:
            h = h / np.asarray(self.spec.input_std, dtype=self.dtype)
        for layer in self.layers:
            h = layer.forward(h, train=train, rng=rng)
        return h

    def forward(self, x, train=False, rng=None):
        return softmax(self.logits(x, train, rng), axis=1)

    def loss_and_grad(self, x, labels, train=False, rng=None, class_weights=None):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= self.spec.n_classes:
            raise ValueError("labels outside [0, n_classes)")
        z = self.logits(x, train, rng)
        logp = log_softmax(z, axis=1)
        n = len(labels)
        sw = np.ones(n) if class_weights is None else np.asarray(class_weights)[labels]
        norm = sw.sum()
        loss = float(-(sw * logp[np.arange(n), labels]).sum() / norm)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss}")
        dz = np.exp(logp)
        dz[np.arange(n), labels] -= 1.0
        dz *= (sw / norm)[:, None]
        dz = dz.astype(self.dtype, copy=False)
        for layer in reversed(self.layers):
            dz = layer.backward(dz)
        return loss, self.grads.copy(), z

    def backward(self, x, labels):
        """Gradient of the mean cross-entropy in eval mode (no dropout)."""
        return self.loss_and_grad(x, labels)[1]

    def predict(self, x, batch_size=512):
        out = []
        for i in range(0, len(x), batch_size):
            out.append(np.argmax(self.logits(x[i:i + batch_size]), axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def predict_proba(self, x, batch_size=512):
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def copy(self) -> "ClassifierModel":
        m = ClassifierModel(self.spec, dtype=self.dtype)
        m.params[...] = self.params
        m.trainable[...] = self.trainable
        return m


# --- checkpoints -------------------------------------------------------------
#
# BSNN record, little-endian:
#   4s  magic "BSNN"
#   u16 version (1)
#   u16 reserved (0)
#   u32 length of the JSON blob, then the UTF-8 JSON blob
#       ({"type": ..., "spec": {...}, ...extra})
#   u64 parameter count, then that many f64 values

MAGIC_MODEL = b"BSNN"
_NN_VERSION = 1
_NN_HEAD = struct.Struct("<4sHHI")


def checkpoint_bytes(kind: str, spec_blob: dict, params: np.ndarray, extra: dict | None = None) -> bytes:
    blob = json.dumps({"type": kind, "spec": spec_blob, **(extra or {})}, sort_keys=True).encode()
    p = np.ascontiguousarray(params, dtype="<f8").ravel()
    return (_NN_HEAD.pack(MAGIC_MODEL, _NN_VERSION, 0, len(blob)) + blob
            + struct.pack("<Q", p.size) + p.tobytes())


def parse_checkpoint(buf: bytes, name="checkpoint"):
    """Returns (header dict, parameter vector)."""
    if len(buf) < _NN_HEAD.size:
        raise ValueError(f"{name}: truncated checkpoint")
    magic, version, _, n = _NN_HEAD.unpack_from(buf, 0)
    if magic != MAGIC_MODEL:
        raise ValueError(f"{name}: bad magic {magic!r}")
    if version != _NN_VERSION:
        raise ValueError(f"{name}: unsupported version {version}")
    off = _NN_HEAD.size
    header = json.loads(buf[off:off + n].decode())
    off += n
    (count,) = struct.unpack_from("<Q", buf, off)
    params = np.frombuffer(buf, dtype="<f8", count=count, offset=off + 8).copy()
    return header, params


def write_checkpoint(path, kind: str, spec_blob: dict, params: np.ndarray, extra: dict | None = None):
    Path(path).write_bytes(checkpoint_bytes(kind, spec_blob, params, extra))


def read_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes(), str(path))


def model_to_bytes(model: "ClassifierModel", extra: dict | None = None) -> bytes:
    return checkpoint_bytes("cnn", model.spec.to_dict(), model.params, extra)


def model_from_bytes(buf: bytes, name="checkpoint", dtype=np.float64) -> "ClassifierModel":
    header, params = parse_checkpoint(buf, name)
    if header.get("type") != "cnn":
        raise ValueError(f"{name}: checkpoint type {header.get('type')!r} is not a cnn")
    model = ClassifierModel(NetworkSpec.from_dict(header["spec"]), dtype=dtype)
    if params.size != model.n_params:
        raise ValueError(f"{name}: {params.size} parameters, spec needs {model.n_params}")
    model.params[...] = params
    return model


def save_model(model: ClassifierModel, path, extra: dict | None = None):
    Path(path).write_bytes(model_to_bytes(model, extra))


def load_model(path, dtype=np.float64) -> ClassifierModel:
    return model_from_bytes(Path(path).read_bytes(), str(path), dtype)
