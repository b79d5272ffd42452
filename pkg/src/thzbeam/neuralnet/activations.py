from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit


class ActivationKind(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    SWISH = "swish"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class Activation:
    kind: ActivationKind = ActivationKind.RELU
    slope: float = 0.01  # LeakyReLU only

    def __post_init__(self):
        object.__setattr__(self, "kind", ActivationKind(self.kind))
        if self.kind is ActivationKind.LEAKY_RELU and not 0 < self.slope < 1:
            raise ValueError(f"LeakyReLU slope must lie in (0, 1), got {self.slope}")

    @classmethod
    def parse(cls, value: "Activation | str | ActivationKind") -> "Activation":
        """'swish', 'relu', 'sigmoid', 'leaky_relu' or 'leaky_relu:0.2'."""
        if isinstance(value, Activation):
            return value
        if isinstance(value, ActivationKind):
            return cls(value)
        name, _, slope = str(value).lower().partition(":")
        return cls(ActivationKind(name), float(slope)) if slope else cls(ActivationKind(name))

    def __str__(self) -> str:
        if self.kind is ActivationKind.LEAKY_RELU:
            return f"leaky_relu:{self.slope:g}"
        return self.kind.value

    def __call__(self, x):
        return activation(self, x)

    def grad(self, x):
        return activation_grad(self, x)


def activation(kind, x):
    kind = Activation.parse(kind)
    x = np.asarray(x)
    if kind.kind is ActivationKind.RELU:
        return np.maximum(x, 0)
    if kind.kind is ActivationKind.LEAKY_RELU:
        return np.where(x > 0, x, kind.slope * x)
    if kind.kind is ActivationKind.SWISH:
        return x * expit(x)
    return expit(x)


def activation_grad(kind, x):
    """Elementwise derivative; ReLU-family kinks take the right-hand value at 0 only for x > 0."""
    kind = Activation.parse(kind)
    x = np.asarray(x)
    if kind.kind is ActivationKind.RELU:
        return (x > 0).astype(x.dtype if x.dtype.kind == "f" else float)
    if kind.kind is ActivationKind.LEAKY_RELU:
        return np.where(x > 0, 1.0, kind.slope)
    s = expit(x)
    if kind.kind is ActivationKind.SWISH:
        # d/dx x s(x) = s + x s (1 - s)
        return s + x * s * (1 - s)
    return s * (1 - s)
