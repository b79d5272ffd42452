"""Flat-vector optimizers. Each `step` updates `params` in place."""
from __future__ import annotations

from enum import Enum

import numpy as np


class OptimizerKind(str, Enum):
    SGDM = "sgdm"
    ADAM = "adam"
    RMSPROP = "rmsprop"


class SGDM:
    def __init__(self, n, momentum=0.9, dtype=np.float64):
        self.momentum = momentum
        self.v = np.zeros(n, dtype=dtype)

    def step(self, params, grads, lr, mask=None):
        g = grads if mask is None else grads * mask
        self.v *= self.momentum
        self.v += g
        params -= lr * self.v


class Adam:
    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float64):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n, dtype=dtype)
        self.v = np.zeros(n, dtype=dtype)
        self.t = 0

    def step(self, params, grads, lr, mask=None):
        g = grads if mask is None else grads * mask
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class RMSProp:
    def __init__(self, n, decay=0.99, eps=1e-8, dtype=np.float64):
        self.decay, self.eps = decay, eps
        self.s = np.zeros(n, dtype=dtype)

    def step(self, params, grads, lr, mask=None):
        g = grads if mask is None else grads * mask
        self.s = self.decay * self.s + (1 - self.decay) * g * g
        params -= lr * g / (np.sqrt(self.s) + self.eps)


def make_optimizer(kind, n, dtype=np.float64):
    kind = OptimizerKind(str(kind.value if isinstance(kind, OptimizerKind) else kind).lower())
    return {OptimizerKind.SGDM: SGDM, OptimizerKind.ADAM: Adam, OptimizerKind.RMSPROP: RMSProp}[kind](n, dtype=dtype)


def optimizer_step(kind_or_opt, params, grads, state=None, lr=1e-3):
    """Functional form: returns (params, state) after one update (params modified in place)."""
    opt = state if state is not None else (
        kind_or_opt if not isinstance(kind_or_opt, (str, OptimizerKind)) else make_optimizer(kind_or_opt, params.size, params.dtype))
    opt.step(params, grads, lr)
    return params, opt
