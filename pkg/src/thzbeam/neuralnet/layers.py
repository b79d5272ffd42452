"""NHWC layers with explicit forward/backward passes.

Parameters are bound as views into the owning network's flat parameter and
gradient vectors, so optimizers only ever see two 1-D arrays.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from scipy.special import expit

from .activations import Activation, ActivationKind


class Layer:
    params: list
    grads: list

    def param_shapes(self, in_shape) -> list[tuple]:
        return []

    def output_shape(self, in_shape):
        return in_shape

    def bind(self, params, grads):
        self.params, self.grads = list(params), list(grads)

    def init(self, rng):
        pass

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


_IM2COL_MAX_CHANNELS = 4


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape)


class Conv2D(Layer):
    """Stride-1 'same' convolution, weights (k, k, C_in, C_out)."""

    def __init__(self, c_in, c_out, k, input_grad=True):
        if k % 2 != 1:
            raise ValueError("kernel size must be odd for 'same' padding")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.input_grad = input_grad

    def param_shapes(self, in_shape):
        return [(self.k, self.k, self.c_in, self.c_out), (self.c_out,)]

    def output_shape(self, in_shape):
        h, w, _ = in_shape
        return (h, w, self.c_out)

    def init(self, rng):
        w, b = self.params
        w[...] = _he_uniform(rng, w.shape, self.k * self.k * self.c_in)
        b[...] = 0.0

    def forward(self, x, train=False, rng=None):
        w, b = self.params
        bsz, h, wd, c = x.shape
        k, p = self.k, self.k // 2
        if k == 1:
            self._cache = x
            return x @ w[0, 0] + b
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        self._cache = xp
        if c <= _IM2COL_MAX_CHANNELS:
            # thin inputs: one im2col matmul beats k*k skinny ones
            win = sliding_window_view(xp, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
            self._cols = win.reshape(-1, k * k * c)
            return (self._cols @ w.reshape(-1, self.c_out) + b).reshape(bsz, h, wd, self.c_out)
        self._cols = None
        # otherwise one matmul per kernel tap, which avoids the large column buffer
        out = np.empty((bsz, h, wd, self.c_out), dtype=np.result_type(x, w))
        out[...] = b
        o2 = out.reshape(-1, self.c_out)
        for i in range(k):
            for j in range(k):
                o2 += xp[:, i:i + h, j:j + wd, :].reshape(-1, c) @ w[i, j]
        return out

    def backward(self, dout):
        w, _ = self.params
        gw, gb = self.grads
        k, p = self.k, self.k // 2
        d2 = dout.reshape(-1, self.c_out)
        gb[...] = d2.sum(axis=0)
        if k == 1:
            x = self._cache
            gw[0, 0] = x.reshape(-1, self.c_in).T @ d2
            return (d2 @ w[0, 0].T).reshape(x.shape) if self.input_grad else None
        xp = self._cache
        bsz, hp, wp, c = xp.shape
        h, wd = hp - 2 * p, wp - 2 * p
        if self._cols is not None:
            gw[...] = (self._cols.T @ d2).reshape(gw.shape)
        dxp = np.zeros_like(xp, dtype=dout.dtype) if self.input_grad else None
        for i in range(k):
            for j in range(k):
                if self._cols is None:
                    gw[i, j] = xp[:, i:i + h, j:j + wd, :].reshape(-1, c).T @ d2
                if dxp is not None:
                    dxp[:, i:i + h, j:j + wd, :] += (d2 @ w[i, j].T).reshape(bsz, h, wd, c)
        return None if dxp is None else dxp[:, p:p + h, p:p + wd, :]


class ActivationLayer(Layer):
    def __init__(self, act: Activation):
        self.act = Activation.parse(act)

    def forward(self, x, train=False, rng=None):
        self._x = x
        if self.act.kind is ActivationKind.SWISH:
            self._sig = expit(x)
            return x * self._sig
        return self.act(x)

    def backward(self, dout):
        if self.act.kind is ActivationKind.SWISH:
            s = self._sig
            return dout * (s + self._x * s * (1 - s))
        return dout * self.act.grad(self._x)


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    def output_shape(self, in_shape):
        h, w, c = in_shape
        return (h // 2, w // 2, c)

    def forward(self, x, train=False, rng=None):
        bsz, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        taps = [x[:, i:2 * h2:2, j:2 * w2:2] for i in (0, 1) for j in (0, 1)]
        out = np.maximum(np.maximum(taps[0], taps[1]), np.maximum(taps[2], taps[3]))
        # first tap (row-major within the window) holding the max receives the gradient
        masks, taken = [], np.zeros(out.shape, dtype=bool)
        for t in taps:
            hit = (t == out) & ~taken
            taken |= hit
            masks.append(hit)
        self._cache = (masks, x.shape)
        return out

    def backward(self, dout):
        masks, xshape = self._cache
        h2, w2 = xshape[1] // 2, xshape[2] // 2
        dx = np.zeros(xshape, dtype=dout.dtype)
        for (i, j), m in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
            dx[:, i:2 * h2:2, j:2 * w2:2] = dout * m
        return dx


class MaxPool3Same(Layer):
    """3x3 max pooling, stride 1, -inf padding (the inception pool branch)."""

    def forward(self, x, train=False, rng=None):
        bsz, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), constant_values=-np.inf)
        out = np.full(x.shape, -np.inf, dtype=x.dtype)
        for i in range(3):
            for j in range(3):
                np.maximum(out, xp[:, i:i + h, j:j + w], out=out)
        self._cache = (xp, out)
        return out

    def backward(self, dout):
        xp, out = self._cache
        bsz, h, w, c = out.shape
        dxp = np.zeros(xp.shape, dtype=dout.dtype)
        taken = np.zeros(out.shape, dtype=bool)
        for i in range(3):
            for j in range(3):
                hit = (xp[:, i:i + h, j:j + w] == out) & ~taken
                taken |= hit
                dxp[:, i:i + h, j:j + w] += np.where(hit, dout, 0.0)
        return dxp[:, 1:1 + h, 1:1 + w]


class Inception(Layer):
    """Parallel 1x1 / 3x3 / 5x5 convolutions and a pooled 1x1 projection, concatenated.

    The block's activation is applied once, after the filter concatenation.
    """

    def __init__(self, c_in, w1, w3, w5, wp, act: Activation):
        self.c_in = c_in
        self.widths = (w1, w3, w5, wp)
        self.b1 = Conv2D(c_in, w1, 1)
        self.b3 = Conv2D(c_in, w3, 3)
        self.b5 = Conv2D(c_in, w5, 5)
        self.pool = MaxPool3Same()
        self.bp = Conv2D(c_in, wp, 1)
        self.act = ActivationLayer(act)
        self.convs = (self.b1, self.b3, self.b5, self.bp)

    @property
    def c_out(self):
        return sum(self.widths)

    def param_shapes(self, in_shape):
        return [s for conv in self.convs for s in conv.param_shapes(in_shape)]

    def output_shape(self, in_shape):
        h, w, _ = in_shape
        return (h, w, self.c_out)

    def bind(self, params, grads):
        super().bind(params, grads)
        for i, conv in enumerate(self.convs):
            conv.bind(params[2 * i:2 * i + 2], grads[2 * i:2 * i + 2])

    def init(self, rng):
        for conv in self.convs:
            conv.init(rng)

    def forward(self, x, train=False, rng=None):
        z = np.concatenate([self.b1.forward(x), self.b3.forward(x), self.b5.forward(x),
                            self.bp.forward(self.pool.forward(x))], axis=-1)
        return self.act.forward(z)

    def backward(self, dout):
        dz = self.act.backward(dout)
        splits = np.cumsum(self.widths)[:-1]
        d1, d3, d5, dp = np.split(dz, splits, axis=-1)
        dx = self.b1.backward(d1) + self.b3.backward(d3) + self.b5.backward(d5)
        dx += self.pool.backward(self.bp.backward(dp))
        return dx


class AvgPoolGrid(Layer):
    """Average over a g x g grid of cells then flatten; g = 1 is global average pooling."""

    def __init__(self, grid=1):
        self.grid = grid

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if h % self.grid or w % self.grid:
            raise ValueError(f"feature map {h}x{w} not divisible by pooling grid {self.grid}")
        return (self.grid * self.grid * c,)

    def forward(self, x, train=False, rng=None):
        bsz, h, w, c = x.shape
        g = self.grid
        self._shape = x.shape
        cells = x.reshape(bsz, g, h // g, g, w // g, c).mean(axis=(2, 4))
        return cells.reshape(bsz, -1)

    def backward(self, dout):
        bsz, h, w, c = self._shape
        g = self.grid
        d = dout.reshape(bsz, g, 1, g, 1, c) / ((h // g) * (w // g))
        return np.broadcast_to(d, (bsz, g, h // g, g, w // g, c)).reshape(self._shape).copy()


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-rate); identity in eval mode."""

    def __init__(self, rate):
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1 - self.rate)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Linear(Layer):
    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out

    def param_shapes(self, in_shape):
        return [(self.n_in, self.n_out), (self.n_out,)]

    def output_shape(self, in_shape):
        return (self.n_out,)

    def init(self, rng):
        w, b = self.params
        w[...] = _he_uniform(rng, w.shape, self.n_in)
        b[...] = 0.0

    def forward(self, x, train=False, rng=None):
        self._x = x
        w, b = self.params
        return x @ w + b

    def backward(self, dout):
        w, _ = self.params
        gw, gb = self.grads
        gw[...] = self._x.T @ dout
        gb[...] = dout.sum(axis=0)
        return dout @ w.T
