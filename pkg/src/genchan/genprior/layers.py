"""Layer kinds with explicit forward and reverse-mode passes.

Tensors are channels-last: ``(batch, height, width, channels)`` for image
layers and ``(batch, features)`` for dense layers. Each layer's ``forward``
returns ``(output, cache)``; ``backward`` consumes the cache and returns
``(grad_input, param_grads)``.
"""
from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError

BN_EPS = 1e-5


def _same_padding(size, kernel, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int
    tag = 1

    def output_shape(self, shape):
        if shape != (self.n_in,):
            raise ArgumentError(f"Dense expects input shape ({self.n_in},), got {shape}")
        return (self.n_out,)

    def param_shapes(self):
        return {"w": (self.n_in, self.n_out), "b": (self.n_out,)}

    def forward(self, p, x, train, running=None):
        return x @ p["w"] + p["b"], x

    def backward(self, p, cache, dy):
        x = cache
        return dy @ p["w"].T, {"w": x.T @ dy, "b": dy.sum(axis=0)}


@dataclass(frozen=True)
class Reshape:
    shape: tuple
    tag = 2

    def output_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ArgumentError(f"cannot reshape {shape} to {self.shape}")
        return tuple(self.shape)

    def param_shapes(self):
        return {}

    def forward(self, p, x, train, running=None):
        return x.reshape((x.shape[0],) + tuple(self.shape)), x.shape

    def backward(self, p, cache, dy):
        return dy.reshape(cache), {}


@dataclass(frozen=True)
class Upsample2x:
    """Nearest-neighbour 2x2 upsampling (each value replicated)."""

    tag = 3

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ArgumentError(f"Upsample2x expects (h, w, c), got {shape}")
        return (2 * shape[0], 2 * shape[1], shape[2])

    def param_shapes(self):
        return {}

    def forward(self, p, x, train, running=None):
        return x.repeat(2, axis=1).repeat(2, axis=2), None

    def backward(self, p, cache, dy):
        b, h, w, c = dy.shape
        return dy.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4)), {}


@dataclass(frozen=True)
class Conv2D:
    """Square-kernel convolution with zero "same" padding.

    For even kernels the extra padding row/column goes after the input, and
    the output size is ``ceil(size / stride)``.
    """

    kernel: int
    in_ch: int
    out_ch: int
    stride: int = 1
    tag = 4

    def output_shape(self, shape):
        if len(shape) != 3 or shape[2] != self.in_ch:
            raise ArgumentError(f"Conv2D expects (h, w, {self.in_ch}), got {shape}")
        ho = _same_padding(shape[0], self.kernel, self.stride)[0]
        wo = _same_padding(shape[1], self.kernel, self.stride)[0]
        return (ho, wo, self.out_ch)

    def param_shapes(self):
        k = self.kernel
        return {"w": (k, k, self.in_ch, self.out_ch), "b": (self.out_ch,)}

    def _geometry(self, h, w):
        ho, pt, pb = _same_padding(h, self.kernel, self.stride)
        wo, pl, pr = _same_padding(w, self.kernel, self.stride)
        return ho, wo, ((0, 0), (pt, pb), (pl, pr), (0, 0))

    def _window(self, i, j, ho, wo):
        s = self.stride
        return (slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))

    def forward(self, p, x, train, running=None):
        b, h, w, _ = x.shape
        ho, wo, pad = self._geometry(h, w)
        xp = np.pad(x, pad)
        y = np.empty((b, ho, wo, self.out_ch), dtype=np.result_type(x, p["w"]))
        y[...] = p["b"]
        wk = p["w"]
        for i in range(self.kernel):
            for j in range(self.kernel):
                y += xp[self._window(i, j, ho, wo)] @ wk[i, j]
        return y, (xp, x.shape, pad)

    def backward(self, p, cache, dy):
        xp, xshape, pad = cache
        ho, wo = dy.shape[1:3]
        dxp = np.zeros_like(xp)
        dw = np.empty_like(p["w"])
        dy2 = dy.reshape(-1, self.out_ch)
        wk = p["w"]
        for i in range(self.kernel):
            for j in range(self.kernel):
                win = self._window(i, j, ho, wo)
                dw[i, j] = xp[win].reshape(-1, self.in_ch).T @ dy2
                dxp[win] += dy @ wk[i, j].T
        (_, _), (pt, _), (pl, _), _ = pad
        dx = dxp[:, pt:pt + xshape[1], pl:pl + xshape[2], :]
        return dx, {"w": dw, "b": dy2.sum(axis=0)}


@dataclass(frozen=True)
class BatchNorm:
    """Per-channel normalization over every axis except the last.

    Train mode normalizes with batch statistics (computed in float64);
    inference uses the running statistics passed in.
    """

    channels: int
    tag = 5

    def output_shape(self, shape):
        if shape[-1] != self.channels:
            raise ArgumentError(f"BatchNorm expects {self.channels} channels, got {shape}")
        return shape

    def param_shapes(self):
        return {"gamma": (self.channels,), "beta": (self.channels,)}

    def forward(self, p, x, train, running=None):
        axes = tuple(range(x.ndim - 1))
        if train:
            x64 = x.astype(np.float64)
            mean = x64.mean(axis=axes)
            var = x64.var(axis=axes)
            n = x.size // self.channels
        else:
            mean = running["mean"].astype(np.float64)
            var = running["var"].astype(np.float64)
            n = None
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = ((x - mean) * inv).astype(x.dtype)
        y = p["gamma"] * xhat + p["beta"]
        return y, (xhat, inv.astype(x.dtype), train, mean, var, n)

    def backward(self, p, cache, dy):
        xhat, inv, train, _, _, _ = cache
        axes = tuple(range(dy.ndim - 1))
        dgamma = (dy * xhat).sum(axis=axes, dtype=np.float64).astype(dy.dtype)
        dbeta = dy.sum(axis=axes, dtype=np.float64).astype(dy.dtype)
        dxhat = dy * p["gamma"]
        if train:
            mean_d = dxhat.mean(axis=axes, dtype=np.float64)
            mean_dx = (dxhat * xhat).mean(axis=axes, dtype=np.float64)
            dx = (inv * (dxhat - mean_d - xhat * mean_dx)).astype(dy.dtype)
        else:
            dx = dxhat * inv
        return dx, {"gamma": dgamma, "beta": dbeta}


ACTIVATIONS = {"linear": 0, "relu": 1, "leaky_relu": 2}


@dataclass(frozen=True)
class Activation:
    kind: str = "linear"
    slope: float = 0.2
    tag = 6

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.kind!r}")

    def output_shape(self, shape):
        return shape

    def param_shapes(self):
        return {}

    def forward(self, p, x, train, running=None):
        if self.kind == "linear":
            return x, None
        mask = x > 0
        if self.kind == "relu":
            return x * mask, mask
        return np.where(mask, x, x * x.dtype.type(self.slope)), mask

    def backward(self, p, cache, dy):
        if self.kind == "linear":
            return dy, {}
        mask = cache
        if self.kind == "relu":
            return dy * mask, {}
        return np.where(mask, dy, dy * dy.dtype.type(self.slope)), {}


LAYER_KINDS = {cls.tag: cls for cls in (Dense, Reshape, Upsample2x, Conv2D, BatchNorm, Activation)}
