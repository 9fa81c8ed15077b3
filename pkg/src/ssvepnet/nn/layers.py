"""Layers with hand-written forward and backward passes.

Tensors are plain float64 ``numpy`` arrays, batch first. Each layer owns
``params`` and same-shaped ``grads``; names listed in ``decay`` receive the L2
penalty (weights and kernels, never biases or batch-norm affine terms).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, StateError
from ..rng import make_rng


class Layer:
    kind = "layer"
    decay: tuple = ()

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.need_input_grad = True

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, in_shape):
        return in_shape

    def config(self) -> dict:
        return {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


def _uniform_fan_in(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1d(Layer):
    """Valid 1-D cross-correlation. Weight shape ``(out, in, kernel)``."""

    kind = "conv1d"
    decay = ("w",)

    def __init__(self, in_channels, out_channels, kernel, stride=1, seed=0):
        super().__init__()
        if kernel < 1 or stride < 1:
            raise ConfigError("kernel and stride must be >= 1")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.seed = kernel, stride, seed
        rng = make_rng(seed)
        self.params["w"] = _uniform_fan_in(rng, (out_channels, in_channels, kernel), in_channels * kernel)
        self.params["b"] = np.zeros(out_channels)
        self._init_grads()

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel, "stride": self.stride, "seed": self.seed}

    def out_length(self, length):
        if length < self.kernel:
            raise ConfigError(f"conv1d input length {length} shorter than kernel {self.kernel}")
        return (length - self.kernel) // self.stride + 1

    def output_shape(self, in_shape):
        return (self.out_channels, self.out_length(in_shape[1]))

    def forward(self, x, train=False):
        b, c, length = x.shape
        if c != self.in_channels:
            raise ConfigError(f"conv1d expects {self.in_channels} channels, got {c}")
        lout = self.out_length(length)
        win = sliding_window_view(x, self.kernel, axis=2)[:, :, ::self.stride, :]
        cols = win.transpose(0, 2, 1, 3).reshape(b, lout, c * self.kernel)
        w2 = self.params["w"].reshape(self.out_channels, -1)
        out = cols @ w2.T + self.params["b"]
        self._cache = (cols, x.shape)
        return np.ascontiguousarray(out.transpose(0, 2, 1))

    def backward(self, grad):
        cols, in_shape = self._cache
        b, c, length = in_shape
        g = grad.transpose(0, 2, 1)                      # (b, lout, f)
        lout = g.shape[1]
        self.grads["w"] += np.tensordot(g, cols, axes=([0, 1], [0, 1])).reshape(self.params["w"].shape)
        self.grads["b"] += g.sum(axis=(0, 1))
        if not self.need_input_grad:
            return None
        dcols = (g @ self.params["w"].reshape(self.out_channels, -1)).reshape(b, lout, c, self.kernel)
        dx = np.zeros(in_shape)
        span = self.stride * (lout - 1) + 1
        for j in range(self.kernel):
            dx[:, :, j:j + span:self.stride] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dx


class BatchNorm1d(Layer):
    """Per-channel normalisation over batch (and length for 3-D input)."""

    kind = "batchnorm1d"

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.buffers["tracked"] = np.zeros(1)
        self._init_grads()

    def config(self):
        return {"channels": self.channels, "eps": self.eps, "momentum": self.momentum}

    def _axes(self, x):
        return (0, 2) if x.ndim == 3 else (0,)

    def _bcast(self, v, x):
        return v[None, :, None] if x.ndim == 3 else v[None, :]

    def forward(self, x, train=False):
        axes = self._axes(x)
        if train:
            n = int(np.prod([x.shape[a] for a in axes]))
            if n < 2:
                raise ConfigError("batch norm in train mode needs at least 2 values per channel")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var * n / (n - 1)
            self.buffers["tracked"] = self.buffers["tracked"] + 1
        else:
            if not self.buffers["tracked"][0]:
                raise StateError("batch norm used in eval mode before any training statistics")
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        self._cache = (xhat, inv_std, train, axes)
        return self._bcast(self.params["gamma"], x) * xhat + self._bcast(self.params["beta"], x)

    def backward(self, grad):
        xhat, inv_std, train, axes = self._cache
        self.grads["gamma"] += np.sum(grad * xhat, axis=axes)
        self.grads["beta"] += np.sum(grad, axis=axes)
        dxhat = grad * self._bcast(self.params["gamma"], grad)
        if not train:
            return dxhat * self._bcast(inv_std, grad)
        n = int(np.prod([grad.shape[a] for a in axes]))
        s1 = self._bcast(dxhat.sum(axis=axes), grad)
        s2 = self._bcast(np.sum(dxhat * xhat, axis=axes), grad)
        return self._bcast(inv_std, grad) / n * (n * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class MaxPool1d(Layer):
    """Non-overlapping windows of size ``k``; a trailing remainder is dropped."""

    kind = "maxpool1d"

    def __init__(self, k):
        super().__init__()
        if k < 1:
            raise ConfigError("pool window must be >= 1")
        self.k = k

    def config(self):
        return {"k": self.k}

    def output_shape(self, in_shape):
        if in_shape[1] < self.k:
            raise ConfigError(f"maxpool input length {in_shape[1]} shorter than window {self.k}")
        return (in_shape[0], in_shape[1] // self.k)

    def forward(self, x, train=False):
        b, c, length = x.shape
        if length < self.k:
            raise ConfigError(f"maxpool input length {length} shorter than window {self.k}")
        lout = length // self.k
        win = x[:, :, :lout * self.k].reshape(b, c, lout, self.k)
        idx = np.argmax(win, axis=3)              # first index on ties
        self._cache = (idx, x.shape)
        return np.take_along_axis(win, idx[..., None], axis=3)[..., 0]

    def backward(self, grad):
        idx, shape = self._cache
        b, c, length = shape
        lout = grad.shape[2]
        dwin = np.zeros((b, c, lout, self.k))
        np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=3)
        dx = np.zeros(shape)
        dx[:, :, :lout * self.k] = dwin.reshape(b, c, lout * self.k)
        return dx


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dropout(Layer):
    """Inverted dropout. ``frozen`` replays the last mask (for gradient checks)."""

    kind = "dropout"

    def __init__(self, p=0.5, seed=0):
        super().__init__()
        if not 0 <= p < 1:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
        self.p, self.seed = p, seed
        self.rng = make_rng(seed)
        self.frozen = False
        self._mask = None

    def config(self):
        return {"p": self.p, "seed": self.seed}

    def forward(self, x, train=False):
        if not train or self.p == 0:
            self._mask = None
            return x
        if not (self.frozen and self._mask is not None and self._mask.shape == x.shape):
            self._mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Dense(Layer):
    """Affine map ``x @ w + b`` with ``w`` of shape ``(d_in, d_out)``."""

    kind = "dense"
    decay = ("w",)

    def __init__(self, d_in, d_out, seed=0):
        super().__init__()
        self.d_in, self.d_out, self.seed = d_in, d_out, seed
        rng = make_rng(seed)
        self.params["w"] = _uniform_fan_in(rng, (d_in, d_out), d_in)
        self.params["b"] = np.zeros(d_out)
        self._init_grads()

    def config(self):
        return {"d_in": self.d_in, "d_out": self.d_out, "seed": self.seed}

    def output_shape(self, in_shape):
        if in_shape != (self.d_in,):
            raise ConfigError(f"dense expects input ({self.d_in},), got {in_shape}")
        return (self.d_out,)

    def forward(self, x, train=False):
        if x.shape[-1] != self.d_in:
            raise ConfigError(f"dense expects {self.d_in} features, got {x.shape[-1]}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, grad):
        self.grads["w"] += self._x.T @ grad
        self.grads["b"] += grad.sum(axis=0)
        if not self.need_input_grad:
            return None
        return grad @ self.params["w"].T


def relu(x):
    return np.maximum(x, 0.0)
