"""Forward and backward passes for every layer the network uses.

Layers accept activations shaped [H, W, C] or batched [N, H, W, C] and
preserve the rank. Each layer caches what its backward pass needs on the
instance, so the usage pattern is strictly forward-then-backward. All
math runs in the dtype of the incoming arrays.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import DTYPE, he_init


def _as_batch(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected rank 3 or 4, got rank {x.ndim}")


def _windows(x, k):
    """Sliding [k, k] windows over a [N, H, W, C] array (view, no copy)."""
    n, h, w, c = x.shape
    sn, sh, sw, sc = x.strides
    shape = (n, h - k + 1, w - k + 1, k, k, c)
    return as_strided(x, shape=shape, strides=(sn, sh, sw, sh, sw, sc), writeable=False)


class Conv2D:
    """Same-padding cross-correlation, stride 1, odd square kernel, per-filter bias."""

    def __init__(self, in_channels, filters, kernel_size=3, rng=None, dtype=DTYPE):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel_size}")
        if in_channels < 1 or filters < 1:
            raise ValueError("in_channels and filters must be >= 1")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        fan_in = kernel_size * kernel_size * in_channels
        if rng is None:
            self.w = np.zeros((kernel_size, kernel_size, in_channels, filters), dtype=dtype)
        else:
            self.w = he_init((kernel_size, kernel_size, in_channels, filters), fan_in, rng, dtype=dtype)
        self.b = np.zeros(filters, dtype=dtype)
        self.dw = None
        self.db = None
        self._cache = None

    def forward(self, x):
        xb, squeeze = _as_batch(x)
        if xb.shape[-1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {xb.shape[-1]}")
        p = (self.kernel_size - 1) // 2
        xp = np.pad(xb, ((0, 0), (p, p), (p, p), (0, 0))) if p else xb
        cols = _windows(xp, self.kernel_size)
        y = np.tensordot(cols, self.w, axes=([3, 4, 5], [0, 1, 2])) + self.b
        self._cache = (xp, squeeze)
        return y[0] if squeeze else y

    def backward(self, dout):
        xp, squeeze = self._cache
        dy, _ = _as_batch(dout)
        k = self.kernel_size
        p = (k - 1) // 2
        cols = _windows(xp, k)
        self.dw = np.tensordot(cols, dy, axes=([0, 1, 2], [0, 1, 2]))
        self.db = dy.sum(axis=(0, 1, 2))
        # dx is the correlation of the padded upstream gradient with the
        # spatially flipped kernel, in/out channels swapped.
        dyp = np.pad(dy, ((0, 0), (p, p), (p, p), (0, 0))) if p else dy
        wf = self.w[::-1, ::-1].transpose(0, 1, 3, 2)
        dx = np.tensordot(_windows(dyp, k), wf, axes=([3, 4, 5], [0, 1, 2]))
        return dx[0] if squeeze else dx

    def params(self, prefix):
        return [(prefix + ".w", self.w, self.dw), (prefix + ".b", self.b, self.db)]

    def state(self, prefix):
        return [(prefix + ".w", self.w), (prefix + ".b", self.b)]


class BatchNorm:
    """Per-channel standardization with learned scale/shift.

    Train mode normalizes with statistics taken jointly over the batch
    and spatial axes and updates the running estimates; infer mode uses
    the running estimates only. Variance is the biased (1/M) estimate in
    both the normalization and the running update.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=DTYPE):
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must be in (0,1), got {momentum}")
        if eps <= 0.0:
            raise ValueError(f"eps must be > 0, got {eps}")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.dgamma = None
        self.dbeta = None
        self._cache = None

    def forward(self, x, train=True):
        xb, squeeze = _as_batch(x)
        if xb.shape[-1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {xb.shape[-1]}")
        axes = (0, 1, 2)
        if train:
            mean = xb.mean(axis=axes)
            var = xb.var(axis=axes)
            inv_std = 1.0 / np.sqrt(var + np.asarray(self.eps, dtype=xb.dtype))
            xhat = (xb - mean) * inv_std
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1.0 - m) * mean).astype(xb.dtype)
            self.running_var = (m * self.running_var + (1.0 - m) * var).astype(xb.dtype)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + np.asarray(self.eps, dtype=xb.dtype))
            xhat = (xb - self.running_mean) * inv_std
        y = self.gamma * xhat + self.beta
        self._cache = (xhat, inv_std, train, squeeze)
        return y[0] if squeeze else y

    def backward(self, dout):
        xhat, inv_std, train, squeeze = self._cache
        dy, _ = _as_batch(dout)
        axes = (0, 1, 2)
        self.dgamma = (dy * xhat).sum(axis=axes)
        self.dbeta = dy.sum(axis=axes)
        dxhat = dy * self.gamma
        if train:
            m = float(np.prod([xhat.shape[a] for a in axes]))
            dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        else:
            dx = dxhat * inv_std
        return dx[0] if squeeze else dx

    def params(self, prefix):
        return [(prefix + ".gamma", self.gamma, self.dgamma), (prefix + ".beta", self.beta, self.dbeta)]

    def state(self, prefix):
        return [
            (prefix + ".gamma", self.gamma),
            (prefix + ".beta", self.beta),
            (prefix + ".running_mean", self.running_mean),
            (prefix + ".running_var", self.running_var),
        ]


class ReLU:
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, np.asarray(0, dtype=x.dtype))

    def backward(self, dout):
        return np.where(self._mask, dout, np.asarray(0, dtype=dout.dtype))


class Sigmoid:
    def forward(self, x):
        y = 1.0 / (1.0 + np.exp(-x))
        self._y = y
        return y

    def backward(self, dout):
        return dout * self._y * (1.0 - self._y)


class MaxPool2x2:
    """Non-overlapping 2x2 max pooling; backward routes each upstream
    gradient to the argmax position of its window (first max on ties)."""

    def forward(self, x):
        xb, squeeze = _as_batch(x)
        n, h, w, c = xb.shape
        if h % 2 or w % 2:
            raise ValueError(f"spatial dims must be even for 2x2 pooling, got {h}x{w}")
        ho, wo = h // 2, w // 2
        xr = xb.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, ho, wo, 4, c)
        idx = xr.argmax(axis=3)
        y = np.take_along_axis(xr, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        self._cache = (idx, xb.shape, squeeze)
        return y[0] if squeeze else y

    def backward(self, dout):
        idx, xshape, squeeze = self._cache
        dy, _ = _as_batch(dout)
        n, h, w, c = xshape
        ho, wo = h // 2, w // 2
        g = np.zeros((n, ho, wo, 4, c), dtype=dy.dtype)
        np.put_along_axis(g, idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
        dx = g.reshape(n, ho, wo, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h, w, c)
        return dx[0] if squeeze else dx


class Upsample2x2:
    """Nearest-neighbor x2 replication; backward sums over each 2x2 block."""

    def forward(self, x):
        xb, squeeze = _as_batch(x)
        self._squeeze = squeeze
        y = xb.repeat(2, axis=1).repeat(2, axis=2)
        return y[0] if squeeze else y

    def backward(self, dout):
        dy, _ = _as_batch(dout)
        n, h2, w2, c = dy.shape
        dx = dy.reshape(n, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))
        return dx[0] if self._squeeze else dx


class Dropout:
    """Inverted dropout: zero with probability `rate` in train mode and
    scale survivors by 1/(1-rate); identity in infer mode."""

    def __init__(self, rate, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"rate must be in [0,1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x, train=True, mask=None):
        if not train or self.rate == 0.0:
            self._cache = None
            return x
        if mask is None:
            mask = self.rng.uniform(x.shape, dtype=np.float64) >= self.rate
        scale = np.asarray(1.0 / (1.0 - self.rate), dtype=x.dtype)
        self._cache = (mask, scale)
        return np.where(mask, x * scale, np.asarray(0, dtype=x.dtype))

    def backward(self, dout):
        if self._cache is None:
            return dout
        mask, scale = self._cache
        return np.where(mask, dout * scale, np.asarray(0, dtype=dout.dtype))
