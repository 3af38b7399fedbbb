"""Forward/backward layers operating on ``(height, width, channels, batch)`` maps.

Every layer is stateless between calls: ``forward`` returns ``(out, cache)``
and ``backward(cache, grad_out)`` returns ``(grad_in, param_grads)``. This
keeps a layer object safe to share between networks (grafting) and between
workers processing different samples.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, LabelError, StateError
from .tensor import as_feature_map

LRN_ALPHA = 2.0
LRN_BETA = 1e-4
LRN_GAMMA = 0.75
LRN_SIGMA = 2.5


def _check_cache(cache):
    if cache is None:
        raise StateError("backward called without a cached forward state")
    return cache


class Layer:
    kind = "layer"
    params = {}

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def config(self):
        return {}

    def astype(self, dtype):
        for name, value in self.params.items():
            self.params[name] = value.astype(dtype)
        return self

    def copy(self):
        new = type(self).__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new


class Conv2D(Layer):
    """Dense convolution followed by ReLU.

    ``kernel`` has shape ``(kh, kw, in_channels, out_channels)``; every input
    channel feeds every output channel.
    """

    kind = "conv"

    def __init__(self, kernel, bias, stride=1, pad=0, relu=True):
        kernel = np.asarray(kernel)
        bias = np.asarray(bias, dtype=kernel.dtype)
        if kernel.ndim != 4:
            raise DimensionError("conv kernel must be (kh, kw, in, out)")
        if bias.shape != (kernel.shape[3],):
            raise DimensionError("conv bias must have one entry per output channel")
        if stride < 1 or pad < 0:
            raise DimensionError("stride must be >= 1 and pad >= 0")
        self.params = {"kernel": kernel, "bias": bias}
        self.stride = int(stride)
        self.pad = int(pad)
        self.relu = relu

    @property
    def in_channels(self):
        return self.params["kernel"].shape[2]

    @property
    def out_channels(self):
        return self.params["kernel"].shape[3]

    def config(self):
        kh, kw, _, out = self.params["kernel"].shape
        return {"out": out, "kh": kh, "kw": kw, "stride": self.stride, "pad": self.pad}

    def output_shape(self, input_shape):
        h, w, c = input_shape
        kh, kw, cin, cout = self.params["kernel"].shape
        if c != cin:
            raise DimensionError(f"conv expects {cin} input channels, got {c}")
        ho = (h + 2 * self.pad - kh) // self.stride + 1
        wo = (w + 2 * self.pad - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"conv output would be empty for input {input_shape}")
        return (ho, wo, cout)

    def _windows(self, xp):
        kh, kw = self.params["kernel"].shape[:2]
        win = sliding_window_view(xp, (kh, kw), axis=(0, 1))
        return win[:: self.stride, :: self.stride]

    def forward(self, x):
        x = as_feature_map(x)
        self.output_shape(x.shape[:3])
        p = self.pad
        xp = np.pad(x, ((p, p), (p, p), (0, 0), (0, 0))) if p else x
        win = self._windows(xp)  # (ho, wo, c, n, kh, kw)
        z = np.tensordot(win, self.params["kernel"], axes=([4, 5, 2], [0, 1, 2]))
        z = z.transpose(0, 1, 3, 2) + self.params["bias"][:, None]
        out = np.maximum(z, 0) if self.relu else z
        return out, (xp, z, x.shape)

    def backward(self, cache, grad_out):
        xp, z, in_shape = _check_cache(cache)
        if grad_out.shape != z.shape:
            raise DimensionError("grad_out shape does not match forward output")
        gz = grad_out * (z > 0) if self.relu else grad_out
        kernel = self.params["kernel"]
        kh, kw = kernel.shape[:2]
        s = self.stride
        ho, wo = gz.shape[:2]

        win = self._windows(xp)
        dk = np.tensordot(win, gz, axes=([0, 1, 3], [0, 1, 3]))  # (c, kh, kw, out)
        dk = dk.transpose(1, 2, 0, 3)
        db = gz.sum(axis=(0, 1, 3))

        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(gz, kernel[i, j], axes=([2], [1]))  # (ho, wo, n, c)
                dxp[i : i + s * ho : s, j : j + s * wo : s] += contrib.transpose(0, 1, 3, 2)
        p = self.pad
        dx = dxp[p : p + in_shape[0], p : p + in_shape[1]] if p else dxp
        return dx, {"kernel": dk.astype(kernel.dtype, copy=False), "bias": db}


def lrn_window(n, channels, sigma=LRN_SIGMA):
    """Inclusive channel range summed for channel ``n``."""
    lo = max(0, math.ceil(n - sigma))
    hi = min(channels - 1, math.floor(n + sigma))
    return lo, hi


def lrn_band(channels, sigma=LRN_SIGMA, dtype=np.float64):
    """Matrix ``M`` with ``M[j, n] = 1`` when channel ``j`` is in ``n``'s window."""
    band = np.zeros((channels, channels), dtype=dtype)
    for n in range(channels):
        lo, hi = lrn_window(n, channels, sigma)
        band[lo : hi + 1, n] = 1
    return band


class LRN(Layer):
    """Cross-channel local response normalisation."""

    kind = "lrn"

    def __init__(self, alpha=LRN_ALPHA, beta=LRN_BETA, gamma=LRN_GAMMA, sigma=LRN_SIGMA):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.sigma = sigma
        self.params = {}

    def config(self):
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "sigma": self.sigma}

    def forward(self, x):
        x = as_feature_map(x)
        band = lrn_band(x.shape[2], self.sigma, x.dtype)
        sumsq = np.matmul((x * x).transpose(0, 1, 3, 2), band).transpose(0, 1, 3, 2)
        denom = self.alpha + self.beta * sumsq
        scale = denom ** (-self.gamma)
        return x * scale, (x, denom, band)

    def backward(self, cache, grad_out):
        x, denom, band = _check_cache(cache)
        if grad_out.shape != x.shape:
            raise DimensionError("grad_out shape does not match forward output")
        direct = grad_out * denom ** (-self.gamma)
        inner = grad_out * x * denom ** (-self.gamma - 1)
        cross = np.matmul(inner.transpose(0, 1, 3, 2), band.T).transpose(0, 1, 3, 2)
        dx = direct - 2 * self.beta * self.gamma * x * cross
        return dx, {}


class SubSample(Layer):
    """Non-overlapping ``T x T`` average pooling with per-channel scale and bias."""

    kind = "subsample"

    def __init__(self, window, scale, bias):
        scale = np.asarray(scale)
        bias = np.asarray(bias, dtype=scale.dtype)
        if window < 1:
            raise DimensionError("sub-sampling window must be positive")
        if scale.ndim != 1 or bias.shape != scale.shape:
            raise DimensionError("scale and bias must be per-channel vectors")
        self.window = int(window)
        self.params = {"scale": scale, "bias": bias}

    def config(self):
        return {"window": self.window}

    def output_shape(self, input_shape):
        h, w, c = input_shape
        t = self.window
        if h < t or w < t:
            raise DimensionError(f"spatial extent {h}x{w} smaller than window {t}")
        if c != self.params["scale"].shape[0]:
            raise DimensionError(f"sub-sampling expects {self.params['scale'].shape[0]} channels, got {c}")
        return (h // t, w // t, c)

    def forward(self, x):
        x = as_feature_map(x)
        ho, wo, c = self.output_shape(x.shape[:3])
        t = self.window
        n = x.shape[3]
        blocks = x[: ho * t, : wo * t].reshape(ho, t, wo, t, c, n)
        sums = blocks.sum(axis=(1, 3))
        k = self.params["scale"][:, None]
        out = k / (t * t) * sums + self.params["bias"][:, None]
        return out, (sums, x.shape)

    def backward(self, cache, grad_out):
        sums, in_shape = _check_cache(cache)
        if grad_out.shape != sums.shape:
            raise DimensionError("grad_out shape does not match forward output")
        t = self.window
        ho, wo, c, n = grad_out.shape
        k = self.params["scale"][:, None]
        g = grad_out * (k / (t * t))
        dx = np.zeros(in_shape, dtype=grad_out.dtype)
        dx[: ho * t, : wo * t] = np.broadcast_to(
            g[:, None, :, None], (ho, t, wo, t, c, n)
        ).reshape(ho * t, wo * t, c, n)
        dscale = (grad_out * sums).sum(axis=(0, 1, 3)) / (t * t)
        dbias = grad_out.sum(axis=(0, 1, 3))
        return dx, {"scale": dscale, "bias": dbias}


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, window, stride=None):
        if window < 1:
            raise DimensionError("pool window must be positive")
        self.window = int(window)
        self.stride = int(stride or window)
        self.params = {}

    def config(self):
        return {"window": self.window, "stride": self.stride}

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if self.window > h or self.window > w:
            raise DimensionError(f"pool window {self.window} exceeds extent {h}x{w}")
        return ((h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1, c)

    def forward(self, x):
        x = as_feature_map(x)
        ho, wo, _ = self.output_shape(x.shape[:3])
        k = self.window
        win = sliding_window_view(x, (k, k), axis=(0, 1))[:: self.stride, :: self.stride]
        flat = win.reshape(*win.shape[:4], k * k)
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return out, (idx, x.shape)

    def backward(self, cache, grad_out):
        idx, in_shape = _check_cache(cache)
        if grad_out.shape != idx.shape:
            raise DimensionError("grad_out shape does not match forward output")
        k, s = self.window, self.stride
        ho, wo, c, n = idx.shape
        dx = np.zeros(in_shape, dtype=grad_out.dtype)
        di, dj = np.divmod(idx, k)
        rows = np.arange(ho)[:, None, None, None] * s + di
        cols = np.arange(wo)[None, :, None, None] * s + dj
        chans = np.broadcast_to(np.arange(c)[None, None, :, None], idx.shape)
        batch = np.broadcast_to(np.arange(n)[None, None, None, :], idx.shape)
        np.add.at(dx, (rows, cols, chans, batch), grad_out)
        return dx, {}


class Flatten(Layer):
    """``(h, w, c, n)`` map to ``(n, h*w*c)`` rows, row-major per sample."""

    kind = "flatten"

    def __init__(self):
        self.params = {}

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        x = as_feature_map(x)
        n = x.shape[3]
        return np.ascontiguousarray(x.transpose(3, 0, 1, 2)).reshape(n, -1), x.shape

    def backward(self, cache, grad_out):
        shape = _check_cache(cache)
        h, w, c, n = shape
        return grad_out.reshape(n, h, w, c).transpose(1, 2, 3, 0), {}


class FullyConnected(Layer):
    """Affine layer ``x @ W + b``; ReLU applied when ``hidden``."""

    kind = "fc"

    def __init__(self, weight, bias, hidden=True):
        weight = np.asarray(weight)
        bias = np.asarray(bias, dtype=weight.dtype)
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise DimensionError("fc weight must be (in, out) with an (out,) bias")
        self.params = {"weight": weight, "bias": bias}
        self.hidden = hidden

    @property
    def fan_in(self):
        return self.params["weight"].shape[0]

    @property
    def fan_out(self):
        return self.params["weight"].shape[1]

    def config(self):
        return {"out": self.fan_out, "hidden": self.hidden}

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.fan_in,):
            raise DimensionError(f"fc expects input length {self.fan_in}, got {input_shape}")
        return (self.fan_out,)

    def forward(self, x):
        x = np.asarray(x)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.fan_in:
            raise DimensionError(f"fc expects input length {self.fan_in}, got {x.shape}")
        z = x2 @ self.params["weight"] + self.params["bias"]
        out = np.maximum(z, 0) if self.hidden else z
        return (out[0] if single else out), (x2, z, single)

    def backward(self, cache, grad_out):
        x2, z, single = _check_cache(cache)
        g = grad_out[None, :] if single else grad_out
        if g.shape != z.shape:
            raise DimensionError("grad_out shape does not match forward output")
        if self.hidden:
            g = g * (z > 0)
        dw = x2.T @ g
        db = g.sum(axis=0)
        dx = g @ self.params["weight"].T
        return (dx[0] if single else dx), {"weight": dw, "bias": db}


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, label):
    """Cross-entropy of one logit vector against an integer label."""
    logits = np.asarray(logits)
    if not 0 <= label < logits.shape[-1]:
        raise LabelError(f"label {label} out of range for {logits.shape[-1]} classes")
    z = logits - logits.max()
    log_norm = np.log(np.exp(z).sum())
    loss = log_norm - z[label]
    grad = np.exp(z - log_norm)
    grad[label] -= 1
    return float(loss), grad


def softmax_xent_batch(logits, labels):
    """Mean cross-entropy over rows of ``logits``; gradient already divided by batch size."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError("one label per logit row required")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1
    return loss, grad / n
