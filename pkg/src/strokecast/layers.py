"""Network layers with hand-derived backward passes.

Each layer owns its named float64 parameter arrays and caches whatever its
last forward pass needs for the matching backward pass.  A forward/backward
pair must run on one thread; distinct layer instances are independent.

Gradients are returned in a :class:`GradBundle`: one array per parameter
(same shapes as the parameters) plus the gradient with respect to the layer
input.  All math is plain numpy on C-contiguous float64 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, ParameterError, ShapeError
from .tensor import as_array


@dataclass
class GradBundle:
    """Gradients from one backward pass: per-parameter plus input."""

    param_grads: dict[str, np.ndarray] = field(default_factory=dict)
    grad_input: np.ndarray | None = None


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Fan-in scaled normal init for conv/linear weights."""
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Layer:
    """Base class: named parameters plus a one-deep forward cache."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> GradBundle:
        raise NotImplementedError

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ParameterError(f"expected an int or a length-3 tuple, got {v!r}")
    return t


class Conv3d(Layer):
    """3D cross-correlation with zero padding.

    Kernel size is 3 (the architecture's working kernel) or 1 (used by the
    spatial attention gate).  Weight layout (Cout, Cin, k, k, k).
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride=(1, 1, 1), padding=(1, 1, 1), rng: np.random.Generator | None = None):
        super().__init__()
        if kernel_size not in (1, 3):
            raise ParameterError(f"kernel_size must be 1 or 3, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = _triple(stride)
        self.padding = _triple(padding)
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel_size
        fan_in = in_channels * k ** 3
        self.params["weight"] = he_normal(rng, (out_channels, in_channels, k, k, k), fan_in)
        self.params["bias"] = np.zeros(out_channels)
        self._cache = None

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        n, cin, d, h, w = in_shape
        if cin != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got shape {in_shape}")
        k = self.kernel_size
        dims = []
        for size, s, p in zip((d, h, w), self.stride, self.padding):
            o = (size + 2 * p - k) // s + 1
            if o < 1:
                raise ShapeError(
                    f"conv output dim < 1 for input {in_shape}, kernel {k}, "
                    f"stride {self.stride}, padding {self.padding}"
                )
            dims.append(o)
        return (n, self.out_channels, *dims)

    def _windows(self, xp: np.ndarray, out_dims: tuple[int, int, int]) -> np.ndarray:
        k = self.kernel_size
        sd, sh, sw = self.stride
        od, oh, ow = out_dims
        win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
        return win[:, :, ::sd, ::sh, ::sw][:, :, :od, :oh, :ow]

    def forward(self, x) -> np.ndarray:
        x = as_array(x)
        n, cout, od, oh, ow = self.out_shape(x.shape)
        pd, ph, pw = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
        win = self._windows(xp, (od, oh, ow))
        # (n, od, oh, ow, cout) after contracting cin and the kernel dims
        y = np.tensordot(win, self.params["weight"], axes=([1, 5, 6, 7], [1, 2, 3, 4]))
        y = np.ascontiguousarray(np.moveaxis(y, -1, 1))
        y += self.params["bias"].reshape(1, -1, 1, 1, 1)
        self._cache = (xp, x.shape, (od, oh, ow))
        return y

    def backward(self, grad_out) -> GradBundle:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        go = as_array(grad_out)
        xp, x_shape, out_dims = self._cache
        od, oh, ow = out_dims
        sd, sh, sw = self.stride
        pd, ph, pw = self.padding
        k = self.kernel_size
        w = self.params["weight"]

        win = self._windows(xp, out_dims)
        gw = np.tensordot(go, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        gb = go.sum(axis=(0, 2, 3, 4))

        gxp = np.zeros_like(xp)
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    # sum over cout: (n, od, oh, ow, cin)
                    contrib = np.tensordot(go, w[:, :, a, b, c], axes=([1], [0]))
                    gxp[:, :, a:a + od * sd:sd, b:b + oh * sh:sh, c:c + ow * sw:sw] += \
                        np.moveaxis(contrib, -1, 1)
        d, h, wd = x_shape[2:]
        gx = gxp[:, :, pd:pd + d, ph:ph + h, pw:pw + wd]
        return GradBundle({"weight": gw, "bias": gb}, np.ascontiguousarray(gx))


class InstanceNorm3d(Layer):
    """Per-(sample, channel) standardization over the spatial dims.

    No running statistics: every forward normalizes with that slice's own
    mean and (biased) variance, then applies the learnable scale and shift.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.params["scale"] = np.ones(channels)
        self.params["shift"] = np.zeros(channels)
        self._cache = None

    def forward(self, x) -> np.ndarray:
        x = as_array(x)
        if x.ndim != 5 or x.shape[1] != self.channels:
            raise ShapeError(f"expected (N,{self.channels},D,H,W), got {x.shape}")
        if x.shape[2] * x.shape[3] * x.shape[4] < 2:
            raise DegenerateInputError("instance norm needs spatial size >= 2 per slice")
        axes = (2, 3, 4)
        mu = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std)
        return self.params["scale"].reshape(1, -1, 1, 1, 1) * xhat + \
            self.params["shift"].reshape(1, -1, 1, 1, 1)

    def backward(self, grad_out) -> GradBundle:
        go = as_array(grad_out)
        xhat, inv_std = self._cache
        axes = (2, 3, 4)
        gscale = (go * xhat).sum(axis=(0, 2, 3, 4))
        gshift = go.sum(axis=(0, 2, 3, 4))
        scale = self.params["scale"].reshape(1, -1, 1, 1, 1)
        # standard normalization backward, means taken per (n, c) slice
        g = go * scale
        gx = inv_std * (g - g.mean(axis=axes, keepdims=True)
                        - xhat * (g * xhat).mean(axis=axes, keepdims=True))
        return GradBundle({"scale": gscale, "shift": gshift}, gx)


class Activation(Layer):
    """Elementwise nonlinearity: leaky_relu, relu, or sigmoid."""

    KINDS = ("leaky_relu", "relu", "sigmoid")

    def __init__(self, kind: str, slope: float = 0.01):
        super().__init__()
        if kind not in self.KINDS:
            raise ParameterError(f"unknown activation {kind!r}")
        self.kind = kind
        self.slope = slope
        self._cache = None

    def forward(self, x) -> np.ndarray:
        x = as_array(x)
        if self.kind == "leaky_relu":
            y = np.where(x >= 0, x, self.slope * x)
            self._cache = x
        elif self.kind == "relu":
            y = np.maximum(x, 0.0)
            self._cache = x
        else:
            y = _sigmoid(x)
            self._cache = y  # derivative only needs the output
        return y

    def backward(self, grad_out) -> GradBundle:
        go = as_array(grad_out)
        c = self._cache
        if self.kind == "leaky_relu":
            gx = go * np.where(c >= 0, 1.0, self.slope)
        elif self.kind == "relu":
            gx = go * (c > 0)
        else:
            gx = go * c * (1.0 - c)
        return GradBundle({}, gx)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to stay overflow-free
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Linear(Layer):
    """Affine map y = x W^T + b with weight (out, in)."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = he_normal(rng, (out_features, in_features), in_features)
        self.params["bias"] = np.zeros(out_features)
        self._cache = None

    def forward(self, x) -> np.ndarray:
        x = as_array(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"linear expects (N, {self.in_features}), got {x.shape} "
                f"against weight {self.params['weight'].shape}"
            )
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad_out) -> GradBundle:
        go = as_array(grad_out)
        x = self._cache
        gw = go.T @ x
        gb = go.sum(axis=0)
        gx = go @ self.params["weight"]
        return GradBundle({"weight": gw, "bias": gb}, gx)


class Dropout(Layer):
    """Inverted dropout; identity in eval mode, mask reused by backward."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        x = as_array(x)
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ParameterError("training-mode dropout requires a seeded rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) >= self.rate) / keep
        return x * self._mask

    def backward(self, grad_out) -> GradBundle:
        go = as_array(grad_out)
        gx = go if self._mask is None else go * self._mask
        return GradBundle({}, gx)


class Softmax(Layer):
    """Row softmax over (N, C), max-subtracted for stability."""

    def __init__(self):
        super().__init__()
        self._cache = None

    def forward(self, x) -> np.ndarray:
        x = as_array(x)
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)
        self._cache = y
        return y

    def backward(self, grad_out) -> GradBundle:
        go = as_array(grad_out)
        y = self._cache
        gx = y * (go - (go * y).sum(axis=1, keepdims=True))
        return GradBundle({}, gx)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Functional stable row softmax (no cache)."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class GlobalAvgPool(Layer):
    """(N, C, D, H, W) -> (N, C) mean over the spatial dims."""

    def __init__(self):
        super().__init__()
        self._in_shape = None

    def forward(self, x) -> np.ndarray:
        x = as_array(x)
        if x.ndim != 5:
            raise ShapeError(f"expected a rank-5 input, got {x.shape}")
        self._in_shape = x.shape
        return x.mean(axis=(2, 3, 4))

    def backward(self, grad_out) -> GradBundle:
        go = as_array(grad_out)
        n, c, d, h, w = self._in_shape
        m = d * h * w
        gx = np.broadcast_to(go.reshape(n, c, 1, 1, 1) / m, self._in_shape).copy()
        return GradBundle({}, gx)


class ChannelSE(Layer):
    """Channel squeeze-and-excitation: gate each channel by a pooled descriptor.

    squeeze = spatial mean -> linear (C -> ceil(C/r)) -> relu -> linear
    (-> C) -> sigmoid; the input is rescaled per channel by the gate.
    """

    def __init__(self, channels: int, ratio: int = 2, rng: np.random.Generator | None = None):
        super().__init__()
        if channels < 1 or ratio < 1:
            raise ParameterError("channels and ratio must be >= 1")
        self.channels = channels
        self.hidden = -(-channels // ratio)  # ceil
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w1"] = he_normal(rng, (self.hidden, channels), channels)
        self.params["b1"] = np.zeros(self.hidden)
        self.params["w2"] = he_normal(rng, (channels, self.hidden), self.hidden)
        self.params["b2"] = np.zeros(channels)
        self._cache = None

    def forward(self, x) -> np.ndarray:
        x = as_array(x)
        n, c, d, h, w = x.shape
        z = x.mean(axis=(2, 3, 4))
        a = z @ self.params["w1"].T + self.params["b1"]
        hdn = np.maximum(a, 0.0)
        s = _sigmoid(hdn @ self.params["w2"].T + self.params["b2"])
        self._cache = (x, z, a, hdn, s)
        return x * s.reshape(n, c, 1, 1, 1)

    def backward(self, grad_out) -> GradBundle:
        go = as_array(grad_out)
        x, z, a, hdn, s = self._cache
        n, c, d, h, w = x.shape
        m = d * h * w

        gx = go * s.reshape(n, c, 1, 1, 1)
        gs = (go * x).sum(axis=(2, 3, 4))
        gpre = gs * s * (1.0 - s)
        gw2 = gpre.T @ hdn
        gb2 = gpre.sum(axis=0)
        gh = gpre @ self.params["w2"]
        ga = gh * (a > 0)
        gw1 = ga.T @ z
        gb1 = ga.sum(axis=0)
        gz = ga @ self.params["w1"]
        gx += gz.reshape(n, c, 1, 1, 1) / m
        return GradBundle({"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}, gx)


class SpatialSE(Layer):
    """Spatial squeeze-and-excitation: a 1x1x1 conv gates every voxel."""

    def __init__(self, channels: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.channels = channels
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = he_normal(rng, (1, channels, 1, 1, 1), channels)
        self.params["bias"] = np.zeros(1)
        self._cache = None

    def forward(self, x) -> np.ndarray:
        x = as_array(x)
        w = self.params["weight"].reshape(1, -1, 1, 1, 1)
        t = (x * w).sum(axis=1, keepdims=True) + self.params["bias"][0]
        q = _sigmoid(t)
        self._cache = (x, q)
        return x * q

    def backward(self, grad_out) -> GradBundle:
        go = as_array(grad_out)
        x, q = self._cache
        w = self.params["weight"].reshape(1, -1, 1, 1, 1)

        gx = go * q
        gq = (go * x).sum(axis=1, keepdims=True)
        gt = gq * q * (1.0 - q)
        gw = (gt * x).sum(axis=(0, 2, 3, 4)).reshape(self.params["weight"].shape)
        gb = np.array([gt.sum()])
        gx += gt * w
        return GradBundle({"weight": gw, "bias": gb}, gx)
