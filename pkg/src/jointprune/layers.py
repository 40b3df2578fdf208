"""Layer set for the small sequential networks used in the experiments.

Everything runs on numpy in NCHW layout.  Each layer caches what its
backward pass needs, so a layer instance serves one forward/backward pair
at a time (the network is mutated by a single writer).

Conv and pooling use an im2col expansion; a naive nested-loop reference
lives in the test suite and must agree exactly at f64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Param

LAYER_KINDS = (
    "fc",
    "conv2d",
    "maxpool",
    "avgpool",
    "relu",
    "leaky_relu",
    "dropout",
    "flatten",
    "skip_save",
    "skip_add",
)


@dataclass
class LayerSpec:
    """Declarative layer description: kind plus kind-specific geometry."""

    kind: str
    geometry: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "leaky_relu":
            slope = self.geometry.get("slope", 0.1)
            if not 0.0 < slope < 1.0:
                raise ConfigError(f"leaky_relu slope must be in (0,1), got {slope}")
        if self.kind == "dropout":
            rate = self.geometry.get("rate", 0.5)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"dropout rate must be in [0,1), got {rate}")


def fc(n_in, n_out):
    return LayerSpec("fc", {"n_in": n_in, "n_out": n_out})


def conv2d(in_ch, out_ch, kernel, stride=1, pad=0):
    return LayerSpec(
        "conv2d",
        {"in_ch": in_ch, "out_ch": out_ch, "kernel": kernel, "stride": stride, "pad": pad},
    )


def maxpool(window, stride=None, pad=0):
    return LayerSpec("maxpool", {"window": window, "stride": stride or window, "pad": pad})


def avgpool(window, stride=None, pad=0):
    return LayerSpec("avgpool", {"window": window, "stride": stride or window, "pad": pad})


def relu():
    return LayerSpec("relu")


def leaky_relu(slope=0.1):
    return LayerSpec("leaky_relu", {"slope": slope})


def dropout(rate):
    return LayerSpec("dropout", {"rate": rate})


def flatten():
    return LayerSpec("flatten")


def skip_save(tag="skip"):
    return LayerSpec("skip_save", {"tag": tag})


def skip_add(tag="skip"):
    return LayerSpec("skip_add", {"tag": tag})


# ---------------------------------------------------------------------------


def _pool_geometry(h, w, window, stride, pad):
    oh = (h + 2 * pad - window) // stride + 1
    ow = (w + 2 * pad - window) // stride + 1
    return oh, ow


def _im2col(xp, kh, kw, stride, oh, ow):
    """(B, C, Hp, Wp) -> (B, C, kh, kw, oh, ow) window view copies."""
    b, c, _, _ = xp.shape
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols


def _col2im(dcols, xp_shape, kh, kw, stride, oh, ow):
    """Scatter-add the inverse of :func:`_im2col`."""
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
    return dxp


class Layer:
    kind = None

    def __init__(self, spec):
        self.spec = spec
        self.params = []

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Dense(Layer):
    kind = "fc"

    def __init__(self, spec, rng, dtype):
        super().__init__(spec)
        n_in, n_out = spec.geometry["n_in"], spec.geometry["n_out"]
        limit = np.sqrt(6.0 / n_in)
        self.w = Param("w", rng.uniform(-limit, limit, (n_in, n_out)).astype(dtype))
        self.b = Param("b", np.zeros(n_out, dtype=dtype))
        self.params = [self.w, self.b]

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.spec.geometry["n_in"]:
            raise ShapeError(
                f"fc expects input of shape ({self.spec.geometry['n_in']},), got {in_shape}"
            )
        return (self.spec.geometry["n_out"],)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dout):
        self.w.grad = self._x.T @ dout
        self.b.grad = dout.sum(axis=0)
        return dout @ self.w.value.T


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, spec, rng, dtype):
        super().__init__(spec)
        g = spec.geometry
        kh = kw = g["kernel"]
        fan_in = g["in_ch"] * kh * kw
        limit = np.sqrt(6.0 / fan_in)
        self.w = Param("w", rng.uniform(-limit, limit, (g["out_ch"], g["in_ch"], kh, kw)).astype(dtype))
        self.b = Param("b", np.zeros(g["out_ch"], dtype=dtype))
        self.params = [self.w, self.b]

    def out_shape(self, in_shape):
        g = self.spec.geometry
        if len(in_shape) != 3 or in_shape[0] != g["in_ch"]:
            raise ShapeError(f"conv2d expects ({g['in_ch']}, H, W) input, got {in_shape}")
        oh, ow = _pool_geometry(in_shape[1], in_shape[2], g["kernel"], g["stride"], g["pad"])
        if oh <= 0 or ow <= 0:
            raise ShapeError(f"conv2d geometry {g} yields empty output for input {in_shape}")
        return (g["out_ch"], oh, ow)

    def forward(self, x, train=False, rng=None):
        g = self.spec.geometry
        k, s, p = g["kernel"], g["stride"], g["pad"]
        b = x.shape[0]
        _, oh, ow = self.out_shape(x.shape[1:])
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = _im2col(xp, k, k, s, oh, ow)
        cols2 = cols.reshape(b, -1, oh * ow)
        w2 = self.w.value.reshape(g["out_ch"], -1)
        out = np.matmul(w2[None], cols2).reshape(b, g["out_ch"], oh, ow)
        out += self.b.value[None, :, None, None]
        self._cache = (x.shape, xp.shape, cols2, oh, ow)
        return out

    def backward(self, dout):
        g = self.spec.geometry
        k, s, p = g["kernel"], g["stride"], g["pad"]
        x_shape, xp_shape, cols2, oh, ow = self._cache
        b = dout.shape[0]
        dout2 = dout.reshape(b, g["out_ch"], oh * ow)
        dw2 = np.matmul(dout2, cols2.transpose(0, 2, 1)).sum(axis=0)
        self.w.grad = dw2.reshape(self.w.value.shape)
        self.b.grad = dout.sum(axis=(0, 2, 3))
        w2 = self.w.value.reshape(g["out_ch"], -1)
        dcols2 = np.matmul(w2.T[None], dout2)
        dcols = dcols2.reshape(b, g["in_ch"], k, k, oh, ow)
        dxp = _col2im(dcols, xp_shape, k, k, s, oh, ow)
        if p:
            return dxp[:, :, p:-p, p:-p]
        return dxp


class _Pool(Layer):
    def out_shape(self, in_shape):
        g = self.spec.geometry
        if len(in_shape) != 3:
            raise ShapeError(f"{self.kind} expects (C, H, W) input, got {in_shape}")
        oh, ow = _pool_geometry(in_shape[1], in_shape[2], g["window"], g["stride"], g["pad"])
        if oh <= 0 or ow <= 0:
            raise ShapeError(f"{self.kind} geometry {g} yields empty output for input {in_shape}")
        return (in_shape[0], oh, ow)

    def _windows(self, x, pad_value):
        g = self.spec.geometry
        k, s, p = g["window"], g["stride"], g["pad"]
        _, oh, ow = self.out_shape(x.shape[1:])
        if p:
            xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=pad_value)
        else:
            xp = x
        cols = _im2col(xp, k, k, s, oh, ow)
        return xp.shape, cols.reshape(x.shape[0], x.shape[1], k * k, oh, ow), oh, ow


class MaxPool2d(_Pool):
    kind = "maxpool"

    def forward(self, x, train=False, rng=None):
        xp_shape, win, oh, ow = self._windows(x, -np.inf)
        self._arg = win.argmax(axis=2)
        self._meta = (x.shape, xp_shape, win.shape, oh, ow)
        return np.take_along_axis(win, self._arg[:, :, None], axis=2)[:, :, 0]

    def backward(self, dout):
        g = self.spec.geometry
        k, s, p = g["window"], g["stride"], g["pad"]
        x_shape, xp_shape, win_shape, oh, ow = self._meta
        dwin = np.zeros(win_shape, dtype=dout.dtype)
        np.put_along_axis(dwin, self._arg[:, :, None], dout[:, :, None], axis=2)
        dcols = dwin.reshape(x_shape[0], x_shape[1], k, k, oh, ow)
        dxp = _col2im(dcols, xp_shape, k, k, s, oh, ow)
        if p:
            return dxp[:, :, p:-p, p:-p]
        return dxp


class AvgPool2d(_Pool):
    kind = "avgpool"

    def forward(self, x, train=False, rng=None):
        xp_shape, win, oh, ow = self._windows(x, 0.0)
        self._meta = (x.shape, xp_shape, oh, ow)
        return win.mean(axis=2)

    def backward(self, dout):
        g = self.spec.geometry
        k, s, p = g["window"], g["stride"], g["pad"]
        x_shape, xp_shape, oh, ow = self._meta
        dwin = np.broadcast_to(
            dout[:, :, None] / (k * k), (x_shape[0], x_shape[1], k * k, oh, ow)
        ).astype(dout.dtype)
        dcols = dwin.reshape(x_shape[0], x_shape[1], k, k, oh, ow)
        dxp = _col2im(dcols, xp_shape, k, k, s, oh, ow)
        if p:
            return dxp[:, :, p:-p, p:-p]
        return dxp


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self._pos = x > 0
        return x * self._pos

    def backward(self, dout):
        return dout * self._pos


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def forward(self, x, train=False, rng=None):
        slope = self.spec.geometry.get("slope", 0.1)
        self._pos = x > 0
        return np.where(self._pos, x, slope * x)

    def backward(self, dout):
        slope = self.spec.geometry.get("slope", 0.1)
        return np.where(self._pos, dout, slope * dout)


class Dropout(Layer):
    """Inverted dropout: scaling happens at train time, eval is identity."""

    kind = "dropout"

    def forward(self, x, train=False, rng=None):
        rate = self.spec.geometry["rate"]
        if not train or rate == 0.0:
            self._scale_mask = None
            return x
        if rng is None:
            raise ConfigError("dropout in train mode needs an rng")
        keep = (rng.random(x.shape) >= rate).astype(x.dtype)
        self._scale_mask = keep / (1.0 - rate)
        return x * self._scale_mask

    def backward(self, dout):
        if self._scale_mask is None:
            return dout
        return dout * self._scale_mask


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class SkipSave(Layer):
    """Remember the current activation for a later additive skip join."""

    kind = "skip_save"

    def __init__(self, spec, skip_state):
        super().__init__(spec)
        self._state = skip_state

    def forward(self, x, train=False, rng=None):
        self._state[self.spec.geometry["tag"]] = x
        return x

    def backward(self, dout):
        extra = self._state.pop("d_" + self.spec.geometry["tag"], None)
        if extra is not None:
            return dout + extra
        return dout


class SkipAdd(Layer):
    """Add the remembered activation back in (identity shortcut)."""

    kind = "skip_add"

    def __init__(self, spec, skip_state):
        super().__init__(spec)
        self._state = skip_state

    def forward(self, x, train=False, rng=None):
        saved = self._state.get(self.spec.geometry["tag"])
        if saved is None:
            raise ShapeError(f"skip_add {self.spec.geometry['tag']!r} has no saved branch")
        if saved.shape != x.shape:
            raise ShapeError(
                f"skip_add {self.spec.geometry['tag']!r}: branch shape {saved.shape} != {x.shape}"
            )
        return x + saved

    def backward(self, dout):
        self._state["d_" + self.spec.geometry["tag"]] = dout
        return dout


def build_layer(spec, rng, dtype, skip_state):
    if spec.kind == "fc":
        return Dense(spec, rng, dtype)
    if spec.kind == "conv2d":
        return Conv2d(spec, rng, dtype)
    if spec.kind == "maxpool":
        return MaxPool2d(spec)
    if spec.kind == "avgpool":
        return AvgPool2d(spec)
    if spec.kind == "relu":
        return ReLU(spec)
    if spec.kind == "leaky_relu":
        return LeakyReLU(spec)
    if spec.kind == "dropout":
        return Dropout(spec)
    if spec.kind == "flatten":
        return Flatten(spec)
    if spec.kind == "skip_save":
        return SkipSave(spec, skip_state)
    if spec.kind == "skip_add":
        return SkipAdd(spec, skip_state)
    raise ConfigError(f"unknown layer kind {spec.kind!r}")
