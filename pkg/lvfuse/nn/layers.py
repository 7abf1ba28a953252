"""
Layers with exact backward passes and the sequential `Network` that chains them.

Tensors are plain numpy arrays in NCHW layout (N x features after Flatten). Every layer caches
what its backward pass needs during `forward`; calling `backward` without a cached forward raises.
"""

from __future__ import annotations

import logging
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator

from errors import NumericFaultError, ShapeMismatchError

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


# --- layer descriptors -----------------------------------------------------------------------------


class ConvSpec(BaseModel):
    kind: Literal["conv"] = "conv"
    in_channels: int = Field(ge=1)
    out_channels: int = Field(ge=1)
    kernel_size: int = Field(default=3, ge=1, le=63)

    @field_validator("kernel_size")
    @classmethod
    def _odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("kernel_size must be odd for same padding")
        return v


class BatchNormSpec(BaseModel):
    kind: Literal["batchnorm"] = "batchnorm"
    channels: int = Field(ge=1)
    eps: float = Field(default=BN_EPS, gt=0)
    momentum: float = Field(default=BN_MOMENTUM, ge=0, lt=1)


class ReLUSpec(BaseModel):
    kind: Literal["relu"] = "relu"


class MaxPoolSpec(BaseModel):
    kind: Literal["maxpool"] = "maxpool"


class FlattenSpec(BaseModel):
    kind: Literal["flatten"] = "flatten"


class DenseSpec(BaseModel):
    kind: Literal["dense"] = "dense"
    in_features: int = Field(ge=1)
    out_features: int = Field(ge=1)


class DropoutSpec(BaseModel):
    kind: Literal["dropout"] = "dropout"
    rate: float = Field(default=0.25, ge=0, lt=1)


LayerSpec = Annotated[
    ConvSpec | BatchNormSpec | ReLUSpec | MaxPoolSpec | FlattenSpec | DenseSpec | DropoutSpec,
    Field(discriminator="kind"),
]


class NetworkSpec(BaseModel):
    input_shape: tuple[int, int, int]
    layers: list[LayerSpec]
    dtype: Literal["float64", "float32"] = "float64"


# --- layers ----------------------------------------------------------------------------------------


class Layer:
    """Base layer: no parameters, no buffers."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache: tuple | None = None

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cached(self) -> tuple:
        if self._cache is None:
            raise ValueError(f"{type(self).__name__}.backward called without a cached forward pass")
        return self._cache


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Layer):
    """Stride-1 cross-correlation with same padding, computed as one matmul per kernel offset."""

    def __init__(self, spec: ConvSpec, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.spec = spec
        k = spec.kernel_size
        shape = (spec.out_channels, spec.in_channels, k, k)
        if rng is None:
            self.params["weight"] = np.zeros(shape)
        else:
            self.params["weight"] = glorot_uniform(rng, shape, spec.in_channels * k * k, spec.out_channels * k * k)
        self.params["bias"] = np.zeros(spec.out_channels)

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(shape) != 3 or shape[0] != self.spec.in_channels:
            raise ShapeMismatchError(f"conv expects ({self.spec.in_channels}, H, W) input, got {shape}")
        return (self.spec.out_channels, shape[1], shape[2])

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n, c, h, w = x.shape
        k = self.spec.kernel_size
        p = k // 2
        weight = self.params["weight"]
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))).transpose(1, 0, 2, 3)
        out = np.zeros((self.spec.out_channels, n, h, w), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                out += np.tensordot(weight[:, :, i, j], xp[:, :, i : i + h, j : j + w], axes=([1], [0]))
        out += self.params["bias"][:, None, None, None]
        self._cache = (xp, x.shape)
        return out.transpose(1, 0, 2, 3)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xp, (n, c, h, w) = self._cached()
        k = self.spec.kernel_size
        p = k // 2
        weight = self.params["weight"]
        dyt = dy.transpose(1, 0, 2, 3)
        dw = np.zeros_like(weight)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                window = xp[:, :, i : i + h, j : j + w]
                dw[:, :, i, j] = np.tensordot(dyt, window, axes=([1, 2, 3], [1, 2, 3]))
                dxp[:, :, i : i + h, j : j + w] += np.tensordot(weight[:, :, i, j], dyt, axes=([0], [0]))
        self.grads["weight"] = dw
        self.grads["bias"] = dy.sum(axis=(0, 2, 3))
        return dxp[:, :, p : p + h, p : p + w].transpose(1, 0, 2, 3)


class BatchNorm(Layer):
    """Per-channel normalization over (N, H, W) for 4-D input or over N for 2-D input."""

    def __init__(self, spec: BatchNormSpec) -> None:
        super().__init__()
        self.spec = spec
        self.params["gamma"] = np.ones(spec.channels)
        self.params["beta"] = np.zeros(spec.channels)
        self.buffers["running_mean"] = np.zeros(spec.channels)
        self.buffers["running_var"] = np.ones(spec.channels)

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if shape[0] != self.spec.channels:
            raise ShapeMismatchError(f"batchnorm expects {self.spec.channels} channels, got {shape}")
        return shape

    @staticmethod
    def _axes(x: np.ndarray) -> tuple[tuple[int, ...], tuple[int, ...]]:
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        return (0,), (1, -1)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        axes, bshape = self._axes(x)
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.spec.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mu
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
        else:
            mu = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.spec.eps)
        xhat = (x - mu.reshape(bshape)) * inv_std.reshape(bshape)
        self._cache = (xhat, inv_std, train)
        return xhat * self.params["gamma"].reshape(bshape) + self.params["beta"].reshape(bshape)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std, train = self._cached()
        axes, bshape = self._axes(dy)
        self.grads["gamma"] = (dy * xhat).sum(axis=axes)
        self.grads["beta"] = dy.sum(axis=axes)
        dxhat = dy * self.params["gamma"].reshape(bshape)
        if not train:
            return dxhat * inv_std.reshape(bshape)
        count = dy.size // dy.shape[1]
        sum_dxhat = dxhat.sum(axis=axes).reshape(bshape)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes).reshape(bshape)
        return inv_std.reshape(bshape) / count * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)


class ReLU(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        mask = x > 0
        self._cache = (mask,)
        return np.where(mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        (mask,) = self._cached()
        return np.where(mask, dy, 0.0).astype(dy.dtype, copy=False)


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; gradient goes to the first maximum of each window."""

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
            raise ShapeMismatchError(f"maxpool expects (C, H>=2, W>=2) input, got {shape}")
        return (shape[0], shape[1] // 2, shape[2] // 2)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        win = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
        idx = win.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        idx, (n, c, h, w) = self._cached()
        ho, wo = h // 2, w // 2
        dwin = np.zeros((n, c, ho, wo, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros((n, c, h, w), dtype=dy.dtype)
        dx[:, :, : 2 * ho, : 2 * wo] = dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        return dx


class Flatten(Layer):
    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return (int(np.prod(shape)),)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._cache = (x.shape,)
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        (shape,) = self._cached()
        return dy.reshape(shape)


class Dense(Layer):
    def __init__(self, spec: DenseSpec, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.spec = spec
        shape = (spec.in_features, spec.out_features)
        if rng is None:
            self.params["weight"] = np.zeros(shape)
        else:
            self.params["weight"] = glorot_uniform(rng, shape, spec.in_features, spec.out_features)
        self.params["bias"] = np.zeros(spec.out_features)

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if shape != (self.spec.in_features,):
            raise ShapeMismatchError(f"dense expects ({self.spec.in_features},) input, got {shape}")
        return (self.spec.out_features,)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._cache = (x,)
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        (x,) = self._cached()
        self.grads["weight"] = x.T @ dy
        self.grads["bias"] = dy.sum(axis=0)
        return dy @ self.params["weight"].T


class Dropout(Layer):
    """Inverted dropout; identity outside training. Owns its generator so masks are reproducible."""

    def __init__(self, spec: DropoutSpec, seed: int = 0) -> None:
        super().__init__()
        self.spec = spec
        self.rng = np.random.default_rng(seed)

    def reseed(self, seed: int | np.random.SeedSequence) -> None:
        self.rng = np.random.default_rng(seed)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if not train or self.spec.rate == 0:
            self._cache = (None,)
            return x
        scale = np.where(self.rng.random(x.shape) >= self.spec.rate, 1.0 / (1.0 - self.spec.rate), 0.0)
        self._cache = (scale,)
        return x * scale

    def backward(self, dy: np.ndarray) -> np.ndarray:
        (scale,) = self._cached()
        return dy if scale is None else dy * scale


def make_layer(spec: BaseModel, rng: np.random.Generator | None, index: int = 0) -> Layer:
    if isinstance(spec, ConvSpec):
        return Conv2d(spec, rng)
    if isinstance(spec, BatchNormSpec):
        return BatchNorm(spec)
    if isinstance(spec, ReLUSpec):
        return ReLU()
    if isinstance(spec, MaxPoolSpec):
        return MaxPool2()
    if isinstance(spec, FlattenSpec):
        return Flatten()
    if isinstance(spec, DenseSpec):
        return Dense(spec, rng)
    if isinstance(spec, DropoutSpec):
        return Dropout(spec, seed=index)
    raise ValueError(f"unsupported layer descriptor {spec!r}")


# --- network ---------------------------------------------------------------------------------------


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericFaultError(f"non-finite values in {where}")


class Network:
    """Sequential stack of layers built from a `NetworkSpec`.

    Parameters are exposed as ``"<layer index>.<name>"`` keys, e.g. ``"0.weight"``.
    """

    def __init__(self, spec: NetworkSpec, seed: int | None = 0) -> None:
        self.spec = spec
        self.dtype = np.dtype(spec.dtype)
        rng = None if seed is None else np.random.default_rng(seed)
        self.layers: list[Layer] = [make_layer(s, rng, i) for i, s in enumerate(spec.layers)]
        shape: tuple[int, ...] = tuple(spec.input_shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeMismatchError as e:
                raise ShapeMismatchError(f"layer {i} ({spec.layers[i].kind}): {e}") from e
        self.output_shape = shape
        for layer in self.layers:
            for name, arr in layer.params.items():
                layer.params[name] = arr.astype(self.dtype)
            for name, arr in layer.buffers.items():
                layer.buffers[name] = arr.astype(self.dtype)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeMismatchError(f"network expects (N, {', '.join(map(str, self.spec.input_shape))}) input, got {x.shape}")
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train)
            _check_finite(x, f"layer {i} ({self.spec.layers[i].kind}) output")
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = np.asarray(grad, dtype=self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            g = self.layers[i].backward(g)
            _check_finite(g, f"layer {i} ({self.spec.layers[i].kind}) gradient")
        return g

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, train=False)

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{i}.{name}": arr for i, layer in enumerate(self.layers) for name, arr in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{i}.{name}": arr for i, layer in enumerate(self.layers) for name, arr in layer.grads.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{i}.{name}": arr for i, layer in enumerate(self.layers) for name, arr in layer.buffers.items()}

    def set_parameters(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray] | None = None) -> None:
        for store, values in (("params", params), ("buffers", buffers or {})):
            for key, arr in values.items():
                idx, _, name = key.partition(".")
                target = getattr(self.layers[int(idx)], store)
                if name not in target:
                    raise KeyError(f"unknown {store[:-1]} {key}")
                if target[name].shape != np.shape(arr):
                    raise ShapeMismatchError(f"{key}: expected shape {target[name].shape}, got {np.shape(arr)}")
                target[name] = np.array(arr, dtype=self.dtype)

    def seed_dropout(self, seed: int) -> None:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dropout):
                layer.reseed(np.random.SeedSequence([int(seed), i]))

    @property
    def output_layer(self) -> Dense:
        for layer in reversed(self.layers):
            if isinstance(layer, Dense):
                return layer
        raise ValueError("network has no dense output layer")
