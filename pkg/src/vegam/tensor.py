"""Small deterministic numpy substrate for the baseline CNN.

Only the fixed layer stack used by :mod:`vegam.model` is supported: conv2d,
batchnorm, relu, dropout, flatten and dense.  Each layer object caches what
its backward pass needs during ``forward`` and accumulates parameter
gradients into :class:`Tensor` ``grad`` buffers.  All math is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

DTYPE = np.float64

LAYER_KINDS = ("conv2d", "batchnorm", "relu", "dropout", "dense", "flatten")


class ShapeError(ValueError):
    """Raised when array dimensions do not agree with what an op expects."""


class NumericError(FloatingPointError):
    """Raised when a non-finite value reaches the optimizer."""


class Tensor:
    """A float64 array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, grad=None, name: str = ""):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        if grad is not None:
            grad = np.ascontiguousarray(grad, dtype=DTYPE)
            if grad.shape != self.data.shape:
                raise ShapeError(f"grad shape {grad.shape} != data shape {self.data.shape}")
        self.grad = grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"{self.name or 'tensor'}: gradient shape {g.shape} != {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape})"


@dataclass(frozen=True)
class LayerSpec:
    """Configuration of one layer; parameters live on the built layer."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 3
    stride: int = 1
    padding: int = 0
    p: float = 0.0
    in_features: int = 0
    out_features: int = 0
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout" and not 0.0 <= self.p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {self.p}")
        if self.kind == "conv2d":
            if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
                raise ValueError("conv2d needs kernel_size >= 1, stride >= 1, padding >= 0")
            if self.in_channels < 1 or self.out_channels < 1:
                raise ValueError("conv2d channel counts must be >= 1")
        if self.kind == "batchnorm" and self.in_channels < 1:
            raise ValueError("batchnorm needs in_channels >= 1")
        if self.kind == "dense" and (self.in_features < 1 or self.out_features < 1):
            raise ValueError("dense feature counts must be >= 1")


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base class. Subclasses implement ``forward`` and ``backward``."""

    spec: LayerSpec

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self._ctx: Any = None

    def params(self) -> list[Tensor]:
        return []

    def buffers(self) -> list[Tensor]:
        """Non-trainable state that still belongs in a checkpoint."""
        return []

    def forward(self, x: np.ndarray, mode: str = "eval", rng_seed: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_ctx(self):
        if self._ctx is None:
            raise RuntimeError(f"{self.spec.kind}: backward called without a preceding forward pass")
        return self._ctx


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


class Conv2d(Layer):
    """2-D convolution.  Set ``input_grad = False`` on a first
    layer whose input gradient is never needed; backward then returns None."""

    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        super().__init__(spec)
        self.input_grad = True
        k = spec.kernel_size
        fan_in = spec.in_channels * k * k
        self.weight = Tensor(
            _uniform_fan_in(rng, (spec.out_channels, spec.in_channels, k, k), fan_in), name="conv.weight"
        )
        self.bias = Tensor(np.zeros(spec.out_channels), name="conv.bias")

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, mode="eval", rng_seed=None):
        s = self.spec
        if x.ndim != 4 or x.shape[1] != s.in_channels:
            raise ShapeError(f"conv2d expects (N, {s.in_channels}, H, W), got {x.shape}")
        n, c, h, w = x.shape
        k, st, p = s.kernel_size, s.stride, s.padding
        ho, wo = conv_output_size(h, k, st, p), conv_output_size(w, k, st, p)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d input {h}x{w} too small for kernel {k}, stride {st}, padding {p}")
        # channels-last patch matrix, columns ordered (ki, kj, c)
        xp = np.zeros((n, h + 2 * p, w + 2 * p, c))
        xp[:, p : p + h, p : p + w, :] = x.transpose(0, 2, 3, 1)
        cols = np.concatenate(
            [xp[:, i : i + st * ho : st, j : j + st * wo : st, :] for i in range(k) for j in range(k)], axis=3
        ).reshape(n * ho * wo, k * k * c)
        wmat = self.weight.data.transpose(2, 3, 1, 0).reshape(k * k * c, s.out_channels)
        out = cols @ wmat + self.bias.data
        self._ctx = (cols, x.shape, ho, wo)
        return out.reshape(n, ho, wo, s.out_channels).transpose(0, 3, 1, 2)

    def backward(self, upstream):
        cols, x_shape, ho, wo = self._need_ctx()
        s = self.spec
        k, st, p = s.kernel_size, s.stride, s.padding
        n, c, h, w = x_shape
        g = upstream.transpose(0, 2, 3, 1).reshape(n * ho * wo, s.out_channels)
        dw = (g.T @ cols).reshape(s.out_channels, k, k, c)
        self.weight.accumulate(dw.transpose(0, 3, 1, 2))
        self.bias.accumulate(g.sum(axis=0))
        if not self.input_grad:
            return None
        wk = np.ascontiguousarray(self.weight.data.transpose(2, 3, 0, 1))  # (k, k, F, C)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c))
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + st * ho : st, j : j + st * wo : st, :] += (g @ wk[i, j]).reshape(n, ho, wo, c)
        return np.ascontiguousarray(dxp[:, p : p + h, p : p + w, :].transpose(0, 3, 1, 2))


class BatchNorm2d(Layer):
    def __init__(self, spec: LayerSpec):
        super().__init__(spec)
        c = spec.in_channels
        self.gamma = Tensor(np.ones(c), name="bn.gamma")
        self.beta = Tensor(np.zeros(c), name="bn.beta")
        self.running_mean = Tensor(np.zeros(c), name="bn.running_mean")
        self.running_var = Tensor(np.ones(c), name="bn.running_var")

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def forward(self, x, mode="eval", rng_seed=None):
        s = self.spec
        if x.ndim != 4 or x.shape[1] != s.in_channels:
            raise ShapeError(f"batchnorm expects (N, {s.in_channels}, H, W), got {x.shape}")
        if mode == "train":
            m = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean.data = (1 - s.momentum) * self.running_mean.data + s.momentum * mean
            unbiased = var * m / max(m - 1, 1)
            self.running_var.data = (1 - s.momentum) * self.running_var.data + s.momentum * unbiased
        else:
            mean, var = self.running_mean.data, self.running_var.data
        inv_std = 1.0 / np.sqrt(var + s.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._ctx = (xhat, inv_std, mode)
        return xhat * self.gamma.data[None, :, None, None] + self.beta.data[None, :, None, None]

    def backward(self, upstream):
        xhat, inv_std, mode = self._need_ctx()
        self.gamma.accumulate((upstream * xhat).sum(axis=(0, 2, 3)))
        self.beta.accumulate(upstream.sum(axis=(0, 2, 3)))
        dxhat = upstream * self.gamma.data[None, :, None, None]
        if mode != "train":
            return dxhat * inv_std[None, :, None, None]
        m = upstream.shape[0] * upstream.shape[2] * upstream.shape[3]
        sum_d = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        sum_dx = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        return (inv_std[None, :, None, None] / m) * (m * dxhat - sum_d - xhat * sum_dx)


class ReLU(Layer):
    def forward(self, x, mode="eval", rng_seed=None):
        mask = x > 0
        self._ctx = mask
        return np.where(mask, x, 0.0)

    def backward(self, upstream):
        return np.where(self._need_ctx(), upstream, 0.0)


class Dropout(Layer):
    """Inverted dropout: scaled at train time, identity in eval mode."""

    def forward(self, x, mode="eval", rng_seed=None):
        p = self.spec.p
        if mode != "train" or p == 0.0:
            self._ctx = "identity"
            return x
        rng = np.random.default_rng(rng_seed)
        mask = (rng.random(x.shape) >= p) / (1.0 - p)
        self._ctx = mask
        return x * mask

    def backward(self, upstream):
        ctx = self._need_ctx()
        if isinstance(ctx, str):
            return upstream
        return upstream * ctx


class Flatten(Layer):
    def forward(self, x, mode="eval", rng_seed=None):
        self._ctx = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        return upstream.reshape(self._need_ctx())


class Dense(Layer):
    """``y = a @ W.T + b`` with ``W`` of shape (out_features, in_features)."""

    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        super().__init__(spec)
        self.weight = Tensor(
            _uniform_fan_in(rng, (spec.out_features, spec.in_features), spec.in_features), name="dense.weight"
        )
        self.bias = Tensor(np.zeros(spec.out_features), name="dense.bias")

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, mode="eval", rng_seed=None):
        if x.ndim != 2 or x.shape[1] != self.spec.in_features:
            raise ShapeError(f"dense expects (N, {self.spec.in_features}), got {x.shape}")
        self._ctx = x
        return x @ self.weight.data.T + self.bias.data

    def backward(self, upstream):
        a = self._need_ctx()
        self.weight.accumulate(upstream.T @ a)
        self.bias.accumulate(upstream.sum(axis=0))
        return upstream @ self.weight.data


def make_layer(spec: LayerSpec, rng: np.random.Generator | None = None) -> Layer:
    """Build a layer from its spec; ``rng`` initialises conv/dense weights."""
    if rng is None:
        rng = np.random.default_rng(0)
    if spec.kind == "conv2d":
        return Conv2d(spec, rng)
    if spec.kind == "batchnorm":
        return BatchNorm2d(spec)
    if spec.kind == "relu":
        return ReLU(spec)
    if spec.kind == "dropout":
        return Dropout(spec)
    if spec.kind == "flatten":
        return Flatten(spec)
    return Dense(spec, rng)


def layer_forward(layer: Layer, x, mode: str = "eval", rng_seed: int | None = None) -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return layer.forward(np.asarray(x, dtype=DTYPE), mode=mode, rng_seed=rng_seed)


def layer_backward(layer: Layer, upstream) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return the input gradient and this call's parameter gradients.

    Parameter ``grad`` buffers are reset before the call, so the returned
    list holds exactly the contribution of ``upstream``.
    """
    for t in layer.params():
        t.zero_grad()
    dx = layer.backward(np.asarray(upstream, dtype=DTYPE))
    return dx, [t.grad for t in layer.params()]


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``.

    A 1-D ``logits`` with an integer label is treated as a batch of one.
    """
    z = np.asarray(logits, dtype=DTYPE)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    y = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    if y.shape[0] != z.shape[0]:
        raise ShapeError(f"{y.shape[0]} labels for {z.shape[0]} logit rows")
    c = z.shape[1]
    if np.any(y < 0) or np.any(y >= c):
        raise IndexError(f"label out of range for {c} classes: {y[(y < 0) | (y >= c)].tolist()}")
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = float(np.mean(logsumexp - shifted[rows, y]))
    grad = softmax(z)
    grad[rows, y] -= 1.0
    grad /= z.shape[0]
    return loss, (grad[0] if single else grad)


def mse_loss(a, b) -> tuple[float, np.ndarray]:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"mse_loss shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray] | None = None) -> None:
    """One in-place Adam update with bias correction.

    ``grads`` defaults to each parameter's ``grad`` buffer.
    """
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape or state.m[i].shape != p.data.shape:
            raise ShapeError(f"parameter {i} ({p.name}): shape mismatch with gradient or moments")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {i} ({p.name or 'unnamed'})")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
