"""Six conv blocks followed by a single linear classifier.

Each block is conv -> batchnorm -> relu -> dropout.  The output of the last
block (after dropout, i.e. exactly what the dense layer sees) is the
penultimate activation stack ``A`` of shape (K, n, n).  Because the head is
one linear layer, the gradient of logit ``c`` with respect to ``A[k, i, j]``
is the dense weight ``W[c, k*n*n + i*n + j]``, which is what
:func:`dense_weight_maps` exposes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tensor import (
    Dense,
    Layer,
    LayerSpec,
    ShapeError,
    Tensor,
    conv_output_size,
    make_layer,
    softmax,
)

CHECKPOINT_MAGIC = b"GZCM"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_side: int = 224
    channels: tuple[int, ...] = (32, 64, 64, 128, 128, 128)
    kernel_sizes: tuple[int, ...] = (3, 3, 3, 3, 3, 3)
    strides: tuple[int, ...] = (2, 2, 1, 2, 1, 2)
    dropout: float = 0.2
    num_classes: int = 10

    @classmethod
    def desk(cls, num_classes: int = 10, **overrides) -> "ModelConfig":
        """64x64 preset with narrower channels for CPU-only experiments (n = 4)."""
        kw = dict(input_side=64, channels=(8, 16, 16, 32, 32, 32), num_classes=num_classes)
        kw.update(overrides)
        return cls(**kw)

    def __post_init__(self):
        for name in ("channels", "kernel_sizes", "strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not (len(self.channels) == len(self.kernel_sizes) == len(self.strides) == 6):
            raise ConfigError("exactly 6 conv blocks are required (channels, kernel_sizes, strides)")
        if any(c < 1 for c in self.channels) or any(k < 1 for k in self.kernel_sizes):
            raise ConfigError("channel counts and kernel sizes must be >= 1")
        if any(s < 1 for s in self.strides):
            raise ConfigError("strides must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.input_side < 1:
            raise ConfigError("input_side must be >= 1")
        if self.penultimate_side() < 1:
            raise ConfigError(f"input_side {self.input_side} collapses below 1x1 with strides {self.strides}")

    def spatial_sides(self) -> list[int]:
        sides, s = [], self.input_side
        for k, st in zip(self.kernel_sizes, self.strides):
            s = conv_output_size(s, k, st, k // 2)
            sides.append(s)
        return sides

    def penultimate_side(self) -> int:
        sides = self.spatial_sides()
        return min(sides) if min(sides) < 1 else sides[-1]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardTrace:
    logits: np.ndarray  # (N, C)
    activations: np.ndarray  # (N, K, n, n), the dense layer's input
    confidence: np.ndarray  # softmax of logits

    @property
    def predicted(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)


@dataclass
class Model:
    config: ModelConfig
    layers: list[Layer] = field(default_factory=list)

    @property
    def dense(self) -> Dense:
        return self.layers[-1]

    @property
    def stack_shape(self) -> tuple[int, int, int]:
        n = self.config.penultimate_side()
        return (self.config.channels[-1], n, n)

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]

    def state(self) -> list[Tensor]:
        """Every tensor a checkpoint must carry, in a fixed order."""
        out = []
        for layer in self.layers:
            out.extend(layer.params())
            out.extend(layer.buffers())
        return out

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def forward(self, images, mode: str = "eval", dropout_seed: int | None = None) -> ForwardTrace:
        return forward(self, images, mode=mode, dropout_seed=dropout_seed)

    def backward(self, dlogits: np.ndarray, extra_dact: np.ndarray | None = None) -> np.ndarray:
        """Backpropagate from the logits; ``extra_dact`` is added at the stack ``A``.

        Gradients accumulate into the parameter buffers.  Returns the
        gradient with respect to the input images, or None when the first
        conv layer was built without input gradients (the default).
        """
        g = self.dense.backward(np.asarray(dlogits, dtype=np.float64))
        if extra_dact is not None:
            g = g + extra_dact.reshape(g.shape)
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return None if g is None else g[:, 0]

    def copy_state_from(self, other: "Model") -> None:
        for dst, src in zip(self.state(), other.state()):
            dst.data = src.data.copy()

    def snapshot(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.state()]

    def restore(self, snap: list[np.ndarray]) -> None:
        for t, d in zip(self.state(), snap):
            t.data = d.copy()


def build_model(config: ModelConfig, seed: int = 0, input_grad: bool = False) -> Model:
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    in_ch = 1
    for ch, k, st in zip(config.channels, config.kernel_sizes, config.strides):
        layers.append(make_layer(LayerSpec("conv2d", in_channels=in_ch, out_channels=ch, kernel_size=k,
                                           stride=st, padding=k // 2), rng))
        layers.append(make_layer(LayerSpec("batchnorm", in_channels=ch)))
        layers.append(make_layer(LayerSpec("relu")))
        layers.append(make_layer(LayerSpec("dropout", p=config.dropout)))
        in_ch = ch
    layers[0].input_grad = input_grad
    n = config.penultimate_side()
    layers.append(make_layer(LayerSpec("flatten")))
    layers.append(make_layer(LayerSpec("dense", in_features=in_ch * n * n, out_features=config.num_classes), rng))
    return Model(config=config, layers=layers)


def _as_batch(images, side: int) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (side, side):
        raise ShapeError(f"expected single-channel {side}x{side} images, got array of shape {np.shape(images)}")
    return x


def forward(model: Model, images, mode: str = "eval", dropout_seed: int | None = None) -> ForwardTrace:
    """Run the network on one image (H, W) or a batch (N, H, W) / (N, 1, H, W).

    In train mode each dropout layer draws its mask from a seed derived from
    ``dropout_seed`` and the layer position.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _as_batch(images, model.config.input_side)
    seeds = np.random.SeedSequence(dropout_seed if dropout_seed is not None else 0).generate_state(
        len(model.layers)
    )
    for idx, layer in enumerate(model.layers[:-2]):
        x = layer.forward(x, mode=mode, rng_seed=int(seeds[idx]))
    acts = x
    flat = model.layers[-2].forward(acts, mode=mode)
    logits = model.dense.forward(flat, mode=mode)
    return ForwardTrace(logits=logits, activations=acts, confidence=softmax(logits))


def dense_weight_maps(model: Model, c: int) -> np.ndarray:
    """Row ``c`` of the dense weights viewed as K maps of n x n (read-only view)."""
    num_classes = model.config.num_classes
    if not 0 <= c < num_classes:
        raise IndexError(f"class {c} out of range for {num_classes} classes")
    view = model.dense.weight.data[c].reshape(model.stack_shape)
    view.flags.writeable = False
    return view


def activation_gradients(model: Model, trace: ForwardTrace, classes) -> np.ndarray:
    """Backprop d logit[c] / d A through the dense layer, one class per sample."""
    classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    onehot = np.zeros_like(trace.logits)
    onehot[np.arange(len(classes)), classes] = 1.0
    w = model.dense.weight
    saved = None if w.grad is None else w.grad.copy()
    saved_b = None if model.dense.bias.grad is None else model.dense.bias.grad.copy()
    saved_ctx = model.dense._ctx
    model.dense.forward(trace.activations.reshape(len(classes), -1))
    g = model.dense.backward(onehot)
    w.grad, model.dense.bias.grad, model.dense._ctx = saved, saved_b, saved_ctx
    return g.reshape(trace.activations.shape)


def save_checkpoint(model: Model, path) -> None:
    """Binary layout: magic, u32 version, u32 config length, config JSON,
    u32 tensor count, then per tensor u32 ndim, u32 dims, float64 LE data."""
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    state = model.state()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(state)))
        for t in state:
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    version, clen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    cfg = json.loads(raw[off : off + clen].decode("utf-8"))
    off += clen
    model = build_model(ModelConfig(**cfg), seed=0)
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    state = model.state()
    if count != len(state):
        raise ValueError(f"{path}: expected {len(state)} tensors, found {count}")
    for t in state:
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        if tuple(shape) != t.data.shape:
            raise ValueError(f"{path}: tensor {t.name} has shape {shape}, expected {t.data.shape}")
        nbytes = 8 * int(np.prod(shape))
        t.data = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=off).astype(np.float64).reshape(shape)
        off += nbytes
    return model


def models_equal(a: Model, b: Model) -> bool:
    if a.config != b.config:
        return False
    return all(np.array_equal(x.data, y.data) for x, y in zip(a.state(), b.state()))
