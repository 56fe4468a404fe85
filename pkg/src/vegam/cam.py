"""Class activation maps: classical Grad-CAM, the Hadamard variant, and the
dense-weight fast path available when the classifier head is one linear layer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

log = logging.getLogger(__name__)

VARIANTS = ("classical", "modified")


class UnsupportedArchitecture(ValueError):
    """The dense weights cannot be read as per-feature-map gradients."""


@dataclass
class CamMap:
    values: np.ndarray
    cls: int = -1
    variant: str = "modified"

    @property
    def side(self) -> int:
        return self.values.shape[0]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values > 0)


def _check_stack(A, grads) -> tuple[np.ndarray, np.ndarray]:
    A = np.asarray(A, dtype=np.float64)
    G = np.asarray(grads, dtype=np.float64)
    if A.ndim == 2:
        A = A[None]
    if G.ndim == 2:
        G = G[None]
    if A.shape != G.shape or A.ndim != 3:
        raise ShapeError(f"activation stack {A.shape} and gradient stack {G.shape} must both be (K, n, n)")
    return A, G


def neuron_importance(grads) -> np.ndarray:
    """Global average of each gradient map: one weight per feature map."""
    G = np.asarray(grads, dtype=np.float64)
    if G.ndim == 2:
        G = G[None]
    if G.ndim != 3 or G.size == 0:
        raise ShapeError(f"gradient stack must be a non-empty (K, n, n) array, got {G.shape}")
    return G.mean(axis=(1, 2))


def grad_cam(A, grads, cls: int = -1) -> CamMap:
    A, G = _check_stack(A, grads)
    alpha = neuron_importance(G)
    values = np.maximum(np.tensordot(alpha, A, axes=(0, 0)), 0.0)
    return CamMap(values, cls, "classical")


def modified_grad_cam(A, grads, cls: int = -1) -> CamMap:
    """ReLU of the per-pixel sum over feature maps of gradient * activation."""
    A, G = _check_stack(A, grads)
    values = np.maximum((G * A).sum(axis=0), 0.0)
    return CamMap(values, cls, "modified")


def cam_from_dense_weights(A, weight_maps, variant: str = "modified", cls: int = -1) -> CamMap:
    """CAM without a backward pass: the dense weights stand in for the gradients."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    A = np.asarray(A, dtype=np.float64)
    W = np.asarray(weight_maps, dtype=np.float64)
    if A.shape != W.shape:
        raise UnsupportedArchitecture(
            f"weight maps {W.shape} do not match activation stack {A.shape}; "
            "a single dense layer over the last conv stack is required"
        )
    fn = grad_cam if variant == "classical" else modified_grad_cam
    return fn(A, W, cls)


def explain(model, image, variant: str = "modified", cls: int | None = None) -> CamMap:
    """Eval-mode CAM for one image; defaults to the predicted class."""
    from .model import dense_weight_maps, forward

    trace = forward(model, image, mode="eval")
    c = int(trace.predicted[0]) if cls is None else int(cls)
    return cam_from_dense_weights(trace.activations[0], dense_weight_maps(model, c), variant, c)


def explain_backprop(model, image, variant: str = "modified", cls: int | None = None) -> CamMap:
    """Same as :func:`explain` but with gradients from an actual backward pass."""
    from .model import activation_gradients, forward

    trace = forward(model, image, mode="eval")
    c = int(trace.predicted[0]) if cls is None else int(cls)
    G = activation_gradients(model, trace, [c])[0]
    fn = grad_cam if variant == "classical" else modified_grad_cam
    return fn(trace.activations[0], G, c)


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear-interpolation weights, pixel-centre aligned."""
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be >= 1")
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    M = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(M, (rows, i0), 1.0 - frac)
    np.add.at(M, (rows, i1), frac)
    return M


def bilinear_resize(values, out_w: int, out_h: int) -> np.ndarray:
    """Resize a 2-D map, or a stack of them along the leading axes."""
    v = np.asarray(values, dtype=np.float64)
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    mh = interp_matrix(v.shape[-2], out_h)
    mw = interp_matrix(v.shape[-1], out_w)
    return mh @ v @ mw.T


def minmax(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi > lo:
        return (v - lo) / (hi - lo)
    return v.copy()


# Piecewise-linear "hot" ramp: black -> red -> yellow -> white.
_HOT_STOPS = np.array([0.0, 1 / 3, 2 / 3, 1.0])
_HOT_RGB = np.array([[0, 0, 0], [255, 0, 0], [255, 255, 0], [255, 255, 255]], dtype=np.float64)


def heatmap_render(values, ramp: str = "hot") -> np.ndarray:
    """Min-max normalise and map to uint8 RGB (``hot``) or gray (``gray``).

    An all-zero map renders black and is logged as a zero map.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("map contains non-finite values")
    lo, hi = v.min(), v.max()
    if hi > lo:
        t = (v - lo) / (hi - lo)
    else:
        if hi == 0:
            log.info("zero map: rendering all black")
        t = np.full_like(v, 1.0 if hi > 0 else 0.0)
    if ramp == "gray":
        return np.round(t * 255).astype(np.uint8)
    if ramp != "hot":
        raise ValueError(f"unknown ramp {ramp!r}")
    rgb = np.stack([np.interp(t, _HOT_STOPS, _HOT_RGB[:, ch]) for ch in range(3)], axis=-1)
    return np.round(rgb).astype(np.uint8)
