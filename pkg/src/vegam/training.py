"""Baseline (cross-entropy) and fixation-supervised training.

The supervised variant adds ``lam * MSE(cam, fixmap)`` to the cross-entropy,
where ``cam`` is the Hadamard-style CAM built from the current dense weights
(they equal the logit gradients for a linear head), bilinearly resized to
the fixation map's size.  The MSE term is differentiated through both the
activation stack and the dense weights.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .cam import interp_matrix
from .data import DataError, Dataset, split
from .model import Model, ModelConfig, build_model, forward
from .tensor import AdamState, ShapeError, adam_step, softmax_ce_loss


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    lam: float = 1.0
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    cam_class_mode: str = "predicted"  # or "true"
    map_norm: str = "minmax"  # or "none"
    cam_variant: str = "modified"  # or "classical"
    val_fraction: float = 0.1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.cam_class_mode not in ("predicted", "true"):
            raise ValueError("cam_class_mode must be 'predicted' or 'true'")
        if self.map_norm not in ("minmax", "none"):
            raise ValueError("map_norm must be 'minmax' or 'none'")
        if self.cam_variant not in ("modified", "classical"):
            raise ValueError("cam_variant must be 'modified' or 'classical'")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class EpochMetrics:
    epoch: int
    train_ce: float
    train_mse: float
    train_acc: float
    val_ce: float
    val_mse: float
    val_acc: float


@dataclass
class EvalRecord:
    ids: list[str]
    true: np.ndarray
    pred: np.ndarray
    confidence_true: np.ndarray

    @property
    def correct(self) -> np.ndarray:
        return self.true == self.pred

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.correct)) if len(self.true) else float("nan")


@dataclass
class TrainReport:
    mode: str
    config: TrainConfig
    initial_val_ce: float
    epochs: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    wall_time: float = 0.0
    test: EvalRecord | None = None

    def rows(self) -> list[dict]:
        return [asdict(e) for e in self.epochs]


@dataclass
class JointLoss:
    loss: float
    ce: float
    mse: float
    dlogits: np.ndarray
    dact: np.ndarray | None
    dweight: np.ndarray | None


def _cam_batch(A: np.ndarray, Wc: np.ndarray, variant: str) -> tuple[np.ndarray, np.ndarray]:
    """Pre-ReLU and post-ReLU CAMs for a batch; Wc holds each sample's class row."""
    if variant == "modified":
        S = (Wc * A).sum(axis=1)
    else:
        S = np.einsum("nk,nkij->nij", Wc.mean(axis=(2, 3)), A)
    return S, np.maximum(S, 0.0)


def joint_loss(model: Model, trace, labels, fixmaps: np.ndarray | None, lam: float,
               cam_class_mode: str = "predicted", map_norm: str = "minmax",
               cam_variant: str = "modified") -> JointLoss:
    """``CE + lam * MSE(resized CAM, fixmap)`` and its gradients.

    Returns gradients w.r.t. the logits, the activation stack (MSE path
    only) and the dense weight matrix (MSE path only).  With ``lam == 0``
    or no fixmaps the MSE gradients are ``None``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    ce, dlogits = softmax_ce_loss(trace.logits, labels)
    if fixmaps is None:
        return JointLoss(ce, ce, float("nan"), dlogits, None, None)
    F = np.asarray(fixmaps, dtype=np.float64)
    A = trace.activations
    N, K, n, _ = A.shape
    if F.ndim != 3 or F.shape[0] != N:
        raise ShapeError(f"expected {N} fixation maps, got array of shape {F.shape}")
    classes = trace.predicted if cam_class_mode == "predicted" else labels
    W = model.dense.weight.data.reshape(-1, K, n, n)
    Wc = W[classes]
    S, X = _cam_batch(A, Wc, cam_variant)

    if map_norm == "minmax":
        flat = X.reshape(N, -1)
        lo_i, hi_i = flat.argmin(axis=1), flat.argmax(axis=1)
        lo, hi = flat[np.arange(N), lo_i], flat[np.arange(N), hi_i]
        rng_ = hi - lo
        live = rng_ > 0
        scale = np.where(live, rng_, 1.0)
        Xn = np.where(live[:, None, None], (X - lo[:, None, None]) / scale[:, None, None], X)
    else:
        Xn = X
    mh = interp_matrix(n, F.shape[1])
    mw = interp_matrix(n, F.shape[2])
    R = mh @ Xn @ mw.T
    diff = R - F
    mse = float(np.mean(diff * diff))
    loss = ce + lam * mse
    if lam == 0:
        return JointLoss(loss, ce, mse, dlogits, None, None)

    dR = lam * 2.0 * diff / diff.size
    dXn = mh.T @ dR @ mw
    if map_norm == "minmax":
        inv = 1.0 / scale
        dX = np.where(live[:, None, None], dXn * inv[:, None, None], dXn)
        # through the min and max selections
        t = (X - lo[:, None, None]) * (inv * inv)[:, None, None]
        d_hi = -(dXn * t).reshape(N, -1).sum(axis=1)
        d_lo = (dXn * (X - hi[:, None, None]) * (inv * inv)[:, None, None]).reshape(N, -1).sum(axis=1)
        dXf = dX.reshape(N, -1)
        rows = np.arange(N)[live]
        np.add.at(dXf, (rows, hi_i[live]), d_hi[live])
        np.add.at(dXf, (rows, lo_i[live]), d_lo[live])
        dX = dXf.reshape(N, n, n)
    else:
        dX = dXn
    dS = dX * (S > 0)
    if cam_variant == "modified":
        dA = dS[:, None] * Wc
        dWc = dS[:, None] * A
    else:
        alpha = Wc.mean(axis=(2, 3))
        dA = dS[:, None] * alpha[:, :, None, None]
        dalpha = np.einsum("nij,nkij->nk", dS, A)
        dWc = np.broadcast_to((dalpha / (n * n))[:, :, None, None], Wc.shape)
    dW = np.zeros_like(W)
    np.add.at(dW, classes, dWc)
    return JointLoss(loss, ce, mse, dlogits, dA, dW.reshape(model.dense.weight.shape))


def _fixmap_array(ds: Dataset, fixmaps) -> np.ndarray:
    if isinstance(fixmaps, Mapping):
        missing = [i for i in ds.ids if i not in fixmaps]
        if missing:
            raise DataError(f"missing fixation map for sample {missing[0]}")
        return np.stack([np.asarray(fixmaps[i], dtype=np.float64) for i in ds.ids])
    arr = np.asarray(fixmaps, dtype=np.float64)
    if len(arr) != len(ds):
        raise DataError(f"{len(arr)} fixation maps for {len(ds)} samples")
    return arr


def evaluate(model: Model, ds: Dataset, batch_size: int = 256) -> EvalRecord:
    ds = ds.resized(model.config.input_side)
    preds, confs = [], []
    for start in range(0, len(ds), batch_size):
        tr = forward(model, ds.images[start : start + batch_size], mode="eval")
        lab = ds.labels[start : start + batch_size]
        preds.append(tr.predicted)
        confs.append(tr.confidence[np.arange(len(lab)), lab])
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    conf = np.concatenate(confs) if confs else np.zeros(0)
    return EvalRecord(list(ds.ids), ds.labels.copy(), pred, conf)


def _losses(model: Model, ds: Dataset, fix: np.ndarray | None, cfg: TrainConfig, batch_size: int = 256):
    """Eval-mode CE, MSE and accuracy over a whole dataset."""
    ce_sum = mse_sum = 0.0
    correct = 0
    for start in range(0, len(ds), batch_size):
        sl = slice(start, start + batch_size)
        tr = forward(model, ds.images[sl], mode="eval")
        jl = joint_loss(model, tr, ds.labels[sl], None if fix is None else fix[sl], 0.0,
                        cfg.cam_class_mode, cfg.map_norm, cfg.cam_variant)
        m = len(ds.labels[sl])
        ce_sum += jl.ce * m
        mse_sum += jl.mse * m
        correct += int(np.sum(tr.predicted == ds.labels[sl]))
    n = max(len(ds), 1)
    return ce_sum / n, mse_sum / n, correct / n


def _train(ds: Dataset, fixmaps, cfg: TrainConfig, model_config: ModelConfig | None, mode: str,
           model: Model | None = None) -> tuple[Model, TrainReport]:
    if len(ds) == 0:
        raise ValueError("empty dataset")
    t0 = time.perf_counter()
    if model is None:
        model_config = model_config or ModelConfig.desk(num_classes=ds.num_classes)
        model = build_model(model_config, seed=cfg.seed)
    ds = ds.resized(model.config.input_side)
    fix = None if fixmaps is None else _fixmap_array(ds, fixmaps)

    if cfg.val_fraction > 0:
        tr_ds, val_ds = split(ds, 1.0 - cfg.val_fraction, seed=cfg.seed)
        pos = {k: i for i, k in enumerate(ds.ids)}
        tr_idx = np.array([pos[k] for k in tr_ds.ids])
        val_idx = np.array([pos[k] for k in val_ds.ids])
    else:
        tr_ds, val_ds = ds, ds
        tr_idx = val_idx = np.arange(len(ds))
    tr_fix = None if fix is None else fix[tr_idx]
    val_fix = None if fix is None else fix[val_idx]

    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(lr=cfg.lr)
    params = model.params()
    init_ce, _, _ = _losses(model, val_ds, val_fix, cfg)
    report = TrainReport(mode, cfg, init_ce)
    best_ce, best_snap, best_epoch, since_best = init_ce, model.snapshot(), 0, 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(tr_ds))
        ce_sum = mse_sum = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            drop_seed = int(rng.integers(2**63 - 1))
            trace = forward(model, tr_ds.images[idx], mode="train", dropout_seed=drop_seed)
            jl = joint_loss(model, trace, tr_ds.labels[idx], None if tr_fix is None else tr_fix[idx],
                            cfg.lam, cfg.cam_class_mode, cfg.map_norm, cfg.cam_variant)
            model.zero_grad()
            model.backward(jl.dlogits, jl.dact)
            if jl.dweight is not None:
                model.dense.weight.accumulate(jl.dweight)
            adam_step(adam, params)
            ce_sum += jl.ce * len(idx)
            mse_sum += jl.mse * len(idx)
            correct += int(np.sum(trace.predicted == tr_ds.labels[idx]))
        val_ce, val_mse, val_acc = _losses(model, val_ds, val_fix, cfg)
        m = len(order)
        report.epochs.append(EpochMetrics(epoch, ce_sum / m, mse_sum / m, correct / m, val_ce, val_mse, val_acc))
        report.stopped_epoch = epoch
        if val_ce < best_ce:
            best_ce, best_snap, best_epoch, since_best = val_ce, model.snapshot(), epoch, 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.restore(best_snap)
    report.best_epoch = best_epoch
    report.wall_time = time.perf_counter() - t0
    return model, report


def train_baseline(ds: Dataset, cfg: TrainConfig = TrainConfig(), model_config: ModelConfig | None = None,
                   model: Model | None = None) -> tuple[Model, TrainReport]:
    """Cross-entropy only.  Early stopping on validation CE, best epoch restored."""
    return _train(ds, None, cfg, model_config, "baseline", model)


def train_vegam(ds: Dataset, fixmaps, cfg: TrainConfig = TrainConfig(), model_config: ModelConfig | None = None,
                model: Model | None = None) -> tuple[Model, TrainReport]:
    """Cross-entropy plus ``cfg.lam`` times the CAM/fixation-map MSE.

    ``fixmaps`` is an (N, H, W) array aligned with ``ds`` or a mapping from
    sample id to map.
    """
    return _train(ds, fixmaps, cfg, model_config, "vegam", model)
