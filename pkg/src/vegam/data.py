"""Datasets: procedural glyphs, augmentation, stratified splits, oracle
fixation maps and manifest/gaze loading.

Images are grayscale in [0, 1] with a white background (1.0) and black ink
(0.0).  A :class:`Dataset` keeps all images in one (N, H, W) array.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .cam import bilinear_resize
from .gaze import STIMULUS_SIDE, Fixation, fixation_map
from .mapio import read_gray_png, read_pfm, write_gray_png, write_pfm

BACKGROUND = 1.0
INK = 0.0
SET_PRESETS = {"latin": (10, 85), "devanagari": (12, 90)}  # (classes, per_class)


class DataError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    image: np.ndarray
    label: int
    fixmap: np.ndarray | None = None


@dataclass
class Dataset:
    ids: list[str]
    images: np.ndarray  # (N, H, W)
    labels: np.ndarray  # (N,)
    num_classes: int
    prototypes: np.ndarray | None = None  # (C, H, W) class templates, if known
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.ids) != len(self.images) or len(self.images) != len(self.labels):
            raise DataError("ids, images and labels must have equal length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.ids[i], self.images[i], int(self.labels[i]))

    @property
    def side(self) -> int:
        return self.images.shape[-1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset([self.ids[i] for i in idx], self.images[idx], self.labels[idx], self.num_classes,
                       self.prototypes)

    def resized(self, side: int) -> "Dataset":
        if side == self.side:
            return self
        imgs = bilinear_resize(self.images, side, side)
        protos = None if self.prototypes is None else bilinear_resize(self.prototypes, side, side)
        return Dataset(list(self.ids), np.clip(imgs, 0, 1), self.labels.copy(), self.num_classes, protos)


# --- procedural glyphs ---------------------------------------------------

def _arc(cx, cy, r, a0, a1, steps=20):
    t = np.radians(np.linspace(a0, a1, steps))
    return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)


def _line(*pts):
    return np.array(pts, dtype=np.float64)


# Stroke programs on [-1, 1]^2 (x right, y down); each is a list of polylines.
GLYPHS: list[list[np.ndarray]] = [
    [_arc(0, 0, 0.8, 0, 360, 40)],  # O
    [_line((-0.8, 0), (0.8, 0)), _line((0, -0.8), (0, 0.8))],  # +
    [_line((-0.8, -0.8), (0.8, -0.8)), _line((0, -0.8), (0, 0.8))],  # T
    [_line((-0.6, -0.8), (-0.6, 0.8), (0.7, 0.8))],  # L
    [_line((-0.8, 0.8), (0, -0.8), (0.8, 0.8))],  # inverted V
    [_line((-0.7, -0.8), (0.7, -0.8), (-0.7, 0.8), (0.7, 0.8))],  # Z
    [np.concatenate([_line((-0.7, -0.8)), _arc(0, 0.1, 0.7, 180, 0, 20), _line((0.7, -0.8))])],  # U
    [_line((-0.7, -0.8), (-0.7, 0.8)), _line((0.7, -0.8), (0.7, 0.8)), _line((-0.7, 0), (0.7, 0))],  # H
    [np.concatenate([_arc(0, -0.4, 0.4, -30, -270, 20), _arc(0, 0.4, 0.4, -90, 150, 20)])],  # S
    [_line((0.7, -0.8), (-0.6, -0.8), (-0.6, 0.8), (0.7, 0.8)), _line((-0.6, 0), (0.4, 0))],  # E
    [_arc(0, 0, 0.8, 45, 315, 30)],  # C
    [_line((-0.8, -0.8), (0.8, 0.8)), _line((-0.8, 0.8), (0.8, -0.8))],  # X
]


def _densify(poly: np.ndarray, max_len: float = 0.1) -> np.ndarray:
    pts = [poly[0]]
    for a, b in zip(poly[:-1], poly[1:]):
        k = max(1, int(math.ceil(np.linalg.norm(b - a) / max_len)))
        t = np.linspace(0, 1, k + 1)[1:, None]
        pts.extend(a + t * (b - a))
    return np.array(pts)


def render_strokes(polylines: Sequence[np.ndarray], side: int, width: float) -> np.ndarray:
    """Anti-aliased rendering of polylines given in pixel coordinates (x, y)."""
    segs = np.concatenate([np.stack([p[:-1], p[1:]], axis=1) for p in polylines if len(p) > 1])
    ax, ay = segs[:, 0, 0], segs[:, 0, 1]
    bx, by = segs[:, 1, 0] - ax, segs[:, 1, 1] - ay
    denom = np.maximum(bx * bx + by * by, 1e-12)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    px, py = xx.ravel(), yy.ravel()
    dist = np.empty(px.size)
    for start in range(0, px.size, 16384):
        sl = slice(start, start + 16384)
        apx, apy = px[sl, None] - ax, py[sl, None] - ay
        t = np.clip((apx * bx + apy * by) / denom, 0.0, 1.0)
        dx, dy = apx - t * bx, apy - t * by
        dist[sl] = np.sqrt((dx * dx + dy * dy).min(axis=1))
    ink = np.clip(width / 2 - dist + 0.5, 0.0, 1.0)
    return (BACKGROUND - ink * (BACKGROUND - INK)).reshape(side, side)


def _to_pixels(poly: np.ndarray, side: int) -> np.ndarray:
    # glyph box [-1, 1] occupies the central 70% of the canvas
    return (poly * 0.35 + 0.5) * (side - 1)


def glyph_prototype(cls: int, side: int, width_frac: float = 0.045) -> np.ndarray:
    polys = [_to_pixels(_densify(p), side) for p in GLYPHS[cls]]
    return render_strokes(polys, side, width_frac * side)


def _jittered_glyph(cls: int, side: int, rng: np.random.Generator) -> np.ndarray:
    angle = math.radians(rng.uniform(-8, 8))
    scale = rng.uniform(0.85, 1.1)
    shift = rng.uniform(-0.12, 0.12, size=2)
    amp = rng.uniform(0.0, 0.06, size=2)
    freq = rng.uniform(1.5, 3.0, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    polys = []
    for p in GLYPHS[cls]:
        q = _densify(p)
        # smooth warp bends straight strokes and reshapes arcs
        q = q + amp * np.sin(freq * q[:, ::-1] + phase)
        q = (q * scale) @ rot.T + shift
        polys.append(_to_pixels(q, side))
    width = rng.uniform(0.035, 0.06) * side
    return render_strokes(polys, side, width)


def generate_glyphs(num_classes: int = 10, per_class: int = 85, seed: int = 0, side: int = STIMULUS_SIDE) -> Dataset:
    """Procedural glyph dataset: one fixed stroke program per class, rendered
    with per-sample jitter of position, scale, stroke width and curvature."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if num_classes > len(GLYPHS):
        raise ValueError(f"at most {len(GLYPHS)} glyph classes are defined")
    seeds = np.random.SeedSequence(seed).spawn(num_classes * per_class)
    images = np.empty((num_classes * per_class, side, side))
    labels = np.repeat(np.arange(num_classes), per_class)
    for i, (lab, ss) in enumerate(zip(labels, seeds)):
        images[i] = _jittered_glyph(int(lab), side, np.random.default_rng(ss))
    ids = [f"g{c:02d}_{k:04d}" for c in range(num_classes) for k in range(per_class)]
    protos = np.stack([glyph_prototype(c, side) for c in range(num_classes)])
    return Dataset(ids, images, labels, num_classes, protos)


# --- augmentation ---------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    shear: float = 0.2
    rotation: float = 40.0  # degrees, drawn uniformly from [-rotation, rotation]
    hflip: bool = True
    vflip: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.rotation <= 180:
            raise ValueError("rotation range must lie within [0, 180] degrees")
        if self.shear < 0:
            raise ValueError("shear must be >= 0")


def affine_warp(image, rotation: float = 0.0, shear: float = 0.0, hflip: bool = False,
                vflip: bool = False, fill: float = BACKGROUND) -> np.ndarray:
    """Rotate (degrees), shear and flip about the image centre with bilinear
    resampling; pixels mapped from outside the source get ``fill``."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    th = math.radians(rotation)
    # forward map in (row, col) coordinates
    rot = np.array([[math.cos(th), math.sin(th)], [-math.sin(th), math.cos(th)]])
    sh = np.array([[1.0, 0.0], [shear, 1.0]])
    flip = np.diag([-1.0 if vflip else 1.0, -1.0 if hflip else 1.0])
    fwd = rot @ sh @ flip
    inv = np.linalg.inv(fwd)
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - inv @ centre
    if np.allclose(inv, np.round(inv)) and np.allclose(offset, np.round(offset)):
        inv, offset = np.round(inv), np.round(offset)
    out = ndimage.affine_transform(img, inv, offset=offset, order=1, mode="constant", cval=fill)
    return np.clip(out, 0.0, 1.0)


def _draw_transform(params: AugmentParams) -> tuple[float, float, bool, bool]:
    rng = np.random.default_rng(params.seed)
    rotation = rng.uniform(-params.rotation, params.rotation) if params.rotation else 0.0
    shear = rng.uniform(-params.shear, params.shear) if params.shear else 0.0
    hflip = bool(params.hflip and rng.random() < 0.5)
    vflip = bool(params.vflip and rng.random() < 0.5)
    return rotation, shear, hflip, vflip


def augment(sample: Sample, params: AugmentParams) -> Sample:
    """Random affine draw from ``params.seed``; a fixation map, if attached,
    receives the identical transform (filled with 0 outside)."""
    tf = _draw_transform(params)
    fix = None if sample.fixmap is None else affine_warp(sample.fixmap, *tf, fill=0.0)
    return Sample(sample.id, affine_warp(sample.image, *tf), sample.label, fix)


def augment_dataset(ds: Dataset, copies: int, params: AugmentParams,
                    fixmaps: np.ndarray | None = None) -> tuple[Dataset, np.ndarray | None]:
    """``copies`` augmented variants of every sample with per-sample seeds.

    Returns the new dataset and the correspondingly warped fixation maps
    (None when ``fixmaps`` is None).
    """
    seeds = np.random.SeedSequence(params.seed).generate_state(len(ds) * copies)
    ids, imgs, labels, fixes = [], [], [], []
    for i in range(len(ds)):
        s = ds[i]
        if fixmaps is not None:
            s.fixmap = fixmaps[i]
        for k in range(copies):
            p = AugmentParams(params.shear, params.rotation, params.hflip, params.vflip, int(seeds[i * copies + k]))
            a = augment(s, p)
            ids.append(f"{s.id}_a{k}")
            imgs.append(a.image)
            labels.append(a.label)
            fixes.append(a.fixmap)
    out = Dataset(ids, np.stack(imgs), np.array(labels), ds.num_classes, ds.prototypes)
    return out, (None if fixmaps is None else np.stack(fixes))


# --- splitting ------------------------------------------------------------

def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified, seed-reproducible split into (train, test)."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise DataError(f"class {c} has fewer than 2 samples; cannot stratify")
        idx = rng.permutation(idx)
        k = min(max(int(round(train_fraction * len(idx))), 1), len(idx) - 1)
        train_idx.extend(idx[:k])
        test_idx.extend(idx[k:])
    return ds.subset(np.sort(train_idx)), ds.subset(np.sort(test_idx))


# --- oracle fixation maps -------------------------------------------------

def class_prototypes(ds: Dataset) -> np.ndarray:
    if ds.prototypes is not None:
        return ds.prototypes
    return np.stack([ds.images[ds.labels == c].mean(axis=0) for c in range(ds.num_classes)])


def discriminative_masks(prototypes: np.ndarray, blur: float) -> np.ndarray:
    """Per class: |prototype - nearest other prototype|, Gaussian-blurred."""
    C = len(prototypes)
    flat = prototypes.reshape(C, -1)
    d2 = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
    masks = np.empty_like(prototypes)
    for c in range(C):
        others = [o for o in range(C) if o != c]
        nearest = min(others, key=lambda o: d2[c, o])
        if d2[c, nearest] == 0:
            raise DataError(f"classes {c} and {nearest} have identical prototypes")
        diff = np.abs(prototypes[c] - prototypes[nearest])
        masks[c] = ndimage.gaussian_filter(diff, blur) if blur > 0 else diff
    return masks


def oracle_fixmaps(ds: Dataset, sigma_px: float, top_fraction: float = 0.05,
                   blur_fraction: float = 0.03, peak_normalize: bool = True) -> np.ndarray:
    """Synthetic fixation maps from class-discriminative ink.

    Each sample's ink is weighted by its class's discriminative mask; the
    top ``top_fraction`` of pixels become equal-duration pseudo-fixations
    that go through the ordinary fixation-map formula.  With
    ``peak_normalize`` the map is rescaled so its maximum is 1.
    """
    protos = class_prototypes(ds)
    side = ds.side
    masks = discriminative_masks(protos, blur_fraction * side)
    k = max(1, int(round(top_fraction * side * side)))
    out = np.empty((len(ds), ds.images.shape[1], side))
    for i in range(len(ds)):
        ink = BACKGROUND - ds.images[i]
        score = ink * masks[ds.labels[i]]
        flat = score.ravel()
        order = np.argsort(-flat, kind="stable")[:k]
        order = order[flat[order] > 0]
        if len(order) == 0:
            order = np.argsort(-masks[ds.labels[i]].ravel(), kind="stable")[:k]
        ys, xs = np.unravel_index(order, score.shape)
        fx = [Fixation(float(x), float(y), 1.0) for x, y in zip(xs, ys)]
        m = fixation_map(fx, score.shape[1], score.shape[0], sigma_px).values
        out[i] = m / m.max() if peak_normalize and m.max() > 0 else m
    return out


# --- files -----------------------------------------------------------------

MANIFEST = "manifest.csv"


def save_dataset(ds: Dataset, directory) -> Path:
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    with open(d / MANIFEST, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "path", "label"])
        for i in range(len(ds)):
            rel = f"images/{ds.ids[i]}.png"
            write_gray_png(d / rel, ds.images[i])
            wr.writerow([ds.ids[i], rel, int(ds.labels[i])])
    if ds.prototypes is not None:
        np.save(d / "prototypes.npy", ds.prototypes)
    return d / MANIFEST


FIXMAP_SUFFIX = ".fix.pfm"


def save_fixmaps(ids: Sequence[str], fixmaps, directory) -> None:
    """One ``<id>.fix.pfm`` per sample under ``directory/images``."""
    d = Path(directory) / "images"
    d.mkdir(parents=True, exist_ok=True)
    for sid, m in zip(ids, fixmaps):
        write_pfm(d / f"{sid}{FIXMAP_SUFFIX}", m)


def load_fixmaps(ids: Sequence[str], directory, side: int | None = None) -> np.ndarray:
    """Maps for ``ids`` from ``directory/images``, optionally resized to ``side``."""
    d = Path(directory) / "images"
    out = []
    for sid in ids:
        path = d / f"{sid}{FIXMAP_SUFFIX}"
        if not path.exists():
            raise DataError(f"missing fixation map for sample {sid} ({path})")
        m = read_pfm(path)
        if side is not None and m.shape != (side, side):
            m = bilinear_resize(m, side, side)
        out.append(m)
    return np.stack(out) if out else np.zeros((0, side or 0, side or 0))


def _pad_to_square(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    s = max(h, w)
    out = np.full((s, s), BACKGROUND)
    top, left = (s - h) // 2, (s - w) // 2
    out[top : top + h, left : left + w] = img
    return out


def load_images(directory, side: int = STIMULUS_SIDE, num_classes: int | None = None) -> Dataset:
    """Load ``manifest.csv`` (id,path,label) and its images, padded to square
    with background and resized to ``side``."""
    d = Path(directory)
    manifest = d / MANIFEST
    if not manifest.exists():
        raise DataError(f"{manifest}: manifest not found")
    ids, imgs, labels = [], [], []
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "path", "label"]:
            raise DataError(f"{manifest} line 1: expected header id,path,label")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{manifest} line {lineno}: expected 3 fields, got {len(row)}")
            try:
                label = int(row[2])
            except ValueError:
                raise DataError(f"{manifest} line {lineno}: label {row[2]!r} is not an integer") from None
            img = _pad_to_square(read_gray_png(d / row[1]))
            if img.shape[0] != side:
                img = np.clip(bilinear_resize(img, side, side), 0, 1)
            ids.append(row[0])
            imgs.append(img)
            labels.append(label)
    if not ids:
        raise DataError(f"{manifest}: no samples")
    nc = num_classes if num_classes is not None else int(max(labels)) + 1
    protos = None
    if (d / "prototypes.npy").exists():
        protos = np.load(d / "prototypes.npy")
        if protos.shape[-1] != side:
            protos = bilinear_resize(protos, side, side)
    return Dataset(ids, np.stack(imgs), np.array(labels), nc, protos)
