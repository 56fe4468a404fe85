"""Reading and writing 2-D maps: PFM for values, PNG for inspection."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .cam import heatmap_render


def write_pfm(path, values) -> None:
    """Single-channel little-endian PFM (float32, rows stored bottom-up)."""
    v = np.asarray(values, dtype="<f4")
    if v.ndim != 2:
        raise ValueError(f"PFM maps must be 2-D, got shape {v.shape}")
    h, w = v.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(v[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0].strip() not in (b"Pf", b"PF"):
        raise ValueError(f"{path}: not a PFM file")
    channels = 1 if parts[0].strip() == b"Pf" else 3
    w, h = (int(t) for t in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dtype, count=w * h * channels)
    data = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return data[::-1].astype(np.float64)


def write_heatmap_png(path, values, ramp: str = "hot") -> None:
    img = heatmap_render(values, ramp=ramp)
    Image.fromarray(img, mode="RGB" if img.ndim == 3 else "L").save(path)


def write_gray_png(path, image) -> None:
    """Save a [0, 1] image as 8-bit grayscale."""
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(v * 255).astype(np.uint8), mode="L").save(path)


def read_gray_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0
