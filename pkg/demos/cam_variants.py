"""Classical versus Hadamard class activation maps.

With one linear layer on top of the conv stack, the gradient of a logit with
respect to the activations is just that class's weight row.  This script
checks that on a freshly built model and then shows how the two CAM variants
react when the weights lean negative: averaging the gradients first (classical)
tends to flip the whole map below zero, while the per-pixel product keeps
local structure.

    python demos/cam_variants.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from vegam.cam import bilinear_resize, explain, explain_backprop
from vegam.data import generate_glyphs
from vegam.mapio import write_gray_png, write_heatmap_png
from vegam.model import ModelConfig, build_model

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

model = build_model(ModelConfig.desk(num_classes=10), seed=1)
glyphs = generate_glyphs(10, 3, seed=3, side=64)
img = glyphs.images[4]

for variant in ("classical", "modified"):
    fast = explain(model, img, variant)
    slow = explain_backprop(model, img, variant)
    print(f"{variant:9s}: class {fast.cls}, |fast - backprop| = {np.abs(fast.values - slow.values).max():.1e}")

# bias the dense weights negative and count all-zero maps over the glyph set
model.dense.weight.data -= 0.005
zeros = {"classical": 0, "modified": 0}
for g in glyphs.images:
    for variant in zeros:
        zeros[variant] += explain(model, g, variant).is_zero
print(f"all-zero maps with negative-leaning weights: {zeros}")

write_gray_png(out / "glyph.png", img)
for variant in ("classical", "modified"):
    m = explain(model, img, variant)
    write_heatmap_png(out / f"cam_{variant}.png", bilinear_resize(m.values, 64, 64))
print(f"wrote glyph and CAM images to {out}")
