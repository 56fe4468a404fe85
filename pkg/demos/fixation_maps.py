"""From a raw gaze stream to a fixation map.

A synthetic viewer looks at three spots on a 400x400 stimulus, jumping
between them with fast saccades.  I-VT recovers the dwells, durations are
normalised by the trial length, and the Gaussian map is rendered to PNG.

    python demos/fixation_maps.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from vegam.gaze import GazeSample, fixation_map, ivt_extract, normalize_durations, trial_duration
from vegam.mapio import write_heatmap_png, write_pfm

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(0)

# 120 Hz stream: dwell, sweep, dwell, sweep, dwell
dt = 1000 / 120
spots = [(120, 140, 450), (280, 150, 250), (200, 300, 600)]  # x, y, dwell ms
samples, t = [], 0.0
for i, (x, y, dwell) in enumerate(spots):
    if i:
        px, py, _ = spots[i - 1]
        for s in (0.3, 0.7):
            samples.append(GazeSample(t, px + s * (x - px), py + s * (y - py)))
            t += dt
    for _ in range(int(dwell / dt)):
        samples.append(GazeSample(t, x + rng.normal(0, 0.8), y + rng.normal(0, 0.8)))
        t += dt

fixations = ivt_extract(samples)
print(f"{len(samples)} samples -> {len(fixations)} fixations")
for f in normalize_durations(fixations, trial_duration(samples)):
    print(f"  ({f.x:6.1f}, {f.y:6.1f})  {f.duration:.3f} of the trial")

fmap = fixation_map(normalize_durations(fixations, trial_duration(samples)))
print(f"map {fmap.width}x{fmap.height}, sigma {fmap.sigma_px} px, max {fmap.values.max():.3f}")
write_pfm(out / "fixation_map.pfm", fmap.values)
write_heatmap_png(out / "fixation_map.png", fmap.values)
print(f"wrote {out / 'fixation_map.png'}")
