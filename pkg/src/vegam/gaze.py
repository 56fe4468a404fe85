"""Gaze streams to fixations (velocity threshold) and fixations to maps.

The map for a set of fixations is the duration-weighted average of
isotropic Gaussians ``exp(-((x_f - x)^2 + (y_f - y)^2) / sigma^2)`` evaluated
at integer pixel coordinates.  Note the exponent has no factor of 2.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

DEFAULT_VELOCITY_THRESHOLD = 900.0  # px/s
DEFAULT_MIN_DURATION = 60.0  # ms
DEFAULT_MAX_GAP = 100.0  # ms
DEFAULT_SIGMA_PX = 40.0  # ~1 degree for 400x400 stimuli at 65 cm
STIMULUS_SIDE = 400

GAZE_CSV_HEADER = ["trial_id", "t_ms", "x_px", "y_px", "valid"]


class InsufficientSamplesWarning(UserWarning):
    pass


class EmptyFixationsError(ValueError):
    pass


class GazeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GazeSample:
    t: float
    x: float
    y: float
    valid: bool = True


@dataclass(frozen=True)
class Fixation:
    x: float
    y: float
    duration: float
    onset: float = 0.0


@dataclass
class FixationMap:
    values: np.ndarray  # (height, width)
    sigma_px: float

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def ivt_extract(
    samples: Sequence[GazeSample],
    velocity_threshold: float = DEFAULT_VELOCITY_THRESHOLD,
    min_duration: float = DEFAULT_MIN_DURATION,
    max_gap: float = DEFAULT_MAX_GAP,
) -> list[Fixation]:
    """Group consecutive slow samples into fixations.

    Two neighbouring valid samples are linked when their point-to-point
    velocity is below ``velocity_threshold`` (px/s) and they are at most
    ``max_gap`` ms apart.  Linked runs lasting at least ``min_duration`` ms
    become fixations (centroid = mean position, duration = last - first).
    """
    valid = [s for s in samples if s.valid]
    if len(valid) < 2:
        warnings.warn(f"I-VT needs at least 2 valid samples, got {len(valid)}", InsufficientSamplesWarning)
        return []
    t = np.array([s.t for s in valid], dtype=np.float64)
    xy = np.array([[s.x, s.y] for s in valid], dtype=np.float64)
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise GazeFormatError("timestamps must be strictly increasing")
    speed = np.hypot(*np.diff(xy, axis=0).T) / (dt / 1000.0)
    linked = (speed < velocity_threshold) & (dt <= max_gap)

    fixations = []
    start = 0
    for i in range(len(valid)):
        if i < len(linked) and linked[i]:
            continue
        # run covers samples start..i
        if i > start:
            duration = t[i] - t[start]
            if duration >= min_duration:
                cx, cy = xy[start : i + 1].mean(axis=0)
                fixations.append(Fixation(float(cx), float(cy), float(duration), float(t[start])))
        start = i + 1
    return fixations


def normalize_durations(fixations: Iterable[Fixation], total_time: float) -> list[Fixation]:
    """Divide every duration by the trial's total recognition time."""
    if not total_time > 0:
        raise ValueError(f"total_time must be positive, got {total_time}")
    return [replace(f, duration=f.duration / total_time) for f in fixations]


def fixation_map(fixations: Sequence[Fixation], width: int = STIMULUS_SIDE, height: int = STIMULUS_SIDE,
                 sigma_px: float = DEFAULT_SIGMA_PX) -> FixationMap:
    fixations = list(fixations)
    if not fixations:
        raise EmptyFixationsError("cannot build a fixation map from zero fixations")
    if not sigma_px > 0:
        raise ValueError(f"sigma_px must be positive, got {sigma_px}")
    fx = np.array([f.x for f in fixations], dtype=np.float64)
    fy = np.array([f.y for f in fixations], dtype=np.float64)
    w = np.array([f.duration for f in fixations], dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("fixation durations must be positive")
    # exp(-(dx^2 + dy^2)/s^2) separates into a row factor times a column factor.
    gx = np.exp(-((fx[:, None] - np.arange(width)[None, :]) ** 2) / sigma_px**2)
    gy = np.exp(-((fy[:, None] - np.arange(height)[None, :]) ** 2) / sigma_px**2)
    values = (gy * (w / w.sum())[:, None]).T @ gx
    return FixationMap(np.clip(values, 0.0, 1.0), float(sigma_px))


def samples_from_fixations(fixations: Sequence[Fixation], rate_hz: float = 120.0) -> list[GazeSample]:
    """Constant-dwell gaze stream that reproduces the given fixations."""
    step = 1000.0 / rate_hz
    out = []
    for f in fixations:
        count = int(round(f.duration / step))
        ts = f.onset + np.linspace(0.0, f.duration, count + 1)
        out.extend(GazeSample(float(ti), f.x, f.y, True) for ti in ts)
    return out


def _parse_valid(text: str, lineno: int) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "t", "yes"):
        return True
    if v in ("0", "false", "f", "no"):
        return False
    raise GazeFormatError(f"line {lineno}: bad valid flag {text!r}")


def load_gaze_csv(path) -> dict[str, list[GazeSample]]:
    """Read ``trial_id,t_ms,x_px,y_px,valid`` rows into per-trial sample lists.

    Each trial must occupy one contiguous block of rows with strictly
    increasing timestamps.
    """
    trials: dict[str, list[GazeSample]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != GAZE_CSV_HEADER:
            raise GazeFormatError(f"line 1: expected header {','.join(GAZE_CSV_HEADER)}")
        last_trial = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise GazeFormatError(f"line {lineno}: expected 5 fields, got {len(row)}")
            trial = row[0].strip()
            try:
                sample = GazeSample(float(row[1]), float(row[2]), float(row[3]), _parse_valid(row[4], lineno))
            except ValueError as exc:
                if isinstance(exc, GazeFormatError):
                    raise
                raise GazeFormatError(f"line {lineno}: {exc}") from exc
            if trial != last_trial and trial in trials:
                raise GazeFormatError(f"line {lineno}: trial {trial} is not contiguous")
            samples = trials.setdefault(trial, [])
            if samples and sample.t <= samples[-1].t:
                raise GazeFormatError(f"line {lineno}: non-increasing timestamp in trial {trial}")
            samples.append(sample)
            last_trial = trial
    return trials


def write_gaze_csv(path, trials: dict[str, Sequence[GazeSample]]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(GAZE_CSV_HEADER)
        for trial, samples in trials.items():
            for s in samples:
                wr.writerow([trial, repr(s.t), repr(s.x), repr(s.y), int(s.valid)])


def trial_duration(samples: Sequence[GazeSample]) -> float:
    return samples[-1].t - samples[0].t if len(samples) > 1 else 0.0


def extract_trials(trials: dict[str, Sequence[GazeSample]], **ivt_kwargs) -> dict[str, list[Fixation]]:
    """I-VT plus duration normalisation by each trial's total time."""
    out = {}
    for trial, samples in trials.items():
        fx = ivt_extract(samples, **ivt_kwargs)
        total = trial_duration(samples)
        out[trial] = normalize_durations(fx, total) if fx and total > 0 else fx
    return out


def pooled_map(groups: Iterable[Sequence[Fixation]], width: int = STIMULUS_SIDE, height: int = STIMULUS_SIDE,
               sigma_px: float = DEFAULT_SIGMA_PX) -> FixationMap:
    """One map from the fixations of several (correct) trials of one stimulus."""
    pooled = [f for g in groups for f in g]
    return fixation_map(pooled, width, height, sigma_px)


__all__ = [
    "Fixation",
    "FixationMap",
    "GazeSample",
    "InsufficientSamplesWarning",
    "EmptyFixationsError",
    "GazeFormatError",
    "ivt_extract",
    "normalize_durations",
    "fixation_map",
    "samples_from_fixations",
    "load_gaze_csv",
    "write_gaze_csv",
    "extract_trials",
    "pooled_map",
]
