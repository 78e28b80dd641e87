"""Gait-cycle detection from the silhouette aspect-ratio signal.

The bounding-box height/width ratio of a walking silhouette dips every time
the legs reach maximal spread. Three consecutive dips delimit one full cycle,
which is then resampled to a fixed number of frames.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import NoCycleFound, SignalTooShort


@dataclass
class AspectSignal:
    values: np.ndarray
    valid_mask: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass
class GaitCycle:
    start_frame: int
    end_frame: int
    frame_indices: np.ndarray
    clip: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.frame_indices)


def bounding_box(mask: np.ndarray):
    """Tight (row0, row1, col0, col1) box of the foreground, inclusive; None if empty."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return rows[0], rows[-1], cols[0], cols[-1]


def aspect_ratio_signal(masks: Sequence[np.ndarray]) -> AspectSignal:
    if len(masks) == 0:
        raise ValueError("need at least one mask")
    values = np.zeros(len(masks))
    valid = np.zeros(len(masks), dtype=bool)
    for i, mask in enumerate(masks):
        box = bounding_box(mask)
        if box is None:
            continue
        r0, r1, c0, c1 = box
        values[i] = (r1 - r0 + 1) / (c1 - c0 + 1)
        valid[i] = True
    return AspectSignal(values, valid)


def fill_invalid(signal: AspectSignal) -> np.ndarray:
    """Linearly interpolate invalid frames from valid neighbours (edges held)."""
    idx = np.arange(len(signal))
    valid = signal.valid_mask
    return np.interp(idx, idx[valid], signal.values[valid])


def smooth_signal(signal: AspectSignal, smooth_window: int = 5) -> np.ndarray:
    if smooth_window < 1 or smooth_window % 2 == 0:
        raise ValueError(f"smooth_window must be odd and >= 1, got {smooth_window}")
    filled = fill_invalid(signal)
    if smooth_window == 1:
        return filled
    return uniform_filter1d(filled, size=smooth_window, mode="nearest")


def strict_minima(values: np.ndarray) -> list[int]:
    """Interior strict local minima; a flat bottom reports its leftmost index."""
    values = np.asarray(values)
    out = []
    n = len(values)
    i = 1
    while i < n - 1:
        if values[i] < values[i - 1]:
            j = i
            while j + 1 < n and values[j + 1] == values[i]:
                j += 1
            if j + 1 < n and values[i] < values[j + 1]:
                out.append(i)
            i = j + 1
        else:
            i += 1
    return out


def detect_local_minima(signal: AspectSignal, smooth_window: int = 5) -> list[int]:
    if int(np.count_nonzero(signal.valid_mask)) < 3:
        raise SignalTooShort(f"{int(np.count_nonzero(signal.valid_mask))} valid frames, need at least 3")
    return strict_minima(smooth_signal(signal, smooth_window))


def cycle_indices(start: int, end: int, length: int) -> np.ndarray:
    """Nearest source index for each point of a uniform grid on [start, end]."""
    grid = start + np.arange(length) * (end - start) / (length - 1)
    return np.floor(grid + 0.5).astype(int)


def extract_gait_cycle(frames: Sequence, minima: Sequence[int], L: int = 24) -> GaitCycle:
    """Resample the span between the first and third minimum to ``L`` frames.

    ``frames`` may be any indexable sequence of 2-D arrays or objects with a
    ``pixels`` attribute; only the sampled positions are accessed.
    """
    if len(minima) < 3:
        raise NoCycleFound(f"{len(minima)} local minima found, need 3")
    if L < 2:
        raise ValueError(f"L must be >= 2, got {L}")
    start, end = int(minima[0]), int(minima[2])
    if not 0 <= start < end < len(frames):
        raise NoCycleFound(f"cycle [{start}, {end}] outside sequence of {len(frames)} frames")
    idx = cycle_indices(start, end, L)
    clip = np.stack([np.asarray(getattr(frames[i], "pixels", frames[i])) for i in idx])
    return GaitCycle(start, end, idx, clip)


def dump_signal_csv(path, signal: AspectSignal, smooth_window: int = 5) -> None:
    smoothed = smooth_signal(signal, smooth_window)
    minima = set(strict_minima(smoothed))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "raw", "smoothed", "is_minimum"])
        for i, (raw, sm) in enumerate(zip(signal.values, smoothed)):
            w.writerow([i, f"{raw:.6f}" if signal.valid_mask[i] else "", f"{sm:.6f}", int(i in minima)])
