"""From silhouettes to a fixed-length gait clip.

Renders one synthetic walking sequence, computes the aspect-ratio signal,
finds the minima that delimit a cycle and resamples it to 24 frames. Saves a
plot next to this script when matplotlib is available.

Run: python3 demos/gait_cycle_walkthrough.py
"""

from pathlib import Path

import numpy as np

from facegait.gait_cycle import aspect_ratio_signal, detect_local_minima, extract_gait_cycle, smooth_signal
from facegait.synthetic import make_styles, render_sequence

rng = np.random.default_rng(4)
style = make_styles(1, rng)[0]
seq = render_sequence(style, rng)
print(f"{len(seq.masks)} frames, true period {seq.period:.2f}, first dip at {seq.phase_frames:.2f}")

signal = aspect_ratio_signal(seq.masks)
smoothed = smooth_signal(signal, 5)
minima = detect_local_minima(signal, 5)
print("raw aspect ratios:", np.round(signal.values[:10], 2), "...")
print("minima:", minima)

cycle = extract_gait_cycle(seq.masks, minima, 24)
print(f"cycle spans frames {cycle.start_frame}..{cycle.end_frame}")
print("sampled frames:", cycle.frame_indices.tolist())
print("clip shape:", cycle.clip.shape)

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    raise SystemExit(0)

fig, ax = plt.subplots(figsize=(8, 3))
ax.plot(signal.values, ".-", alpha=0.5, label="aspect ratio")
ax.plot(smoothed, label="smoothed (window 5)")
ax.plot(minima, smoothed[minima], "v", color="k", label="minima")
ax.axvspan(cycle.start_frame, cycle.end_frame, color="orange", alpha=0.2, label="cycle")
ax.set_xlabel("frame")
ax.legend(loc="upper right", fontsize=8)
fig.tight_layout()
out = Path(__file__).with_suffix(".png")
fig.savefig(out, dpi=100)
print("plot written to", out)
