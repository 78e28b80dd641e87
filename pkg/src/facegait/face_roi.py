"""Pose keypoints and keypoint-driven face crops.

Keypoints come from a pluggable provider. The first frame of a sequence goes
through ``provider.detect``; every later frame goes through
``provider.track`` with the previous frame's keypoints as the prior. The
landmark layout follows the 33-point BlazePose convention: index 0 is the
nose, 2 and 5 the left and right eyes, 7 and 8 the left and right ears.

Sidecar files are JSON Lines, one record per frame::

    {"frame": 0, "landmarks": [[x, y, visibility], ... 33 entries]}
"""

from __future__ import annotations

import json
import math
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from PIL import Image

from .dataset import Normalization, preprocess_frame, read_rgb
from .errors import FaceNotVisible, NoFaceInClip, NoPersonFound

NUM_LANDMARKS = 33
NOSE, LEFT_EYE, RIGHT_EYE, LEFT_EAR, RIGHT_EAR = 0, 2, 5, 7, 8
LANDMARK_NAMES = {NOSE: "nose", LEFT_EYE: "left_eye", RIGHT_EYE: "right_eye",
                  LEFT_EAR: "left_ear", RIGHT_EAR: "right_ear"}


@dataclass
class PoseKeypoints:
    points: np.ndarray  # (33, 3): x, y, visibility
    frame_index: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (NUM_LANDMARKS, 3):
            raise ValueError(f"expected ({NUM_LANDMARKS}, 3) landmarks, got {self.points.shape}")

    def __getitem__(self, name_or_index):
        if isinstance(name_or_index, str):
            index = {v: k for k, v in LANDMARK_NAMES.items()}[name_or_index]
        else:
            index = name_or_index
        return self.points[index]

    def clamped(self, width: int, height: int) -> "PoseKeypoints":
        pts = self.points.copy()
        pts[:, 0] = np.clip(pts[:, 0], 0, width)
        pts[:, 1] = np.clip(pts[:, 1], 0, height)
        return PoseKeypoints(pts, self.frame_index)

    def roi(self, margin: float = 0.25):
        """Padded box around all keypoints, used as the tracking prior."""
        xy = self.points[:, :2]
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        pad = (hi - lo) * margin
        return (*(lo - pad), *(hi + pad))


@dataclass
class FaceCrop:
    box: tuple[int, int, int, int]
    image: np.ndarray


class KeypointProvider(Protocol):
    def detect(self, frame: np.ndarray, frame_index: int) -> PoseKeypoints: ...

    def track(self, frame: np.ndarray, frame_index: int, prior: PoseKeypoints) -> PoseKeypoints: ...


def provide_keypoints(provider: KeypointProvider, frame, frame_index: int,
                      prior: PoseKeypoints | None = None) -> PoseKeypoints:
    frame = np.asarray(frame)
    if frame.size == 0:
        raise ValueError("empty frame")
    if prior is None:
        kp = provider.detect(frame, frame_index)
    else:
        kp = provider.track(frame, frame_index, prior)
    h, w = frame.shape[:2]
    return kp.clamped(w, h)


class SidecarKeypointProvider:
    """Reads precomputed keypoints from a JSON Lines sidecar. Ignores the prior."""

    def __init__(self, path):
        self.path = Path(path)
        self.records: dict[int, np.ndarray] = {}
        with open(self.path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                self.records[int(rec["frame"])] = np.asarray(rec["landmarks"], dtype=np.float64)

    def _lookup(self, frame_index):
        if frame_index not in self.records:
            raise NoPersonFound(f"{self.path.name}: no keypoints for frame {frame_index}")
        return PoseKeypoints(self.records[frame_index], frame_index)

    def detect(self, frame, frame_index):
        return self._lookup(frame_index)

    def track(self, frame, frame_index, prior):
        return self._lookup(frame_index)


class SubprocessKeypointProvider:
    """Adapter for an external pose estimator run as a child process.

    The command is invoked as ``command + [image_path]`` for detection and
    ``command + [image_path, "--roi", "x0,y0,x1,y1"]`` for tracking. It must print
    a single JSON object ``{"landmarks": [[x, y, v] * 33]}`` or
    ``{"landmarks": null}`` when nobody is found.
    """

    def __init__(self, command: Sequence[str], timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout

    def _run(self, frame, frame_index, extra):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / f"frame{frame_index}.png"
            Image.fromarray(np.asarray(frame, dtype=np.uint8)).save(path)
            proc = subprocess.run(self.command + [str(path)] + extra, capture_output=True,
                                  text=True, timeout=self.timeout, check=True)
        out = json.loads(proc.stdout)
        if out.get("landmarks") is None:
            raise NoPersonFound(f"external provider found no pose in frame {frame_index}")
        return PoseKeypoints(out["landmarks"], frame_index)

    def detect(self, frame, frame_index):
        return self._run(frame, frame_index, [])

    def track(self, frame, frame_index, prior):
        roi = ",".join(f"{v:.2f}" for v in prior.roi())
        return self._run(frame, frame_index, ["--roi", roi])


def face_side(kp: PoseKeypoints, scale: float) -> float:
    """Unrounded side length of the face square."""
    return scale * math.dist(kp.points[LEFT_EYE, :2], kp.points[RIGHT_EYE, :2])


def face_box(kp: PoseKeypoints, scale: float, width: int, height: int,
             visibility_threshold: float = 0.5, clamp: bool = True) -> tuple[int, int, int, int]:
    """Nose-centred square, side ``scale`` times the inter-eye distance, clamped to the frame."""
    for idx in (NOSE, LEFT_EYE, RIGHT_EYE):
        if kp.points[idx, 2] < visibility_threshold:
            raise FaceNotVisible(
                f"{LANDMARK_NAMES[idx]} visibility {kp.points[idx, 2]:.2f} < {visibility_threshold}")
    cx, cy = kp.points[NOSE, :2]
    side = face_side(kp, scale)
    x0, y0 = math.floor(cx - side / 2 + 0.5), math.floor(cy - side / 2 + 0.5)
    # keep at least one pixel when the eyes collapse onto the nose
    n = max(math.floor(side + 0.5), 1)
    x1, y1 = x0 + n, y0 + n
    if not clamp:
        return x0, y0, x1, y1
    x0, x1 = min(max(x0, 0), width - 1), min(max(x1, 1), width)
    y0, y1 = min(max(y0, 0), height - 1), min(max(y1, 1), height)
    return x0, y0, max(x1, x0 + 1), max(y1, y0 + 1)


def crop_face(frame, kp: PoseKeypoints, scale: float = 3.0, out_h: int = 128, out_w: int = 128,
              visibility_threshold: float = 0.5, norm: Normalization = Normalization()) -> FaceCrop:
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    x0, y0, x1, y1 = face_box(kp, scale, w, h, visibility_threshold)
    gray = preprocess_frame(frame[y0:y1, x0:x1], out_h, out_w, norm)
    return FaceCrop((x0, y0, x1, y1), gray.pixels)


def build_face_clip(frames: Sequence, frame_indices: Sequence[int], provider: KeypointProvider,
                    scale: float = 3.0, out_h: int = 128, out_w: int = 128,
                    visibility_threshold: float = 0.5, norm: Normalization = Normalization(),
                    load: Callable | None = None) -> np.ndarray:
    """Face crops for each resampled cycle frame, stacked to ``(L, out_h, out_w)``.

    Keypoints are tracked frame by frame across the whole span covered by
    ``frame_indices`` so the tracker always gets its immediate predecessor.
    Frames whose face is not visible reuse the most recent good crop; leading
    failures take the first good crop.
    """
    load = load or (lambda f: read_rgb(f) if isinstance(f, (str, Path)) else np.asarray(f))
    frame_indices = [int(i) for i in frame_indices]
    wanted = set(frame_indices)
    crops: dict[int, np.ndarray | None] = {}
    prior = None
    for i in range(min(frame_indices), max(frame_indices) + 1):
        image = load(frames[i])
        try:
            kp = provide_keypoints(provider, image, i, prior)
        except NoPersonFound:
            prior = None
            if i in wanted:
                crops[i] = None
            continue
        prior = kp
        if i not in wanted:
            continue
        try:
            crops[i] = crop_face(image, kp, scale, out_h, out_w, visibility_threshold, norm).image
        except FaceNotVisible:
            crops[i] = None

    ordered = [crops[i] for i in frame_indices]
    good = [c for c in ordered if c is not None]
    if not good:
        raise NoFaceInClip(f"no visible face in frames {min(wanted)}..{max(wanted)}")
    last = good[0]
    out = []
    for c in ordered:
        if c is not None:
            last = c
        out.append(last)
    return np.stack(out)


def write_sidecar(path, keypoints: Sequence[PoseKeypoints]) -> None:
    with open(path, "w") as fh:
        for kp in keypoints:
            fh.write(json.dumps({"frame": kp.frame_index,
                                 "landmarks": np.round(kp.points, 3).tolist()}) + "\n")
