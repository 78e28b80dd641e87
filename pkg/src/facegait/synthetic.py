"""Synthetic walking sequences with known identity signal.

Each subject gets a silhouette style (body height, torso width, leg swing,
stride period) and a face texture. Frames are small RGB images with a
matching binary silhouette and 33 keypoints, so the full preparation path
(cycle detection, face cropping) runs on them unchanged.

Corruption switches remove identity from one modality: ``corrupt_face``
replaces the face texture with per-frame noise, ``corrupt_gait`` draws the
silhouette style at random instead of from the subject.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .dataset import ANGLES, sequence_key
from .face_roi import LEFT_EAR, LEFT_EYE, NOSE, NUM_LANDMARKS, RIGHT_EAR, RIGHT_EYE, PoseKeypoints, write_sidecar

FACE_SIDE = 12
EYE_DIST = 4.0  # face crop side = 3 x inter-eye distance = FACE_SIDE


@dataclass
class SubjectStyle:
    height: float
    torso_w: float
    leg_amp: float
    period: float
    face: np.ndarray  # FACE_SIDE x FACE_SIDE x 3 uint8
    shade: int


@dataclass
class SyntheticSequence:
    subject_id: int
    angle: int
    sequence_index: int
    rgb: list[np.ndarray]
    masks: list[np.ndarray]
    keypoints: list[PoseKeypoints]
    period: float = 0.0
    phase_frames: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def key(self) -> str:
        return sequence_key(self.subject_id, self.angle, self.sequence_index)


class InMemoryKeypointProvider:
    def __init__(self, keypoints: Sequence[PoseKeypoints]):
        self.keypoints = {kp.frame_index: kp for kp in keypoints}
        self.calls: list[tuple[str, int]] = []

    def detect(self, frame, frame_index):
        self.calls.append(("detect", frame_index))
        return self.keypoints[frame_index]

    def track(self, frame, frame_index, prior):
        self.calls.append(("track", frame_index))
        return self.keypoints[frame_index]


def _face_texture(rng: np.random.Generator) -> np.ndarray:
    blocks = rng.integers(30, 226, size=(4, 4, 3))
    return np.kron(blocks, np.ones((3, 3, 1))).astype(np.uint8)


def make_styles(num_classes: int, rng: np.random.Generator) -> list[SubjectStyle]:
    """Styles spread over evenly spaced, shuffled attribute levels."""
    def levels(lo, hi):
        return rng.permutation(np.linspace(lo, hi, num_classes))

    heights, torsos, amps = levels(34, 50), levels(6, 14), levels(14, 26)
    periods = rng.uniform(8, 12, num_classes)
    shades = rng.integers(150, 230, num_classes)
    return [SubjectStyle(heights[k], torsos[k], amps[k], periods[k], _face_texture(rng), int(shades[k]))
            for k in range(num_classes)]


def render_frame(style: SubjectStyle, spread: float, cx: float, frame_h: int, frame_w: int):
    """Silhouette mask and head box for one frame."""
    ground = frame_h - 3
    top = ground - style.height
    yy, xx = np.mgrid[0:frame_h, 0:frame_w]
    hx0 = int(round(cx - FACE_SIDE / 2))
    hy0 = int(round(top))
    head = (yy >= hy0) & (yy < hy0 + FACE_SIDE) & (xx >= hx0) & (xx < hx0 + FACE_SIDE)
    hip = ground - 0.45 * style.height
    torso = (yy >= hy0 + FACE_SIDE) & (yy <= hip) & (np.abs(xx - cx) <= style.torso_w / 2)
    # legs: straight bands from the hip to feet at +-spread/2
    frac = np.clip((yy - hip) / (ground - hip), 0, 1)
    legs = np.zeros_like(head)
    for sign in (-1, 1):
        centre = cx + sign * frac * spread / 2
        legs |= (yy > hip) & (yy <= ground) & (np.abs(xx - centre) <= 1.5)
    return head | torso | legs, (hx0, hy0)


def render_sequence(style: SubjectStyle, rng: np.random.Generator, frame_h: int = 64, frame_w: int = 48,
                    corrupt_face: bool = False, corrupt_gait: bool = False, styles_pool=None,
                    subject_id: int = 0, angle: int = 0, index: int = 0) -> SyntheticSequence:
    if corrupt_gait:
        pool = styles_pool or [style]
        style = SubjectStyle(
            height=rng.uniform(min(s.height for s in pool), max(s.height for s in pool)),
            torso_w=rng.uniform(min(s.torso_w for s in pool), max(s.torso_w for s in pool)),
            leg_amp=rng.uniform(min(s.leg_amp for s in pool), max(s.leg_amp for s in pool)),
            period=rng.uniform(8, 12), face=style.face, shade=int(rng.integers(150, 230)))
    period = style.period * rng.uniform(0.95, 1.05)
    first_min = rng.uniform(3, period)
    n = int(np.ceil(first_min + 2 * period + rng.uniform(3, period)))
    height_jit = rng.uniform(-0.5, 0.5)
    style_j = SubjectStyle(style.height + height_jit, style.torso_w, style.leg_amp, period, style.face, style.shade)
    cx0 = frame_w / 2 + rng.uniform(-2, 2)
    drift = rng.uniform(-0.1, 0.1)

    rgb, masks, kps = [], [], []
    for t in range(n):
        # widest stride (lowest aspect ratio) at t = first_min + k * period
        spread = 2 + style.leg_amp * (0.5 + 0.5 * np.cos(2 * np.pi * (t - first_min) / period))
        cx = cx0 + drift * t
        mask, (hx0, hy0) = render_frame(style_j, spread, cx, frame_h, frame_w)
        img = np.clip(rng.normal(90, 6, (frame_h, frame_w, 3)), 0, 255)
        img[mask] = style.shade + rng.normal(0, 4, (int(mask.sum()), 3))
        if corrupt_face:
            face = _face_texture(rng).astype(np.float64)
        else:
            face = style.face.astype(np.float64) + rng.normal(0, 8, style.face.shape)
        y0, x0 = max(hy0, 0), max(hx0, 0)
        y1, x1 = min(hy0 + FACE_SIDE, frame_h), min(hx0 + FACE_SIDE, frame_w)
        img[y0:y1, x0:x1] = face[y0 - hy0:y1 - hy0, x0 - hx0:x1 - hx0]
        rgb.append(np.clip(img, 0, 255).astype(np.uint8))
        masks.append(mask)

        pts = np.zeros((NUM_LANDMARKS, 3))
        pts[:, 0], pts[:, 1], pts[:, 2] = cx, hy0 + style_j.height / 2, 0.5
        nose_x, nose_y = hx0 + FACE_SIDE / 2, hy0 + FACE_SIDE / 2
        pts[NOSE] = (nose_x, nose_y, 0.95)
        pts[LEFT_EYE] = (nose_x - EYE_DIST / 2, nose_y - 1, 0.95)
        pts[RIGHT_EYE] = (nose_x + EYE_DIST / 2, nose_y - 1, 0.95)
        pts[LEFT_EAR] = (nose_x - FACE_SIDE / 2, nose_y, 0.8)
        pts[RIGHT_EAR] = (nose_x + FACE_SIDE / 2, nose_y, 0.8)
        kps.append(PoseKeypoints(pts, t))
    return SyntheticSequence(subject_id, angle, index, rgb, masks, kps, period, first_min,
                             {"corrupt_face": corrupt_face, "corrupt_gait": corrupt_gait})


def generate_dataset(num_classes: int = 5, per_class: int = 20, seed: int = 0, frame_h: int = 64,
                     frame_w: int = 48, corrupt_views: bool = False) -> list[SyntheticSequence]:
    """``per_class`` sequences per subject, view angles assigned round-robin.

    With ``corrupt_views`` the face is unusable in 0-degree sequences and the
    gait is unusable in 90-degree sequences, mimicking lateral and frontal
    walks; 45-degree sequences keep both cues.
    """
    rng = np.random.default_rng(seed)
    styles = make_styles(num_classes, rng)
    out = []
    for k, style in enumerate(styles):
        for j in range(per_class):
            angle = ANGLES[j % 3]
            out.append(render_sequence(
                style, rng, frame_h, frame_w,
                corrupt_face=corrupt_views and angle == 0,
                corrupt_gait=corrupt_views and angle == 90,
                styles_pool=styles, subject_id=k, angle=angle, index=j))
    return out


def split_half(seqs: Sequence[SyntheticSequence]):
    """First half of each subject's sequences for training, second half for testing."""
    per_subject: dict[int, list] = {}
    for s in seqs:
        per_subject.setdefault(s.subject_id, []).append(s)
    train, test = [], []
    for group in per_subject.values():
        group = sorted(group, key=lambda s: s.sequence_index)
        half = len(group) // 2
        train += group[:half]
        test += group[half:]
    return train, test


def to_clipset(seqs: Sequence[SyntheticSequence], cfg):
    """Run the preparation pipeline on in-memory sequences."""
    from .pipeline import prepare_clips
    from .train import ClipSet

    gait, face, labels, angles, keys = [], [], [], [], []
    for s in seqs:
        p = prepare_clips(s.rgb, s.masks, InMemoryKeypointProvider(s.keypoints), cfg)
        gait.append(p.gait)
        face.append(p.face)
        labels.append(s.subject_id)
        angles.append(s.angle)
        keys.append(s.key)
    return ClipSet(np.stack(gait), np.stack(face), np.array(labels), np.array(angles), keys)


def write_dataset(root, seqs: Sequence[SyntheticSequence]) -> tuple[Path, Path]:
    """Write PNG frames, masks, keypoint sidecars and ``manifest.json`` under ``root``.

    Sequence indices must follow the four-per-view layout expected by the
    manifest (0..3 within each subject and angle).
    """
    root = Path(root)
    kp_dir = root / "keypoints"
    kp_dir.mkdir(parents=True, exist_ok=True)
    subjects: dict[int, list] = {}
    for s in seqs:
        seq_dir = root / "frames" / f"s{s.subject_id:02d}" / f"{s.angle:02d}_{s.sequence_index + 1}"
        mask_dir = root / "silhouettes" / f"s{s.subject_id:02d}" / f"{s.angle:02d}_{s.sequence_index + 1}"
        seq_dir.mkdir(parents=True, exist_ok=True)
        mask_dir.mkdir(parents=True, exist_ok=True)
        rgb_paths, mask_paths = [], []
        for t, (img, mask) in enumerate(zip(s.rgb, s.masks)):
            Image.fromarray(img).save(seq_dir / f"{t:03d}.png")
            Image.fromarray(mask.astype(np.uint8) * 255).save(mask_dir / f"{t:03d}.png")
            rgb_paths.append(str((seq_dir / f"{t:03d}.png").relative_to(root)))
            mask_paths.append(str((mask_dir / f"{t:03d}.png").relative_to(root)))
        write_sidecar(kp_dir / f"{s.key}.jsonl", s.keypoints)
        subjects.setdefault(s.subject_id, []).append(
            {"angle": s.angle, "index": s.sequence_index, "rgb": rgb_paths, "mask": mask_paths})
    manifest = {"root": ".", "subjects": [{"id": k, "name": f"s{k:02d}", "sequences": v}
                                          for k, v in sorted(subjects.items())]}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path, kp_dir


def generate_protocol_dataset(num_classes: int = 3, seed: int = 0, frame_h: int = 64, frame_w: int = 48,
                              corrupt_views: bool = False) -> list[SyntheticSequence]:
    """Four sequences per subject and view angle, the layout of the real dataset."""
    rng = np.random.default_rng(seed)
    styles = make_styles(num_classes, rng)
    out = []
    for k, style in enumerate(styles):
        for angle in ANGLES:
            for idx in range(4):
                out.append(render_sequence(
                    style, rng, frame_h, frame_w,
                    corrupt_face=corrupt_views and angle == 0,
                    corrupt_gait=corrupt_views and angle == 90,
                    styles_pool=styles, subject_id=k, angle=angle, index=idx))
    return out
