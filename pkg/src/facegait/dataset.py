"""Dataset manifest loading, train/test split and frame preprocessing.

The manifest is a JSON document::

    {"root": "/data/casia-a",
     "subjects": [{"id": 0, "name": "fyc",
                   "sequences": [{"angle": 0, "index": 0,
                                  "rgb": ["fyc/00_1/001.png", ...],
                                  "mask": ["sil/fyc/00_1/001.png", ...]}]}]}

Relative ``root`` values are resolved against the manifest's own directory;
frame paths are resolved against ``root``.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import (
    DanglingFramePath,
    EmptyImage,
    GroupSizeMismatch,
    MissingFile,
    SchemaViolation,
)

ANGLES = (0, 45, 90)
SEQUENCES_PER_GROUP = 4
TRAIN_INDICES = (0, 1)

LUMA = np.array([0.299, 0.587, 0.114])
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
# ImageNet channel statistics projected through the luma weights
GRAY_MEAN = float(LUMA @ IMAGENET_MEAN)  # 0.4590
GRAY_STD = float(LUMA @ IMAGENET_STD)  # 0.2256


@dataclass(frozen=True)
class SequenceRecord:
    subject_id: int
    angle: int
    sequence_index: int
    rgb_frames: tuple[Path, ...]
    silhouette_masks: tuple[Path, ...]
    subject_name: str = ""

    @property
    def key(self) -> str:
        return sequence_key(self.subject_id, self.angle, self.sequence_index)

    def __len__(self):
        return len(self.rgb_frames)


@dataclass(frozen=True)
class SubjectEntry:
    id: int
    name: str
    sequences: tuple[SequenceRecord, ...]


@dataclass(frozen=True)
class DatasetManifest:
    root_path: Path
    subjects: tuple[SubjectEntry, ...]

    @property
    def num_classes(self) -> int:
        return len(self.subjects)

    @property
    def sequences(self) -> list[SequenceRecord]:
        return [seq for subj in self.subjects for seq in subj.sequences]


@dataclass
class GrayscaleFrame:
    pixels: np.ndarray
    source_index: int = -1

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class Normalization:
    mean: float = GRAY_MEAN
    std: float = GRAY_STD


def sequence_key(subject_id: int, angle: int, index: int) -> str:
    """Stable file-name stem for one sequence, e.g. ``"3-45-1"``."""
    return f"{subject_id}-{angle}-{index}"


def _require(obj, name, kind, where):
    if name not in obj:
        raise SchemaViolation(f"{where}.{name}", "missing")
    value = obj[name]
    # bool is an int subclass; never accept it for numeric fields
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise SchemaViolation(f"{where}.{name}", f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _resolve_frame(root: Path, rel: str, where: str) -> Path:
    path = (root / rel).resolve()
    try:
        path.relative_to(root)
    except ValueError:
        raise DanglingFramePath(f"{where}: {rel} escapes root {root}") from None
    if not path.is_file():
        raise DanglingFramePath(f"{where}: {path} does not exist")
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("<document>", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaViolation("<document>", "top level must be an object")

    root = Path(_require(doc, "root", str, "manifest"))
    if not root.is_absolute():
        root = path.parent / root
    root = root.resolve()

    raw_subjects = _require(doc, "subjects", list, "manifest")
    if not raw_subjects:
        raise SchemaViolation("manifest.subjects", "empty subject list")

    seen: set[int] = set()
    subjects = []
    for i, raw in enumerate(raw_subjects):
        where = f"subjects[{i}]"
        if not isinstance(raw, dict):
            raise SchemaViolation(where, "expected object")
        sid = _require(raw, "id", int, where)
        if sid in seen:
            raise SchemaViolation(f"{where}.id", f"duplicate subject id {sid}")
        seen.add(sid)
        name = raw.get("name", str(sid))
        if not isinstance(name, str):
            raise SchemaViolation(f"{where}.name", "expected str")

        seqs = []
        for j, rs in enumerate(_require(raw, "sequences", list, where)):
            sw = f"{where}.sequences[{j}]"
            if not isinstance(rs, dict):
                raise SchemaViolation(sw, "expected object")
            angle = _require(rs, "angle", int, sw)
            if angle not in ANGLES:
                raise SchemaViolation(f"{sw}.angle", f"must be one of {ANGLES}, got {angle}")
            index = _require(rs, "index", int, sw)
            if not 0 <= index < SEQUENCES_PER_GROUP:
                raise SchemaViolation(f"{sw}.index", f"must be in [0, {SEQUENCES_PER_GROUP}), got {index}")
            rgb = _require(rs, "rgb", list, sw)
            mask = _require(rs, "mask", list, sw)
            if not rgb:
                raise SchemaViolation(f"{sw}.rgb", "sequence lists no frames")
            if len(rgb) != len(mask):
                raise SchemaViolation(f"{sw}.mask", f"{len(mask)} masks for {len(rgb)} frames")
            for k, p in enumerate(rgb + mask):
                if not isinstance(p, str):
                    raise SchemaViolation(f"{sw}.{'rgb' if k < len(rgb) else 'mask'}", "frame paths must be strings")
            seqs.append(SequenceRecord(
                subject_id=sid,
                angle=angle,
                sequence_index=index,
                rgb_frames=tuple(_resolve_frame(root, p, f"{sw}.rgb") for p in rgb),
                silhouette_masks=tuple(_resolve_frame(root, p, f"{sw}.mask") for p in mask),
                subject_name=name,
            ))
        subjects.append(SubjectEntry(sid, name, tuple(seqs)))

    k = len(subjects)
    bad = sorted(s for s in seen if not 0 <= s < k)
    if bad:
        raise SchemaViolation("subjects.id", f"ids must cover [0, {k}); out of range: {bad}")
    subjects.sort(key=lambda s: s.id)
    return DatasetManifest(root, tuple(subjects))


def split_sequences(manifest_or_records) -> tuple[list[SequenceRecord], list[SequenceRecord]]:
    """Per (subject, angle) group: indices 0 and 1 train, 2 and 3 test."""
    if isinstance(manifest_or_records, DatasetManifest):
        records = manifest_or_records.sequences
    else:
        records = list(manifest_or_records)
    groups: dict[tuple[int, int], list[SequenceRecord]] = defaultdict(list)
    for rec in records:
        groups[rec.subject_id, rec.angle].append(rec)

    train, test = [], []
    for (sid, angle), recs in sorted(groups.items()):
        indices = sorted(r.sequence_index for r in recs)
        if indices != list(range(SEQUENCES_PER_GROUP)):
            raise GroupSizeMismatch(
                f"subject {sid} angle {angle}: expected sequence indices "
                f"{list(range(SEQUENCES_PER_GROUP))}, got {indices}")
        for rec in sorted(recs, key=lambda r: r.sequence_index):
            (train if rec.sequence_index in TRAIN_INDICES else test).append(rec)
    return train, test


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luma of an RGB (H, W, 3) or gray (H, W) image, scaled to [0, 1] for uint8."""
    arr = np.asarray(image)
    scale = 255.0 if arr.dtype == np.uint8 else 1.0
    arr = arr.astype(np.float64) / scale
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[..., :3]
        if arr.shape[2] == 1:
            return arr[..., 0]
        return arr @ LUMA
    return arr


def resize_bilinear(gray: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    if gray.shape == (target_h, target_w):
        return gray.copy()
    img = Image.fromarray(gray.astype(np.float32), mode="F")
    out = img.resize((target_w, target_h), Image.BILINEAR)
    return np.asarray(out, dtype=np.float64)


def preprocess_frame(image, target_h: int = 128, target_w: int = 128,
                     norm: Normalization = Normalization(), source_index: int = -1) -> GrayscaleFrame:
    arr = np.asarray(image)
    if arr.size == 0 or arr.ndim < 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyImage(f"image of shape {arr.shape}")
    gray = resize_bilinear(to_gray(arr), target_h, target_w)
    return GrayscaleFrame((gray - norm.mean) / norm.std, source_index)


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def read_mask(path) -> np.ndarray:
    """Binary mask, nonzero pixels are foreground."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 0


_SEQ_DIR = re.compile(r"^(\d+)[_-](\d+)$")
_IMG_EXT = {".png", ".jpg", ".jpeg"}


def manifest_from_tree(rgb_root, mask_root, out_path=None) -> dict:
    """Build a manifest dict from a CASIA-A style directory tree.

    Expects ``<rgb_root>/<subject>/<angle>_<n>/*.png|jpg`` and the same layout
    under ``mask_root``, with ``n`` counted from 1. Subjects are numbered in
    sorted name order. Frames and masks are paired by sorted file order.
    """
    rgb_root, mask_root = Path(rgb_root).resolve(), Path(mask_root).resolve()
    root = Path(*_common_parts(rgb_root, mask_root))
    subjects = []
    names = sorted(p.name for p in rgb_root.iterdir() if p.is_dir())
    for sid, name in enumerate(names):
        seqs = []
        for seq_dir in sorted((rgb_root / name).iterdir()):
            m = _SEQ_DIR.match(seq_dir.name)
            if not seq_dir.is_dir() or not m:
                continue
            frames = sorted(p for p in seq_dir.iterdir() if p.suffix.lower() in _IMG_EXT)
            mdir = mask_root / name / seq_dir.name
            masks = sorted(p for p in mdir.iterdir() if p.suffix.lower() == ".png") if mdir.is_dir() else []
            if len(frames) != len(masks):
                raise SchemaViolation(f"{name}/{seq_dir.name}", f"{len(frames)} frames vs {len(masks)} masks")
            seqs.append({
                "angle": int(m.group(1)),
                "index": int(m.group(2)) - 1,
                "rgb": [str(p.relative_to(root)) for p in frames],
                "mask": [str(p.relative_to(root)) for p in masks],
            })
        subjects.append({"id": sid, "name": name, "sequences": seqs})
    doc = {"root": str(root), "subjects": subjects}
    if out_path is not None:
        Path(out_path).write_text(json.dumps(doc, indent=1))
    return doc


def _common_parts(a: Path, b: Path) -> Sequence[str]:
    parts = []
    for x, y in zip(a.parts, b.parts):
        if x != y:
            break
        parts.append(x)
    return parts
