"""Turn raw sequences into fixed-length gait and face clips, and store them.

The clip store is a directory holding one ``<key>.npz`` (arrays ``gait`` and
``face``, each ``L x H x W`` float32) and one ``<key>.json`` provenance record
per sequence, plus ``store.json`` with the class count and the preprocessing
settings.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import (
    GRAY_MEAN,
    GRAY_STD,
    Normalization,
    SequenceRecord,
    preprocess_frame,
    read_mask,
    read_rgb,
)
from .errors import FaceGaitError, MissingFile
from .face_roi import KeypointProvider, build_face_clip
from .gait_cycle import aspect_ratio_signal, detect_local_minima, dump_signal_csv, extract_gait_cycle
from .train import ClipSet

log = logging.getLogger(__name__)


@dataclass
class PrepConfig:
    clip_len: int = 24
    height: int = 128
    width: int = 128
    smooth_window: int = 5
    face_scale: float = 3.0
    visibility_threshold: float = 0.5
    norm_mean: float = GRAY_MEAN
    norm_std: float = GRAY_STD

    @property
    def norm(self) -> Normalization:
        return Normalization(self.norm_mean, self.norm_std)


@dataclass
class PreparedSequence:
    gait: np.ndarray
    face: np.ndarray
    meta: dict


class _Lazy:
    """Indexable view that loads and converts items on access, caching them."""

    def __init__(self, items: Sequence, convert: Callable):
        self.items, self.convert, self.cache = items, convert, {}

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        if i not in self.cache:
            self.cache[i] = self.convert(self.items[i])
        return self.cache[i]


def _as_mask(item):
    return read_mask(item) if isinstance(item, (str, Path)) else np.asarray(item).astype(bool)


def _as_rgb(item):
    return read_rgb(item) if isinstance(item, (str, Path)) else np.asarray(item)


def prepare_clips(rgb_frames: Sequence, masks: Sequence, provider: KeypointProvider,
                  cfg: PrepConfig = PrepConfig(), dump_signal: str | Path | None = None) -> PreparedSequence:
    """Gait cycle detection, gait clip from the silhouettes, face clip from the RGB frames.

    Frames and masks may be arrays or image paths. The gait clip is built from
    the silhouette masks (foreground 1, background 0) passed through the same
    grayscale normalization as the face crops.
    """
    mask_frames = _Lazy(masks, _as_mask)
    signal = aspect_ratio_signal([mask_frames[i] for i in range(len(mask_frames))])
    if dump_signal is not None:
        dump_signal_csv(dump_signal, signal, cfg.smooth_window)
    minima = detect_local_minima(signal, cfg.smooth_window)
    gait_frames = _Lazy(range(len(masks)), lambda i: preprocess_frame(
        mask_frames[i].astype(np.float64), cfg.height, cfg.width, cfg.norm, i))
    cycle = extract_gait_cycle(gait_frames, minima, cfg.clip_len)
    face = build_face_clip(rgb_frames, cycle.frame_indices, provider, cfg.face_scale, cfg.height, cfg.width,
                           cfg.visibility_threshold, cfg.norm, load=_as_rgb)
    meta = {
        "start_frame": cycle.start_frame,
        "end_frame": cycle.end_frame,
        "frame_indices": [int(i) for i in cycle.frame_indices],
        "minima": [int(m) for m in minima],
        "num_frames": len(masks),
    }
    return PreparedSequence(cycle.clip.astype(np.float32), face.astype(np.float32), meta)


def prepare_record(record: SequenceRecord, provider: KeypointProvider, cfg: PrepConfig = PrepConfig(),
                   dump_signal=None) -> PreparedSequence:
    prepared = prepare_clips(record.rgb_frames, record.silhouette_masks, provider, cfg, dump_signal)
    prepared.meta.update(subject_id=record.subject_id, angle=record.angle,
                         sequence_index=record.sequence_index, subject_name=record.subject_name)
    return prepared


def save_prepared(store: Path, key: str, prepared: PreparedSequence) -> None:
    store = Path(store)
    store.mkdir(parents=True, exist_ok=True)
    np.savez(store / f"{key}.npz", gait=prepared.gait, face=prepared.face)
    (store / f"{key}.json").write_text(json.dumps(prepared.meta, indent=1, sort_keys=True))


def write_store_info(store: Path, num_classes: int, cfg: PrepConfig, **extra) -> None:
    info = {"num_classes": num_classes, "prep": asdict(cfg), **extra}
    (Path(store) / "store.json").write_text(json.dumps(info, indent=1, sort_keys=True))


def read_store_info(store) -> dict:
    path = Path(store) / "store.json"
    if not path.is_file():
        raise MissingFile(f"{path} (not a clip store; run `prepare` first)")
    return json.loads(path.read_text())


def load_clip_store(store, split: str | None = None) -> ClipSet:
    """Load every stored sequence, optionally only those tagged ``split``."""
    store = Path(store)
    read_store_info(store)
    sets = []
    for meta_path in sorted(store.glob("*.json")):
        if meta_path.name == "store.json":
            continue
        meta = json.loads(meta_path.read_text())
        if split is not None and meta.get("split") != split:
            continue
        with np.load(meta_path.with_suffix(".npz")) as npz:
            gait, face = npz["gait"], npz["face"]
        sets.append(ClipSet(gait[None], face[None], np.array([meta["subject_id"]]),
                            np.array([meta["angle"]]), [meta_path.stem]))
    if not sets:
        raise MissingFile(f"no {split or ''} clips in {store}".replace("  ", " "))
    return ClipSet.concat(sets)


def prepare_many(records: Sequence[SequenceRecord], provider_for: Callable[[SequenceRecord], KeypointProvider],
                 cfg: PrepConfig = PrepConfig(), store: Path | None = None,
                 split_of: Callable[[SequenceRecord], str] | None = None,
                 signal_dir: Path | None = None) -> tuple[list[str], dict[str, Exception]]:
    """Prepare each record independently; failures are collected, not raised."""
    done, failures = [], {}
    for rec in records:
        try:
            dump = None
            if signal_dir is not None:
                Path(signal_dir).mkdir(parents=True, exist_ok=True)
                dump = Path(signal_dir) / f"{rec.key}.csv"
            prepared = prepare_record(rec, provider_for(rec), cfg, dump)
        except (FaceGaitError, OSError, ValueError) as exc:
            log.warning("sequence %s failed: %s: %s", rec.key, type(exc).__name__, exc)
            failures[rec.key] = exc
            continue
        if split_of is not None:
            prepared.meta["split"] = split_of(rec)
        if store is not None:
            save_prepared(store, rec.key, prepared)
        done.append(rec.key)
    return done, failures
