"""INI-style experiment configuration.

Sections and keys (every key optional)::

    [train]      learning_rate, epochs, steps, batch_size, seed, optimizer, weight_decay, dtype
    [fusion]     strategy = face | gait | average | bilinear | attention_concat | adaptive
    [attention]  mode = plain | gated, lam, proj_dim, learnable_lam
    [extractor]  filters = 16, 32   kernel, stride, pool, out_dim     (both streams)
    [extractor.gait] / [extractor.face]   same keys, per-stream overrides
    [data]       clip_len, height, width, smooth_window, face_scale,
                 visibility_threshold, norm_mean, norm_std

Values are Python literals; bare words are strings. Overrides use dotted keys
such as ``attention.lam=0.25`` or ``extractor.face.filters=8,16``.
"""

from __future__ import annotations

import ast
import configparser
import os
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Iterable, Mapping

from .errors import InvalidConfig, MissingFile
from .feature_net import ExtractorConfig, LayerSpec
from .pipeline import PrepConfig
from .train import TrainConfig

SEED_ENV = "FUSION_SEED"

_TRAIN_KEYS = {"learning_rate", "epochs", "steps", "batch_size", "seed", "optimizer", "weight_decay", "dtype"}
_ATTENTION_KEYS = {"mode": "attention_mode", "lam": "lam", "proj_dim": "proj_dim", "learnable_lam": "learnable_lam"}
_EXTRACTOR_KEYS = {"filters", "kernel", "stride", "pool", "out_dim"}
_DATA_KEYS = {f.name for f in fields(PrepConfig)}


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_ini(path) -> dict[str, object]:
    """Flatten an INI file into ``{"section.key": value}``."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read(path)
    return {f"{section}.{key}": parse_value(value)
            for section in parser.sections() for key, value in parser.items(section)}


def parse_overrides(items: Iterable[str]) -> dict[str, object]:
    out = {}
    for item in items:
        if "=" not in item:
            raise InvalidConfig(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def _layers(filters, kernel, stride) -> tuple[LayerSpec, ...]:
    if isinstance(filters, int):
        filters = (filters,)
    k = tuple(kernel) if isinstance(kernel, (list, tuple)) else (kernel, kernel)
    return tuple(LayerSpec(int(f), k, int(stride)) for f in filters)


def _extractor_values(cfg: ExtractorConfig) -> dict:
    first = cfg.layers[0]
    return {"filters": tuple(l.filters for l in cfg.layers), "kernel": first.kernel,
            "stride": first.stride, "pool": cfg.pool, "out_dim": cfg.out_dim}


def _update_extractor(cfg: ExtractorConfig, values: Mapping, prep: PrepConfig) -> ExtractorConfig:
    cur = _extractor_values(cfg)
    unknown = set(values) - _EXTRACTOR_KEYS
    if unknown:
        raise InvalidConfig(f"unknown extractor key(s): {sorted(unknown)}")
    cur.update(values)
    return replace(cfg, layers=_layers(cur["filters"], cur["kernel"], cur["stride"]), pool=int(cur["pool"]),
                   out_dim=int(cur["out_dim"]), in_h=prep.height, in_w=prep.width)


def apply_overrides(config: TrainConfig, values: Mapping[str, object],
                    prep: PrepConfig | None = None) -> TrainConfig | tuple[TrainConfig, PrepConfig]:
    """Apply dotted-key values. Returns the new TrainConfig, or the pair when
    ``prep`` is given."""
    want_pair = prep is not None
    prep = prep or PrepConfig(height=config.gait.in_h, width=config.gait.in_w)
    train_kw, data_kw = {}, {}
    ext_all, ext_gait, ext_face = {}, {}, {}
    for key, value in values.items():
        section, _, name = key.rpartition(".")
        if section == "train" and name in _TRAIN_KEYS:
            train_kw[name] = value
        elif section == "fusion" and name == "strategy":
            train_kw["strategy"] = value
        elif section == "attention" and name in _ATTENTION_KEYS:
            train_kw[_ATTENTION_KEYS[name]] = value
        elif section == "extractor":
            ext_all[name] = value
        elif section == "extractor.gait":
            ext_gait[name] = value
        elif section == "extractor.face":
            ext_face[name] = value
        elif section == "data" and name in _DATA_KEYS:
            data_kw[name] = value
        else:
            raise InvalidConfig(f"unknown config key {key!r}")
    prep = replace(prep, **data_kw)
    if "learning_rate" in train_kw:
        train_kw["learning_rate"] = float(train_kw["learning_rate"])
    if "lam" in train_kw:
        train_kw["lam"] = float(train_kw["lam"])
    cfg = replace(config, **train_kw)
    gait = _update_extractor(cfg.gait, {**ext_all, **ext_gait}, prep)
    face = _update_extractor(cfg.face, {**ext_all, **ext_face}, prep)
    cfg = replace(cfg, gait=gait, face=face)
    return (cfg, prep) if want_pair else cfg


def load_config(path=None, overrides: Mapping[str, object] | None = None,
                env: Mapping[str, str] | None = None) -> tuple[TrainConfig, PrepConfig]:
    """Defaults, then the file, then overrides, then ``FUSION_SEED``."""
    values: dict[str, object] = {}
    if path is not None:
        values.update(read_ini(path))
    values.update(overrides or {})
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        values["train.seed"] = int(env[SEED_ENV])
    cfg, prep = apply_overrides(TrainConfig(), values, PrepConfig())
    return cfg.validate(), prep


def to_ini(config: TrainConfig, prep: PrepConfig) -> str:
    """Render a config snapshot that :func:`load_config` reads back to the same values."""
    sections = {
        "train": {k: getattr(config, k) for k in sorted(_TRAIN_KEYS)},
        "fusion": {"strategy": config.strategy},
        "attention": {k: getattr(config, v) for k, v in _ATTENTION_KEYS.items()},
        "extractor.gait": _extractor_values(config.gait),
        "extractor.face": _extractor_values(config.face),
        "data": asdict(prep),
    }
    lines = []
    for name, items in sections.items():
        lines.append(f"[{name}]")
        for k, v in items.items():
            lines.append(f"{k} = {_literal(v)}")
        lines.append("")
    return "\n".join(lines)


def _literal(v):
    if isinstance(v, str):
        return v
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v) + ("," if len(v) == 1 else "")
    return repr(v)
