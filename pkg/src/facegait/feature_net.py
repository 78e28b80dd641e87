"""Convolutional-LSTM feature extractors for the gait and face streams.

Each extractor maps a clip ``(L, H, W)`` to a per-frame feature matrix
``(L, C)``. Every conv-recurrent layer is followed by 2x2 spatial max-pooling;
the last pooled map is flattened per frame and linearly reduced to ``C``.
The recurrence only looks backwards, so row ``i`` depends on frames ``<= i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import InvalidConfig, ShapeMismatch

MODALITIES = ("gait", "face")


@dataclass(frozen=True)
class LayerSpec:
    filters: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1


@dataclass(frozen=True)
class ExtractorConfig:
    layers: tuple[LayerSpec, ...] = (LayerSpec(16), LayerSpec(32))
    pool: int = 2
    out_dim: int = 588
    in_h: int = 128
    in_w: int = 128
    seed: int = 0

    def validate(self):
        if not self.layers:
            raise InvalidConfig("extractor needs at least one layer")
        if self.out_dim <= 0:
            raise InvalidConfig(f"out_dim must be positive, got {self.out_dim}")
        if self.pool < 1:
            raise InvalidConfig(f"pool must be >= 1, got {self.pool}")
        h, w = self.in_h, self.in_w
        for i, layer in enumerate(self.layers):
            kh, kw = layer.kernel
            if kh % 2 == 0 or kw % 2 == 0:
                raise InvalidConfig(f"layer {i}: kernel dims must be odd, got {layer.kernel}")
            if layer.filters <= 0 or layer.stride < 1:
                raise InvalidConfig(f"layer {i}: bad filters/stride {layer.filters}/{layer.stride}")
            h, w = _out_size(h, layer.stride) // self.pool, _out_size(w, layer.stride) // self.pool
            if h < 1 or w < 1:
                raise InvalidConfig(f"input {self.in_h}x{self.in_w} collapses to nothing after layer {i}")
        return self

    @property
    def map_shape(self) -> tuple[int, int, int]:
        """(channels, height, width) of the final pooled map."""
        h, w = self.in_h, self.in_w
        for layer in self.layers:
            h, w = _out_size(h, layer.stride) // self.pool, _out_size(w, layer.stride) // self.pool
        return self.layers[-1].filters, h, w

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractorConfig":
        d = dict(d)
        d["layers"] = tuple(LayerSpec(l["filters"], tuple(l["kernel"]), l["stride"]) for l in d["layers"])
        return cls(**d)


def _out_size(n, stride):
    return (n - 1) // stride + 1


@dataclass
class FeatureSequence:
    matrix: torch.Tensor
    modality: str = ""

    @property
    def shape(self):
        return tuple(self.matrix.shape)


class ConvLSTMCell(nn.Module):
    """Gates ``i, f, o, g`` from an input convolution plus a state convolution."""

    def __init__(self, in_ch: int, spec: LayerSpec):
        super().__init__()
        kh, kw = spec.kernel
        self.filters = spec.filters
        self.stride = spec.stride
        self.conv_x = nn.Conv2d(in_ch, 4 * spec.filters, spec.kernel, stride=spec.stride,
                                padding=(kh // 2, kw // 2))
        self.conv_h = nn.Conv2d(spec.filters, 4 * spec.filters, spec.kernel,
                                padding=(kh // 2, kw // 2), bias=False)

    def forward(self, x, state):
        h, c = state
        gates = self.conv_x(x) + self.conv_h(h)
        i, f, o, g = gates.chunk(4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


class ConvLSTMExtractor(nn.Module):
    def __init__(self, config: ExtractorConfig, modality: str = "gait"):
        super().__init__()
        config.validate()
        if modality not in MODALITIES:
            raise InvalidConfig(f"modality must be one of {MODALITIES}, got {modality!r}")
        self.config = config
        self.modality = modality
        cells, in_ch = [], 1
        for spec in config.layers:
            cells.append(ConvLSTMCell(in_ch, spec))
            in_ch = spec.filters
        self.cells = nn.ModuleList(cells)
        p, h, w = config.map_shape
        self.reduce = nn.Linear(p * h * w, config.out_dim)

    @property
    def out_dim(self):
        return self.config.out_dim

    def forward(self, clips: torch.Tensor, return_map: bool = False):
        """``clips``: (B, L, H, W). Returns (B, L, C) and optionally the last
        frame's pooled map (B, p, h, w)."""
        if clips.dim() != 4 or tuple(clips.shape[2:]) != (self.config.in_h, self.config.in_w):
            raise ShapeMismatch(
                f"expected (B, L, {self.config.in_h}, {self.config.in_w}), got {tuple(clips.shape)}")
        b, length = clips.shape[:2]
        seq = clips.unsqueeze(2)  # (B, L, 1, H, W)
        for cell in self.cells:
            hh = _out_size(seq.shape[3], cell.stride)
            ww = _out_size(seq.shape[4], cell.stride)
            h = seq.new_zeros(b, cell.filters, hh, ww)
            c = torch.zeros_like(h)
            outs = []
            for t in range(length):
                h, c = cell(seq[:, t], (h, c))
                outs.append(F.max_pool2d(h, self.config.pool))
            seq = torch.stack(outs, dim=1)
        feats = self.reduce(seq.flatten(start_dim=2))
        if return_map:
            return feats, seq[:, -1]
        return feats


def init_extractor(config: ExtractorConfig, modality: str = "gait",
                   dtype: torch.dtype = torch.float32) -> ConvLSTMExtractor:
    """Build an extractor whose weights depend only on ``config.seed``.

    Every tensor is drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), with fan_in
    the number of inputs feeding one output unit, in registration order from a
    dedicated generator.
    """
    model = ConvLSTMExtractor(config, modality).to(dtype)
    gen = torch.Generator().manual_seed(int(config.seed))
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, nn.Conv2d):
                fan_in = mod.in_channels * mod.kernel_size[0] * mod.kernel_size[1]
            elif isinstance(mod, nn.Linear):
                fan_in = mod.in_features
            else:
                continue
            bound = 1.0 / math.sqrt(fan_in)
            for p in mod.parameters(recurse=False):
                p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64).mul_(2 * bound).sub_(bound))
    return model


def extract_features(params: ConvLSTMExtractor, clip) -> FeatureSequence:
    clip = torch.as_tensor(clip)
    if clip.dim() != 3:
        raise ShapeMismatch(f"expected a single (L, H, W) clip, got {tuple(clip.shape)}")
    ref = next(params.parameters())
    out = params(clip.to(ref.dtype).unsqueeze(0))[0]
    return FeatureSequence(out, params.modality)


def save_checkpoint(path, module: nn.Module, meta: dict) -> None:
    """Write ``<path>/params.npz`` with every named tensor and ``<path>/meta.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    np.savez(path / "params.npz", **arrays)
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(state_dict, meta)`` from a directory written by :func:`save_checkpoint`."""
    path = Path(path)
    with np.load(path / "params.npz") as npz:
        state = {k: torch.from_numpy(npz[k].copy()) for k in npz.files}
    meta = json.loads((path / "meta.json").read_text())
    return state, meta


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")
