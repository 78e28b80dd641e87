"""Classifier head, objective, end-to-end training and hyperparameter search."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .attention import (
    ATTENTION_MODES,
    STRATEGIES,
    FusedFeature,
    KeylessAttention,
    adaptive_weights,
    fuse_adaptive,
    fuse_attention_concat,
    fuse_average,
    fuse_bilinear,
    keyless_attention,
    mean_pool,
)
from .errors import (
    DimensionMismatch,
    DivergenceDetected,
    EmptySpace,
    InvalidConfig,
)
from .feature_net import ExtractorConfig, init_extractor

log = logging.getLogger(__name__)

LOG_EPS = 1e-12
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 1000
    steps: int | None = 1000
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"
    weight_decay: float = 0.0
    lam: float = 0.5
    learnable_lam: bool = False
    strategy: str = "adaptive"
    attention_mode: str = "gated"
    proj_dim: int = 256
    gait: ExtractorConfig = field(default_factory=ExtractorConfig)
    face: ExtractorConfig = field(default_factory=ExtractorConfig)
    dtype: str = "float32"

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if self.steps is not None and self.steps < 1:
            raise InvalidConfig(f"steps must be >= 1 or None, got {self.steps}")
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.strategy not in STRATEGIES:
            raise InvalidConfig(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.attention_mode not in ATTENTION_MODES:
            raise InvalidConfig(f"unknown attention mode {self.attention_mode!r}")
        if not 0 < self.lam <= 1:
            raise InvalidConfig(f"lam must lie in (0, 1], got {self.lam}")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidConfig(f"unknown optimizer {self.optimizer!r}")
        if self.dtype not in DTYPES:
            raise InvalidConfig(f"dtype must be one of {tuple(DTYPES)}")
        if self.proj_dim < 1:
            raise InvalidConfig(f"proj_dim must be >= 1, got {self.proj_dim}")
        self.gait.validate()
        self.face.validate()
        if self.strategy == "bilinear" and self.gait.map_shape != self.face.map_shape:
            raise InvalidConfig(f"bilinear fusion needs matching p x d maps, "
                                f"got {self.gait.map_shape} and {self.face.map_shape}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        d["gait"] = ExtractorConfig.from_dict(d["gait"])
        d["face"] = ExtractorConfig.from_dict(d["face"])
        return cls(**d)


class FusionModel(nn.Module):
    """Both extractors, per-modality attention, the fusion step and the FC head.

    ``face`` and ``gait`` strategies drop the other stream entirely. ``face``,
    ``gait`` and ``average`` pool frames uniformly; ``attention_concat`` and
    ``adaptive`` use keyless attention; ``bilinear`` fuses the last pooled maps.
    """

    def __init__(self, config: TrainConfig, num_classes: int):
        super().__init__()
        config.validate()
        self.strategy = config.strategy
        self.num_classes = num_classes
        dtype = DTYPES[config.dtype]
        seed = int(config.seed)
        uses_face = config.strategy != "gait"
        uses_gait = config.strategy != "face"
        self.face_net = init_extractor(replace(config.face, seed=seed * 7 + 1), "face", dtype) if uses_face else None
        self.gait_net = init_extractor(replace(config.gait, seed=seed * 7 + 2), "gait", dtype) if uses_gait else None

        gen = torch.Generator().manual_seed(seed * 7 + 3)
        self.face_att = self.gait_att = None
        if config.strategy != "bilinear":
            def att(extractor, modality):
                a = KeylessAttention(extractor.out_dim, config.proj_dim, config.lam, config.attention_mode,
                                     modality, config.learnable_lam).to(dtype)
                a.reset_parameters(gen)
                return a
            self.face_att = att(self.face_net, "face") if uses_face else None
            self.gait_att = att(self.gait_net, "gait") if uses_gait else None

        if config.strategy == "bilinear":
            p = config.face.map_shape[0]
            z_dim = p * p
        elif config.strategy == "attention_concat":
            z_dim = 2 * config.proj_dim
        else:
            z_dim = config.proj_dim
        self.z_dim = z_dim
        self.classifier = nn.Linear(z_dim, num_classes).to(dtype)
        bound = 1.0 / math.sqrt(z_dim)
        with torch.no_grad():
            for p in self.classifier.parameters():
                p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64).mul_(2 * bound).sub_(bound))

    @property
    def dtype(self):
        return self.classifier.weight.dtype

    def fuse(self, gait_clips, face_clips) -> tuple[FusedFeature, dict]:
        info: dict = {}
        s = self.strategy
        if s == "bilinear":
            _, fmap = self.face_net(face_clips, return_map=True)
            _, gmap = self.gait_net(gait_clips, return_map=True)
            return fuse_bilinear(fmap.flatten(start_dim=2), gmap.flatten(start_dim=2)), info

        pool = keyless_attention if s in ("attention_concat", "adaptive") else mean_pool
        face = pool(self.face_net(face_clips), self.face_att) if self.face_net is not None else None
        gait = pool(self.gait_net(gait_clips), self.gait_att) if self.gait_net is not None else None
        if face is not None:
            info["face_weights"] = face.weights
        if gait is not None:
            info["gait_weights"] = gait.weights
        if s == "face":
            return FusedFeature(face.embedding, s), info
        if s == "gait":
            return FusedFeature(gait.embedding, s), info
        if s == "average":
            return fuse_average(face.embedding, gait.embedding), info
        if s == "attention_concat":
            return fuse_attention_concat(face, gait), info
        alpha, beta = adaptive_weights(face.embedding, gait.embedding, check=False)
        info["alpha"], info["beta"] = alpha, beta
        return fuse_adaptive(face.embedding, gait.embedding, alpha, beta), info

    def forward(self, gait_clips, face_clips, return_info: bool = False):
        z, info = self.fuse(gait_clips, face_clips)
        logits = self.classifier(z.vector)
        return (logits, info) if return_info else logits


def classify(z, params: nn.Linear) -> torch.Tensor:
    """Class probabilities ``softmax(W z + bias)``."""
    vec = torch.as_tensor(getattr(z, "vector", z), dtype=params.weight.dtype)
    if vec.shape[-1] != params.in_features:
        raise DimensionMismatch(f"feature of size {vec.shape[-1]} vs classifier input {params.in_features}")
    return torch.softmax(params(vec), dim=-1)


def predict_id(probs) -> int | np.ndarray:
    """Index of the largest probability; ties go to the lowest index."""
    arr = np.asarray(probs.detach() if isinstance(probs, torch.Tensor) else probs)
    out = np.argmax(arr, axis=-1)
    return int(out) if out.ndim == 0 else out


def one_hot(index: int, num_classes: int) -> np.ndarray:
    t = np.zeros(num_classes)
    t[index] = 1.0
    return t


def cross_entropy_loss(probs, target) -> torch.Tensor:
    """``-sum_i t_i ln R_i`` with ``R`` clamped to ``[1e-12, 1]``.

    ``target`` is a one-hot vector or an integer class index.
    """
    probs = torch.as_tensor(probs)
    if isinstance(target, (int, np.integer)):
        return -torch.log(probs[..., int(target)].clamp(LOG_EPS, 1.0))
    t = torch.as_tensor(target, dtype=probs.dtype)
    if t.shape != probs.shape:
        raise DimensionMismatch(f"target {tuple(t.shape)} vs probabilities {tuple(probs.shape)}")
    return -(t * torch.log(probs.clamp(LOG_EPS, 1.0))).sum(dim=-1)


@dataclass
class ClipSet:
    """Prepared clips. ``gait`` and ``face`` are (N, L, H, W) arrays."""

    gait: np.ndarray
    face: np.ndarray
    labels: np.ndarray
    angles: np.ndarray
    keys: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "ClipSet":
        idx = np.asarray(idx)
        return ClipSet(self.gait[idx], self.face[idx], self.labels[idx], self.angles[idx],
                       [self.keys[i] for i in idx] if self.keys else [])

    @classmethod
    def concat(cls, sets: Sequence["ClipSet"]) -> "ClipSet":
        return cls(np.concatenate([s.gait for s in sets]), np.concatenate([s.face for s in sets]),
                   np.concatenate([s.labels for s in sets]), np.concatenate([s.angles for s in sets]),
                   [k for s in sets for k in s.keys])


@dataclass
class TrainedModel:
    model: FusionModel
    config: TrainConfig
    num_classes: int
    history: list[dict] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"]


def _batch(model, data: ClipSet, idx):
    g = torch.as_tensor(data.gait[idx], dtype=model.dtype)
    f = torch.as_tensor(data.face[idx], dtype=model.dtype)
    y = torch.as_tensor(data.labels[idx], dtype=torch.long)
    return g, f, y


def _make_optimizer(config: TrainConfig, params):
    if config.optimizer == "adam":
        return torch.optim.Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    return torch.optim.SGD(params, lr=config.learning_rate, momentum=0.9, weight_decay=config.weight_decay)


def train(config: TrainConfig, train_set: ClipSet, num_classes: int | None = None,
          val_set: ClipSet | None = None, on_epoch: Callable[[dict], None] | None = None,
          on_best: Callable[[FusionModel, dict], None] | None = None) -> TrainedModel:
    """Mini-batch training of the whole stack on cross-entropy.

    Runs ``epochs`` passes over the data, stopping early once ``steps``
    optimizer steps have been taken. Deterministic for a fixed seed and thread
    count. With ``val_set``, validation accuracy is logged per epoch and
    ``on_best`` fires whenever it improves.
    """
    config.validate()
    if len(train_set) == 0:
        raise InvalidConfig("empty training set")
    k = int(num_classes if num_classes is not None else train_set.labels.max() + 1)
    torch.manual_seed(config.seed)
    model = FusionModel(config, k)
    opt = _make_optimizer(config, model.parameters())
    rng = np.random.default_rng(config.seed)

    history = []
    step = 0
    best_val = -math.inf
    n = len(train_set)
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(n)
        total_loss, correct, seen = 0.0, 0, 0
        for start in range(0, n, config.batch_size):
            if config.steps is not None and step >= config.steps:
                break
            idx = order[start:start + config.batch_size]
            g, f, y = _batch(model, train_set, idx)
            logits = model(g, f)
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss {loss.item()} at epoch {epoch} step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            total_loss += loss.item() * len(idx)
            correct += int((logits.argmax(dim=1) == y).sum())
            seen += len(idx)
        if seen == 0:
            break
        rec = {"epoch": epoch, "step": step, "loss": total_loss / seen, "accuracy": 100.0 * correct / seen}
        if val_set is not None and len(val_set):
            rec["val_accuracy"] = accuracy_on(model, val_set)
            if on_best is not None and rec["val_accuracy"] > best_val:
                best_val = rec["val_accuracy"]
                on_best(model, rec)
        history.append(rec)
        log.debug("epoch %d step %d loss %.4f acc %.1f", epoch, step, rec["loss"], rec["accuracy"])
        if on_epoch is not None:
            on_epoch(rec)
        if config.steps is not None and step >= config.steps:
            break
    model.eval()
    return TrainedModel(model, config, k, history)


@torch.no_grad()
def predict_proba(model: FusionModel, data: ClipSet, batch_size: int = 16) -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        g, f, _ = _batch(model, data, idx)
        out.append(torch.softmax(model(g, f), dim=-1).double().numpy())
    return np.concatenate(out)


def accuracy_on(model: FusionModel, data: ClipSet) -> float:
    probs = predict_proba(model, data)
    return 100.0 * float(np.mean(predict_id(probs) == data.labels))


@dataclass
class SearchResult:
    best: TrainConfig
    best_score: float
    trials: list[dict]


def sample_value(spec, rng: np.random.Generator):
    """Draw one value. ``spec`` is a list of choices or a dict with one of
    ``uniform``, ``loguniform`` or ``int`` mapping to ``[low, high]``."""
    if isinstance(spec, (list, tuple)):
        if not spec:
            raise EmptySpace("empty choice list")
        return spec[int(rng.integers(len(spec)))]
    if isinstance(spec, Mapping) and len(spec) == 1:
        (kind, (lo, hi)), = spec.items()
        if kind == "uniform":
            return float(rng.uniform(lo, hi))
        if kind == "loguniform":
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        if kind == "int":
            return int(rng.integers(lo, hi + 1))
    raise InvalidConfig(f"cannot sample from {spec!r}")


def hyperparameter_search(space: Mapping, trials: int, objective: Callable[[TrainConfig], float],
                          base: TrainConfig | None = None, seed: int = 0,
                          apply: Callable[[TrainConfig, dict], TrainConfig] | None = None) -> SearchResult:
    """Seeded random search maximising ``objective`` (e.g. validation accuracy).

    Keys of ``space`` are config keys such as ``"train.learning_rate"``. Every
    trial keeps the base seed so configs are compared on the same draws; ties
    keep the earliest trial.
    """
    if not space:
        raise EmptySpace("search space has no parameters")
    if trials < 1:
        raise InvalidConfig(f"trials must be >= 1, got {trials}")
    if apply is None:
        from .config import apply_overrides as apply
    base = base or TrainConfig()
    rng = np.random.default_rng(seed)
    log_rows, best, best_score = [], None, -math.inf
    for trial in range(trials):
        values = {key: sample_value(spec, rng) for key, spec in sorted(space.items())}
        cfg = apply(base, values)
        score = float(objective(cfg))
        log_rows.append({"trial": trial, "values": values, "score": score})
        log.info("trial %d %s -> %.3f", trial, values, score)
        if score > best_score:
            best, best_score = cfg, score
    return SearchResult(best, best_score, log_rows)
