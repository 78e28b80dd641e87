"""Keyless attention pooling and the face/gait fusion strategies.

Per modality, frame features ``x_i`` are projected to ``x̄_i = W x_i + b`` and
scored without any external query. Plain scoring uses ``u·tanh(x̄_i)``; gated
scoring uses ``u·(tanh(x̄_i) * sigmoid(x̄_i))``. Weights are the softmax of the
scores scaled by ``lam`` and the modality embedding is the weighted sum of the
projected rows.

The softmax weights always sum to one, so their sum carries no information.
The adaptive fusion weights are computed from the norms of the attended
embeddings instead::

    alpha = |face| / (|face| + |gait|),   beta = |gait| / (|face| + |gait|)
    Z = alpha * face + beta * gait

All functions accept batched inputs with leading dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import BothZero, DimensionMismatch, InvalidConfig, ShapeMismatch

STRATEGIES = ("face", "gait", "average", "bilinear", "attention_concat", "adaptive")
FUSION_STRATEGIES = ("average", "bilinear", "attention_concat", "adaptive")
ATTENTION_MODES = ("plain", "gated")


@dataclass
class AttentionResult:
    weights: torch.Tensor  # (..., L)
    embedding: torch.Tensor  # (..., C̄)
    projected: torch.Tensor  # (..., L, C̄)


@dataclass
class FusedFeature:
    vector: torch.Tensor
    strategy: str
    matrix_shape: tuple[int, int] | None = None

    @property
    def dim(self) -> int:
        return self.vector.shape[-1]


class KeylessAttention(nn.Module):
    """Projection ``W, b``, context vector ``u`` and scale ``lam`` for one modality."""

    def __init__(self, in_dim: int, proj_dim: int = 256, lam: float = 0.5, mode: str = "gated",
                 modality: str = "", learnable_lam: bool = False):
        super().__init__()
        if mode not in ATTENTION_MODES:
            raise InvalidConfig(f"attention mode must be one of {ATTENTION_MODES}, got {mode!r}")
        if not 0.0 < lam <= 1.0:
            raise InvalidConfig(f"lam must lie in (0, 1], got {lam}")
        self.mode = mode
        self.modality = modality
        self.W = nn.Parameter(torch.empty(proj_dim, in_dim))
        self.b = nn.Parameter(torch.empty(proj_dim))
        self.u = nn.Parameter(torch.empty(proj_dim))
        self.learnable_lam = learnable_lam
        if learnable_lam:
            # sigmoid keeps lam inside (0, 1)
            lam = min(lam, 1 - 1e-6)
            self.lam_logit = nn.Parameter(torch.tensor(math.log(lam / (1 - lam))))
        else:
            # a plain float so casting the module never rounds it
            self.lam_value = float(lam)
        self.reset_parameters()

    @property
    def lam(self) -> torch.Tensor | float:
        return torch.sigmoid(self.lam_logit) if self.learnable_lam else self.lam_value

    def reset_parameters(self, generator: torch.Generator | None = None):
        bound_w = 1.0 / math.sqrt(self.W.shape[1])
        bound_u = 1.0 / math.sqrt(self.W.shape[0])
        with torch.no_grad():
            for p, bound in ((self.W, bound_w), (self.b, bound_w), (self.u, bound_u)):
                r = torch.rand(p.shape, generator=generator, dtype=torch.float64)
                p.copy_(r.mul_(2 * bound).sub_(bound))

    def forward(self, features: torch.Tensor) -> AttentionResult:
        return keyless_attention(features, self)


def attention_scores(projected: torch.Tensor, u: torch.Tensor, mode: str) -> torch.Tensor:
    act = torch.tanh(projected)
    if mode == "gated":
        act = act * torch.sigmoid(projected)
    return act @ u


def keyless_attention(features, params: KeylessAttention) -> AttentionResult:
    x = getattr(features, "matrix", features)
    x = torch.as_tensor(x, dtype=params.W.dtype)
    if x.dim() < 2 or x.shape[-1] != params.W.shape[1]:
        raise ShapeMismatch(f"expected (..., L, {params.W.shape[1]}) features, got {tuple(x.shape)}")
    projected = x @ params.W.T + params.b
    scores = attention_scores(projected, params.u, params.mode)
    weights = torch.softmax(params.lam * scores, dim=-1)
    embedding = (weights.unsqueeze(-1) * projected).sum(dim=-2)
    return AttentionResult(weights, embedding, projected)


def mean_pool(features, params: KeylessAttention) -> AttentionResult:
    """Projection with uniform frame weights; the non-attentive baseline."""
    x = torch.as_tensor(getattr(features, "matrix", features), dtype=params.W.dtype)
    projected = x @ params.W.T + params.b
    weights = torch.full(projected.shape[:-1], 1.0 / projected.shape[-2], dtype=projected.dtype)
    return AttentionResult(weights, projected.mean(dim=-2), projected)


def _pair(face, gait):
    face = torch.as_tensor(face)
    gait = torch.as_tensor(gait)
    if face.shape != gait.shape:
        raise DimensionMismatch(f"face {tuple(face.shape)} vs gait {tuple(gait.shape)}")
    return face, gait


def adaptive_weights(face_emb, gait_emb, check: bool = True):
    """Norm-proportional weights ``(alpha, beta)``; shapes follow the leading dims."""
    face_emb, gait_emb = _pair(face_emb, gait_emb)
    # the ratios are scale invariant; rescaling avoids underflow in the norms
    scale = torch.maximum(face_emb.abs().amax(dim=-1), gait_emb.abs().amax(dim=-1)).detach()
    if check and bool((scale == 0).any()):
        raise BothZero("both modality embeddings have zero norm")
    scale = torch.where(scale > 0, scale, torch.ones_like(scale)).unsqueeze(-1)
    nf = torch.linalg.vector_norm(face_emb / scale, dim=-1)
    ng = torch.linalg.vector_norm(gait_emb / scale, dim=-1)
    total = nf + ng
    return nf / total, ng / total


def fuse_adaptive(face_emb, gait_emb, alpha, beta) -> FusedFeature:
    face_emb, gait_emb = _pair(face_emb, gait_emb)
    alpha = torch.as_tensor(alpha, dtype=face_emb.dtype)
    beta = torch.as_tensor(beta, dtype=face_emb.dtype)
    if alpha.dim():
        alpha, beta = alpha.unsqueeze(-1), beta.unsqueeze(-1)
    return FusedFeature(alpha * face_emb + beta * gait_emb, "adaptive")


def fuse_average(face_emb, gait_emb) -> FusedFeature:
    face_emb, gait_emb = _pair(face_emb, gait_emb)
    return FusedFeature(0.5 * face_emb + 0.5 * gait_emb, "average")


def fuse_bilinear(face_tensor, gait_tensor) -> FusedFeature:
    """``Z = F Gᵀ`` for ``p x d`` matrices, flattened row-major to ``p * p``."""
    f, g = _pair(face_tensor, gait_tensor)
    if f.dim() < 2:
        raise DimensionMismatch(f"expected (..., p, d) matrices, got {tuple(f.shape)}")
    p = f.shape[-2]
    z = f @ g.transpose(-1, -2)
    return FusedFeature(z.flatten(start_dim=-2), "bilinear", (p, p))


def fuse_attention_concat(face_res: AttentionResult, gait_res: AttentionResult) -> FusedFeature:
    f, g = face_res.embedding, gait_res.embedding
    if f.shape[:-1] != g.shape[:-1]:
        raise DimensionMismatch(f"face {tuple(f.shape)} vs gait {tuple(g.shape)}")
    return FusedFeature(torch.cat([f, g], dim=-1), "attention_concat")
