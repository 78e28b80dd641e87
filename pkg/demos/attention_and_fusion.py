"""Keyless attention and the fusion strategies on small hand-made inputs.

Run: python3 demos/attention_and_fusion.py
"""

import torch

from facegait.attention import (
    KeylessAttention,
    adaptive_weights,
    fuse_adaptive,
    fuse_attention_concat,
    fuse_average,
    fuse_bilinear,
    keyless_attention,
)

torch.set_printoptions(precision=4, sci_mode=False)

# a scalar example: identity projection, context u = 1
att = KeylessAttention(1, 1, lam=1.0, mode="gated").double()
with torch.no_grad():
    att.W.fill_(1.0)
    att.b.zero_()
    att.u.fill_(1.0)
frames = torch.tensor([[0.0], [2.0]], dtype=torch.float64)
res = keyless_attention(frames, att)
print("gated weights for frames [0, 2]:", res.weights)
print("attended embedding:", res.embedding)

# plain scoring favours the second frame a bit more
att.mode = "plain"
print("plain weights:", keyless_attention(frames, att).weights)

# smaller lambda flattens the weights toward uniform
for lam in (1.0, 0.5, 0.1, 1e-6):
    a = KeylessAttention(1, 1, lam=lam, mode="gated").double()
    a.load_state_dict(att.state_dict(), strict=False)
    print(f"lam={lam:g}:", keyless_attention(frames, a).weights)

# random per-modality sequences
torch.manual_seed(0)
face_att = KeylessAttention(12, 6, lam=0.5).double()
gait_att = KeylessAttention(12, 6, lam=0.5).double()
face = keyless_attention(torch.randn(24, 12, dtype=torch.float64), face_att)
gait = keyless_attention(3 * torch.randn(24, 12, dtype=torch.float64), gait_att)
print("face frame weights sum:", face.weights.sum().item())

# the stronger (larger norm) embedding gets the larger share
alpha, beta = adaptive_weights(face.embedding, gait.embedding)
print(f"alpha={alpha.item():.3f}  beta={beta.item():.3f}  sum={alpha.item() + beta.item()}")
print("adaptive Z:", fuse_adaptive(face.embedding, gait.embedding, alpha, beta).vector)
print("average Z: ", fuse_average(face.embedding, gait.embedding).vector)
print("concat dim:", fuse_attention_concat(face, gait).dim)

# bilinear pooling of two channel x position maps
F = torch.eye(2)
G = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
print("bilinear F=I:", fuse_bilinear(F, G).vector.reshape(2, 2))
