"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python3 tests/test_acceptance.py``. Criterion 6 needs the real dataset: set
``CASIA_A_MANIFEST`` to a prepared manifest and ``CASIA_A_KEYPOINTS`` to its
keypoint sidecar directory, otherwise it is skipped.
"""

import math
import os
import sys
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import torch

from facegait.attention import KeylessAttention, adaptive_weights, fuse_bilinear, keyless_attention
from facegait.feature_net import ExtractorConfig, LayerSpec
from facegait.gait_cycle import AspectSignal, detect_local_minima
from facegait.metrics import EvalRecord, accuracy, log_loss, records_from_predictions, summarize
from facegait.pipeline import PrepConfig
from facegait.synthetic import generate_dataset, split_half, to_clipset
from facegait.train import FusionModel, TrainConfig, accuracy_on, cross_entropy_loss, predict_proba, train

sys.path.insert(0, str(Path(__file__).parent))
from oracles import bilinear_loop, central_differences, relative_error  # noqa: E402


def verdict(capsys, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    assert ok, line


# 1. math core


def test_criterion_1_math_core(capsys):
    t0 = time.time()
    rng = np.random.default_rng(101)
    problems = []

    worst = 0.0
    for trial in range(1000):
        length, dim = int(rng.integers(1, 30)), int(rng.integers(1, 10))
        att = KeylessAttention(dim, int(rng.integers(1, 12)), float(rng.uniform(1e-3, 1)),
                               ("plain", "gated")[trial % 2]).double()
        att.reset_parameters(torch.Generator().manual_seed(trial))
        x = torch.from_numpy(rng.normal(0, rng.uniform(0.1, 20), size=(length, dim)))
        w = keyless_attention(x, att).weights
        worst = max(worst, abs(w.sum().item() - 1.0))
        if (w < 0).any():
            problems.append("negative weight")
    if worst > 1e-6:
        problems.append(f"weight sum off by {worst:.2e}")

    att = KeylessAttention(6, 8, 0.5).double()
    same = torch.from_numpy(np.tile(rng.normal(size=6), (9, 1)))
    if (keyless_attention(same, att).weights - 1 / 9).abs().max() > 1e-9:
        problems.append("identical rows not uniform")
    tiny = KeylessAttention(6, 8, 1e-12).double()
    if (keyless_attention(torch.from_numpy(rng.normal(size=(9, 6)) * 50), tiny).weights - 1 / 9).abs().max() > 1e-9:
        problems.append("lambda -> 0 not uniform")

    worst_ab = 0.0
    for _ in range(1000):
        f, g = torch.from_numpy(rng.normal(size=16)), torch.from_numpy(rng.normal(size=16) * rng.uniform(0, 5))
        a, b = adaptive_weights(f, g)
        worst_ab = max(worst_ab, abs(a.item() + b.item() - 1))
    if worst_ab > 1e-12:
        problems.append(f"alpha+beta off by {worst_ab:.2e}")
    a, b = adaptive_weights(torch.tensor([3.0, 0.0], dtype=torch.float64), torch.tensor([0.0, 1.0], dtype=torch.float64))
    if (a.item(), b.item()) != (0.75, 0.25):
        problems.append(f"(3,1) gave {(a.item(), b.item())}")
    a, b = adaptive_weights(torch.tensor([0.0, 2.0]), torch.zeros(2))
    if (a.item(), b.item()) != (1.0, 0.0):
        problems.append("zero gait limit not exact")
    a, b = adaptive_weights(torch.zeros(2), torch.tensor([0.0, 2.0]))
    if (a.item(), b.item()) != (0.0, 1.0):
        problems.append("zero face limit not exact")

    worst_bl = 0.0
    for _ in range(100):
        p, d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        F, G = rng.normal(size=(p, d)), rng.normal(size=(p, d))
        z = fuse_bilinear(torch.from_numpy(F), torch.from_numpy(G)).vector.numpy().reshape(p, p)
        worst_bl = max(worst_bl, float(np.abs(z - np.array(bilinear_loop(F.tolist(), G.tolist()))).max()))
    if worst_bl > 1e-10:
        problems.append(f"bilinear off by {worst_bl:.2e}")

    ce = cross_entropy_loss(torch.full((20,), 1 / 20, dtype=torch.float64), 7).item()
    if abs(ce - math.log(20)) > 1e-9:
        problems.append(f"uniform K=20 loss {ce}")

    elapsed = time.time() - t0
    if elapsed > 60:
        problems.append(f"took {elapsed:.0f}s")
    detail = (f"max |sum w - 1| = {worst:.1e}, max |a+b-1| = {worst_ab:.1e}, "
              f"bilinear err = {worst_bl:.1e}, ln20 err = {abs(ce - math.log(20)):.1e}, {elapsed:.1f}s")
    verdict(capsys, "1 math core", not problems, "; ".join(problems) or detail)


# 2. gradient check


def test_criterion_2_gradient_check(capsys):
    t0 = time.time()
    ext = ExtractorConfig(layers=(LayerSpec(4), LayerSpec(4)), out_dim=12, in_h=16, in_w=16)
    cfg = TrainConfig(strategy="adaptive", proj_dim=8, gait=ext, face=ext, dtype="float64", seed=3)
    model = FusionModel(cfg, 3)
    rng = np.random.default_rng(7)
    gait = torch.from_numpy(rng.normal(size=(2, 8, 16, 16)))
    face = torch.from_numpy(rng.normal(size=(2, 8, 16, 16)))
    target = torch.tensor([0, 2])

    def loss():
        probs = torch.softmax(model(gait, face), dim=-1)
        return sum(cross_entropy_loss(probs[i], int(target[i])) for i in range(2))

    named = [(n, p) for n, p in model.named_parameters()]
    model.zero_grad()
    loss().backward()
    # some gradients are ~1e-6, so eps=1e-6 would leave roundoff at ~1e-4 relative;
    # 1e-5 balances roundoff against O(eps^2) truncation
    numeric = central_differences(loss, [p for _, p in named], eps=1e-5)
    errors = {n: relative_error(p.grad.numpy(), g.numpy()) for (n, p), g in zip(named, numeric)}
    worst_name = max(errors, key=errors.get)
    groups = {n.split(".")[0] for n in errors}
    elapsed = time.time() - t0
    ok = max(errors.values()) < 1e-4 and {"face_net", "gait_net", "face_att", "gait_att", "classifier"} <= groups
    ok = ok and elapsed < 300
    verdict(capsys, "2 gradient check", ok,
            f"{len(errors)} tensors / {sum(p.numel() for _, p in named)} entries, "
            f"worst {worst_name} rel err {errors[worst_name]:.1e}, {elapsed:.0f}s")


# 3. gait cycle oracle


def test_criterion_3_gait_cycle(capsys):
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst, misses = 0.0, []
    for k in range(50):
        period = rng.uniform(6, 20)
        first = rng.uniform(3, period)
        amp = rng.uniform(0.3, 1.0)
        n = int(math.ceil(first + 2 * period + rng.uniform(3, period)))
        t = np.arange(n)
        clean = 2.5 - amp * np.cos(2 * np.pi * (t - first) / period)
        noisy = clean + rng.normal(0, 0.02 * (clean.max() - clean.min()), n)
        minima = detect_local_minima(AspectSignal(noisy, np.ones(n, bool)), 5)
        if len(minima) < 3:
            misses.append(k)
            continue
        dev = max(abs(minima[0] - first), abs(minima[2] - (first + 2 * period)))
        worst = max(worst, dev)
    elapsed = time.time() - t0
    ok = not misses and worst <= 1.0 and elapsed < 10
    verdict(capsys, "3 gait cycle oracle", ok,
            f"50 signals, worst endpoint deviation {worst:.2f} frames, {len(misses)} without a cycle, {elapsed:.1f}s")


# 4. synthetic end to end

PREP = PrepConfig(clip_len=16, height=32, width=32)
SYN_EXT = ExtractorConfig(layers=(LayerSpec(8), LayerSpec(16)), out_dim=64, in_h=32, in_w=32)
SYN_CFG = TrainConfig(learning_rate=3e-3, epochs=1000, steps=200, batch_size=8, proj_dim=32,
                      gait=SYN_EXT, face=SYN_EXT, seed=0)


def _synthetic(corrupt):
    seqs = generate_dataset(5, per_class=20, seed=11, corrupt_views=corrupt)
    tr, te = split_half(seqs)
    return to_clipset(tr, PREP), to_clipset(te, PREP)


def test_criterion_4_synthetic_end_to_end(capsys):
    t0 = time.time()
    train_set, test_set = _synthetic(False)
    clean = accuracy_on(train(replace(SYN_CFG, strategy="adaptive"), train_set, 5).model, test_set)

    train_set, test_set = _synthetic(True)
    scores, per_angle = {}, {}
    for strategy in ("face", "gait", "adaptive"):
        model = train(replace(SYN_CFG, strategy=strategy), train_set, 5).model
        scores[strategy] = accuracy_on(model, test_set)
        recs = records_from_predictions(predict_proba(model, test_set), test_set.labels, test_set.angles)
        per_angle[strategy] = summarize(recs, 5).per_angle
    elapsed = time.time() - t0
    ok = clean >= 95 and scores["adaptive"] >= max(scores["face"], scores["gait"]) and elapsed < 900
    angles = " ".join(f"{s}@{a}={per_angle[s][a]:.0f}" for s in ("face", "gait") for a in (0, 90))
    verdict(capsys, "4 synthetic end to end", ok,
            f"clean adaptive {clean:.0f}% (>= 95); corrupted face {scores['face']:.0f}%, "
            f"gait {scores['gait']:.0f}%, adaptive {scores['adaptive']:.0f}%; {angles}; 200 steps each, {elapsed:.0f}s")


# 5. metric identities


def test_criterion_5_metric_identities(capsys):
    rng = np.random.default_rng(5)
    problems = []
    for trial in range(200):
        k = int(rng.integers(2, 21))
        n = int(rng.integers(1, 120))
        probs = rng.dirichlet(np.ones(k) * 0.5, size=n)
        labels = rng.integers(0, k, n)
        angles = rng.choice([0, 45, 90], n)
        records = records_from_predictions(probs, labels, angles)
        s = summarize(records, k)
        correct = sum(r.correct for r in records)
        if Fraction(100 * int(np.trace(s.confusion)), n) != Fraction(100 * correct, n) or \
                float(Fraction(100 * int(np.trace(s.confusion)), n)) != s.accuracy:
            problems.append(f"trace identity broke at trial {trial}")
        weighted = sum(Fraction(100 * c, m) * m for c, m in s.per_angle_counts.values()) / n
        if weighted != Fraction(100 * correct, n):
            problems.append(f"angle identity broke at trial {trial}")
        if any(s.per_angle[a] != float(Fraction(100 * c, m)) for a, (c, m) in s.per_angle_counts.items()):
            problems.append(f"angle accuracy mismatch at trial {trial}")
    ll = log_loss([EvalRecord(0, 0, [0.8, 0.2]), EvalRecord(1, 1, [0.5, 0.5])])
    oracle = -(math.log(0.8) + math.log(0.5)) / 2
    if abs(ll - 0.4581) > 1e-4 or abs(ll - oracle) > 1e-6:
        problems.append(f"log loss {ll}")
    acc18 = accuracy([EvalRecord(i, i if i < 18 else 0, np.eye(20)[i if i < 18 else 0]) for i in range(20)])
    if acc18 != 90.0:
        problems.append(f"18/20 gave {acc18}")
    verdict(capsys, "5 metric identities", not problems,
            "; ".join(problems[:3]) or f"200 random record sets exact, log loss {ll:.7f}")


# 6. real dataset (conditional)


@pytest.mark.skipif(not os.environ.get("CASIA_A_MANIFEST"), reason="CASIA_A_MANIFEST not set; dataset unavailable")
def test_criterion_6_casia_a(capsys, tmp_path):
    from facegait.dataset import load_manifest, split_sequences
    from facegait.face_roi import SidecarKeypointProvider
    from facegait.pipeline import load_clip_store, prepare_many, write_store_info

    manifest = load_manifest(os.environ["CASIA_A_MANIFEST"])
    kp_dir = Path(os.environ.get("CASIA_A_KEYPOINTS", Path(os.environ["CASIA_A_MANIFEST"]).parent / "keypoints"))
    prep = PrepConfig()
    tr, te = split_sequences(manifest)
    split = {r.key: "train" for r in tr} | {r.key: "test" for r in te}
    prepare_many(tr + te, lambda r: SidecarKeypointProvider(kp_dir / f"{r.key}.jsonl"), prep,
                 store=tmp_path, split_of=lambda r: split[r.key])
    write_store_info(tmp_path, manifest.num_classes, prep)
    train_set, test_set = load_clip_store(tmp_path, "train"), load_clip_store(tmp_path, "test")
    cfg = TrainConfig(steps=int(os.environ.get("CASIA_A_STEPS", 3000)))
    per_angle, overall = {}, {}
    for strategy in ("face", "gait", "adaptive"):
        model = train(replace(cfg, strategy=strategy), train_set, manifest.num_classes).model
        recs = records_from_predictions(predict_proba(model, test_set), test_set.labels, test_set.angles)
        s = summarize(recs, manifest.num_classes)
        overall[strategy], per_angle[strategy] = s.accuracy, s.per_angle
    ok = (overall["adaptive"] >= 85 and overall["adaptive"] >= max(overall["face"], overall["gait"])
          and per_angle["gait"][0] > per_angle["face"][0] and per_angle["face"][90] > per_angle["gait"][90])
    verdict(capsys, "6 dataset protocol", ok, f"overall {overall}, per angle {per_angle}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
