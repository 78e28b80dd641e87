"""Command-line entry point: ``facegait <verb> ...``.

Verbs::

    prepare  --manifest M --keypoints DIR --out DIR [--dump-signal]
    train    --config C --data DIR --out DIR [--set k=v ...] [--val-split]
    evaluate --model CKPT --data DIR --out DIR
    search   --config C --space S --trials N --data DIR [--out DIR]
    report   --runs DIR [DIR ...] [--out DIR]

Keypoint sidecars are looked up as ``<keypoints>/<subject>-<angle>-<index>.jsonl``.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import apply_overrides, load_config, parse_overrides, to_ini
from .dataset import load_manifest, split_sequences
from .errors import FaceGaitError, InvalidConfig, SchemaViolation
from .face_roi import SidecarKeypointProvider
from .feature_net import load_checkpoint, save_checkpoint
from .metrics import EvalSummary, emit_report, records_from_predictions, summarize
from .pipeline import PrepConfig, load_clip_store, prepare_many, read_store_info, write_store_info
from .train import (
    ClipSet,
    FusionModel,
    TrainConfig,
    accuracy_on,
    hyperparameter_search,
    predict_proba,
    sample_value,
    train,
)

log = logging.getLogger("facegait")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _split_validation(data: ClipSet) -> tuple[ClipSet, ClipSet]:
    """Hold out the second training sequence of every (subject, angle) group."""
    idx = np.array([int(k.rsplit("-", 1)[1]) for k in data.keys])
    return data.subset(np.flatnonzero(idx != 1)), data.subset(np.flatnonzero(idx == 1))


def _load(args):
    if args.config is not None and not Path(args.config).is_file():
        raise UsageError(f"config file {args.config} does not exist")
    return load_config(args.config, parse_overrides(args.set))


def cmd_prepare(args) -> int:
    cfg, prep = _load(args)
    manifest = load_manifest(args.manifest)
    train_recs, test_recs = split_sequences(manifest)
    split = {r.key: "train" for r in train_recs} | {r.key: "test" for r in test_recs}
    kp_dir = Path(args.keypoints)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    done, failures = prepare_many(
        train_recs + test_recs,
        lambda rec: SidecarKeypointProvider(kp_dir / f"{rec.key}.jsonl"),
        prep, store=out, split_of=lambda rec: split[rec.key],
        signal_dir=out / "signals" if args.dump_signal else None)
    write_store_info(out, manifest.num_classes, prep, manifest=str(Path(args.manifest).resolve()),
                     failures={k: f"{type(e).__name__}: {e}" for k, e in sorted(failures.items())})
    print(f"prepared {len(done)} of {len(done) + len(failures)} sequences into {out}")
    for key, err in sorted(failures.items()):
        print(f"  failed {key}: {type(err).__name__}: {err}")
    return EXIT_OK if done else EXIT_FAILURE


def _history_csv(path: Path, history: list[dict]):
    if not history:
        return
    keys = sorted({k for row in history for k in row}, key=lambda k: list(history[0]).index(k)
                  if k in history[0] else 99)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(history)


def evaluate_model(model: FusionModel, data: ClipSet, num_classes: int, out: Path, strategy: str) -> EvalSummary:
    probs = predict_proba(model, data)
    records = records_from_predictions(probs, data.labels, data.angles, data.keys)
    summary = summarize(records, num_classes)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps({"strategy": strategy, "summary": summary.to_dict()}, indent=1))
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "angle", "subject_id", "predicted_id", "p_true"])
        for r in records:
            w.writerow([r.key, r.angle, r.subject_id, r.predicted_id, f"{r.probabilities[r.subject_id]:.6f}"])
    return summary


def _meta(cfg: TrainConfig, prep: PrepConfig, num_classes: int, step: int) -> dict:
    return {"config": cfg.to_dict(), "prep": prep.__dict__, "num_classes": num_classes,
            "seed": cfg.seed, "step": step, "strategy": cfg.strategy, "version": __version__}


def cmd_train(args) -> int:
    """Train the configured strategy, evaluate on the test split and report."""
    cfg, prep = _load(args)
    info = read_store_info(args.data)
    k = int(info["num_classes"])
    data_prep = PrepConfig(**info["prep"])
    if (data_prep.height, data_prep.width) != (prep.height, prep.width):
        raise InvalidConfig(f"config expects {prep.height}x{prep.width} clips, store has "
                            f"{data_prep.height}x{data_prep.width}")
    train_set = load_clip_store(args.data, "train")
    test_set = load_clip_store(args.data, "test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(to_ini(cfg, data_prep))
    (out / "seed.txt").write_text(f"{cfg.seed}\n")

    val_set = None
    on_best = None
    if args.val_split:
        train_set, val_set = _split_validation(train_set)

        def save_best(model, rec):
            save_checkpoint(out / "checkpoints" / f"best-epoch{rec['epoch']:04d}", model,
                            _meta(cfg, data_prep, k, rec["step"]) | {"val_accuracy": rec["val_accuracy"]})
        on_best = save_best

    torch.set_num_threads(args.threads)
    trained = train(cfg, train_set, k, val_set=val_set, on_best=on_best)
    save_checkpoint(out / "model", trained.model, _meta(cfg, data_prep, k, trained.history[-1]["step"]))
    _history_csv(out / "history.csv", trained.history)
    summary = evaluate_model(trained.model, test_set, k, out, cfg.strategy)
    emit_report({cfg.strategy: summary}, out / "results", stream=sys.stdout)
    return EXIT_OK


def load_model(path) -> tuple[FusionModel, dict]:
    state, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    model = FusionModel(cfg, int(meta["num_classes"]))
    model.load_state_dict(state)
    model.eval()
    return model, meta


def cmd_evaluate(args) -> int:
    model, meta = load_model(args.model)
    test_set = load_clip_store(args.data, "test")
    out = Path(args.out)
    summary = evaluate_model(model, test_set, int(meta["num_classes"]), out, meta["strategy"])
    emit_report({meta["strategy"]: summary}, out / "results", stream=sys.stdout)
    return EXIT_OK


def cmd_search(args) -> int:
    cfg, prep = _load(args)
    try:
        space = json.loads(Path(args.space).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read search space {args.space}: {exc}") from exc
    if not isinstance(space, dict):
        raise UsageError("search space must be a JSON object of config keys")
    # fail on unknown keys or malformed ranges before any training
    probe = np.random.default_rng(0)
    apply_overrides(cfg, {key: sample_value(spec, probe) for key, spec in space.items()}).validate()
    info = read_store_info(args.data)
    k = int(info["num_classes"])
    fit_set, val_set = _split_validation(load_clip_store(args.data, "train"))
    if len(val_set) == 0:
        raise SchemaViolation("clip store", "no sequence with index 1 to validate on")

    def objective(trial_cfg):
        return accuracy_on(train(trial_cfg, fit_set, k).model, val_set)

    result = hyperparameter_search(space, args.trials, objective, base=cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.json").write_text(json.dumps(result.trials, indent=1))
    (out / "best.ini").write_text(to_ini(result.best, prep))
    print(f"best validation accuracy {result.best_score:.2f} -> {out / 'best.ini'}")
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = {}
    for run in args.runs:
        path = Path(run) / "summary.json"
        if not path.is_file():
            raise UsageError(f"{run} has no summary.json")
        doc = json.loads(path.read_text())
        name = doc["strategy"]
        if name in summaries:
            name = f"{name}:{Path(run).name}"
        summaries[name] = EvalSummary.from_dict(doc["summary"])
    emit_report(summaries, args.out, stream=sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facegait", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("prepare", help="extract gait and face clips for every sequence")
    p.add_argument("--manifest", required=True)
    p.add_argument("--keypoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--dump-signal", action="store_true", help="write aspect-ratio CSVs to OUT/signals")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train, evaluate on the test split and report")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--val-split", action="store_true",
                   help="hold out one training sequence per group and checkpoint best epochs")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="random hyperparameter search on a validation hold-out")
    p.add_argument("--config")
    p.add_argument("--space", required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="search")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", help="combine evaluated runs into overall / per-angle tables")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidConfig) as exc:
        print(f"facegait {args.verb}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FaceGaitError as exc:
        print(f"facegait {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
