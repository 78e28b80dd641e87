"""Accuracy, log-loss, confusion matrices and the overall / per-angle reports.

Counts are kept as integers and ratios as :class:`fractions.Fraction` so the
identities between overall, per-angle and confusion-matrix accuracies hold
exactly; floats are produced only at the edges.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyRecordSet, IdOutOfRange, UnwritableOutput

PROB_EPS = 1e-12
ANGLES = (0, 45, 90)

# row order and display names follow the usual results table
MODEL_ORDER = ("face", "gait", "average", "bilinear", "attention_concat", "adaptive")
MODEL_NAMES = {
    "face": "Face feature model",
    "gait": "Gait feature model",
    "average": "Average based fusion",
    "bilinear": "Naive fusion via BLP",
    "attention_concat": "Attention fusion",
    "adaptive": "Adaptive fusion attention",
}


@dataclass
class EvalRecord:
    subject_id: int
    predicted_id: int
    probabilities: np.ndarray
    angle: int = 0
    key: str = ""

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if abs(self.probabilities.sum() - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {self.probabilities.sum()}, not 1")

    @property
    def correct(self) -> bool:
        return self.subject_id == self.predicted_id


@dataclass
class EvalSummary:
    accuracy: float
    log_loss: float
    per_angle: dict[int, float]
    confusion: np.ndarray
    n: int
    correct: int = 0
    per_angle_counts: dict[int, tuple[int, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "log_loss": self.log_loss,
            "per_angle": {str(a): v for a, v in self.per_angle.items()},
            "per_angle_counts": {str(a): list(v) for a, v in self.per_angle_counts.items()},
            "confusion": self.confusion.tolist(),
            "n": self.n,
            "correct": self.correct,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalSummary":
        return cls(
            accuracy=float(d["accuracy"]),
            log_loss=float(d["log_loss"]),
            per_angle={int(a): float(v) for a, v in d["per_angle"].items()},
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            n=int(d["n"]),
            correct=int(d.get("correct", 0)),
            per_angle_counts={int(a): tuple(v) for a, v in d.get("per_angle_counts", {}).items()},
        )


def _nonempty(records):
    records = list(records)
    if not records:
        raise EmptyRecordSet("no evaluation records")
    return records


def accuracy_fraction(records: Sequence[EvalRecord]) -> Fraction:
    records = _nonempty(records)
    return Fraction(100 * sum(r.correct for r in records), len(records))


def accuracy(records: Sequence[EvalRecord]) -> float:
    """Percentage of records whose prediction matches the truth."""
    return float(accuracy_fraction(records))


def log_loss(records: Sequence[EvalRecord]) -> float:
    """Mean negative log-probability of the true class, clamped at 1e-12."""
    records = _nonempty(records)
    p = np.array([r.probabilities[r.subject_id] for r in records])
    return float(-np.mean(np.log(np.clip(p, PROB_EPS, 1.0))))


def confusion_matrix(records: Sequence[EvalRecord], num_classes: int) -> np.ndarray:
    """Counts with rows = true subject, columns = predicted subject."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for r in records:
        if not (0 <= r.subject_id < num_classes and 0 <= r.predicted_id < num_classes):
            raise IdOutOfRange(f"ids ({r.subject_id}, {r.predicted_id}) outside [0, {num_classes})")
        cm[r.subject_id, r.predicted_id] += 1
    return cm


def records_from_predictions(probs: np.ndarray, labels, angles, keys=None) -> list[EvalRecord]:
    probs = np.asarray(probs, dtype=np.float64)
    pred = np.argmax(probs, axis=1)
    keys = keys or [""] * len(labels)
    return [EvalRecord(int(y), int(p), pr, int(a), k) for y, p, pr, a, k in zip(labels, pred, probs, angles, keys)]


def summarize(records: Sequence[EvalRecord], num_classes: int) -> EvalSummary:
    records = _nonempty(records)
    per_angle, counts = {}, {}
    for angle in sorted({r.angle for r in records}):
        sub = [r for r in records if r.angle == angle]
        per_angle[angle] = accuracy(sub)
        counts[angle] = (sum(r.correct for r in sub), len(sub))
    return EvalSummary(
        accuracy=accuracy(records),
        log_loss=log_loss(records),
        per_angle=per_angle,
        confusion=confusion_matrix(records, num_classes),
        n=len(records),
        correct=sum(r.correct for r in records),
        per_angle_counts=counts,
    )


def ordered_models(names: Sequence[str]) -> list[str]:
    known = [m for m in MODEL_ORDER if m in names]
    return known + sorted(n for n in names if n not in MODEL_ORDER)


def overall_table(summaries: Mapping[str, EvalSummary]) -> list[list]:
    rows = [["model", "name", "accuracy", "log_loss", "n"]]
    for m in ordered_models(list(summaries)):
        s = summaries[m]
        rows.append([m, MODEL_NAMES.get(m, m), f"{s.accuracy:.2f}", f"{s.log_loss:.3f}", s.n])
    return rows


def angle_table(summaries: Mapping[str, EvalSummary]) -> list[list]:
    models = ordered_models(list(summaries))
    angles = sorted({a for s in summaries.values() for a in s.per_angle} | set(ANGLES))
    rows = [["angle"] + models]
    for a in angles:
        cells = [f"{summaries[m].per_angle[a]:.2f}" if a in summaries[m].per_angle else "" for m in models]
        rows.append([a] + cells)
    return rows


def render_text(rows: list[list]) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _write_csv(path: Path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def plot_confusion(cm: np.ndarray, path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    k = cm.shape[0]
    fig, ax = plt.subplots(figsize=(max(4, 0.35 * k + 2), max(4, 0.35 * k + 2)))
    im = ax.imshow(cm, cmap="Blues")
    ax.set_xlabel("predicted subject")
    ax.set_ylabel("true subject")
    ax.set_xticks(range(k))
    ax.set_yticks(range(k))
    if title:
        ax.set_title(title)
    for i in range(k):
        for j in range(k):
            if cm[i, j]:
                ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=7,
                        color="white" if cm[i, j] > cm.max() / 2 else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def emit_report(summaries: Mapping[str, EvalSummary], out_dir=None, fmt: str = "csv",
                confusion_model: str | None = None, stream=None) -> str:
    """Write the overall and per-angle tables plus the confusion matrix.

    ``fmt="csv"`` writes ``overall.csv``, ``per_angle.csv``, ``confusion.csv``
    and ``confusion.png`` into ``out_dir``; ``fmt="text"`` only renders. The
    text rendering is always returned and printed to ``stream`` if given. The
    confusion matrix is the adaptive model's when present, else the most
    accurate model's, unless ``confusion_model`` names one.
    """
    if not summaries:
        raise EmptyRecordSet("no summaries to report")
    overall, angles = overall_table(summaries), angle_table(summaries)
    if confusion_model is None:
        confusion_model = "adaptive" if "adaptive" in summaries else max(
            ordered_models(list(summaries)), key=lambda m: summaries[m].accuracy)
    cm = summaries[confusion_model].confusion

    text = io.StringIO()
    text.write("Overall results\n" + render_text(overall) + "\n\n")
    text.write("Accuracy (%) per view angle\n" + render_text(angles) + "\n\n")
    text.write(f"Confusion matrix ({confusion_model}; rows = truth, columns = predicted)\n")
    text.write("\n".join(" ".join(f"{v:3d}" for v in row) for row in cm) + "\n")
    rendered = text.getvalue()

    if fmt == "csv":
        if out_dir is None:
            raise UnwritableOutput("csv format needs an output directory")
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            _write_csv(out / "overall.csv", overall)
            _write_csv(out / "per_angle.csv", angles)
            k = cm.shape[0]
            _write_csv(out / "confusion.csv", [["true\\pred"] + list(range(k))] +
                       [[i] + row.tolist() for i, row in enumerate(cm)])
            plot_confusion(cm, out / "confusion.png", MODEL_NAMES.get(confusion_model, confusion_model))
        except OSError as exc:
            raise UnwritableOutput(f"{out}: {exc}") from exc
    elif fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    if stream is not None:
        stream.write(rendered)
    return rendered


def check_identities(summary: EvalSummary) -> bool:
    """Trace/N equals accuracy and count-weighted angle accuracies equal it too."""
    trace = Fraction(100 * int(np.trace(summary.confusion)), summary.n)
    weighted = sum((Fraction(100 * c, n) * n for c, n in summary.per_angle_counts.values()), Fraction(0)) / summary.n
    return float(trace) == summary.accuracy and weighted == trace and math.isfinite(summary.log_loss)
