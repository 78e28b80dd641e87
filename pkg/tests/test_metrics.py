import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facegait.errors import EmptyRecordSet, IdOutOfRange
from facegait.metrics import (
    MODEL_ORDER,
    EvalRecord,
    EvalSummary,
    accuracy,
    accuracy_fraction,
    angle_table,
    check_identities,
    confusion_matrix,
    emit_report,
    log_loss,
    overall_table,
    records_from_predictions,
    summarize,
)


def rec(true, pred, k=20, p_true=None, angle=0):
    probs = np.zeros(k)
    if p_true is None:
        probs[pred] = 1.0
    else:
        probs[true] = p_true
        rest = [i for i in range(k) if i != true]
        probs[rest] = (1 - p_true) / len(rest)
    return EvalRecord(true, pred, probs, angle)


def test_eighteen_of_twenty():
    records = [rec(i, i) for i in range(18)] + [rec(18, 0), rec(19, 0)]
    assert accuracy(records) == 90.0
    assert accuracy_fraction(records) == Fraction(90)


def test_all_and_none_correct():
    assert accuracy([rec(i, i) for i in range(5)]) == 100.0
    assert accuracy([rec(i, (i + 1) % 5) for i in range(5)]) == 0.0


def test_empty_records():
    with pytest.raises(EmptyRecordSet):
        accuracy([])
    with pytest.raises(EmptyRecordSet):
        log_loss([])


def test_log_loss_values():
    assert log_loss([rec(i, i) for i in range(4)]) == 0.0
    uniform = [EvalRecord(i, 0, np.full(20, 1 / 20)) for i in range(20)]
    assert log_loss(uniform) == pytest.approx(math.log(20), abs=1e-9)
    two = [rec(0, 0, 2, p_true=0.8), rec(1, 1, 2, p_true=0.5)]
    assert log_loss(two) == pytest.approx(0.4581453659370775, abs=1e-12)
    assert log_loss(two) == pytest.approx(-(math.log(0.8) + math.log(0.5)) / 2, abs=1e-15)


def test_log_loss_clamped():
    assert log_loss([rec(0, 1, 2)]) == pytest.approx(-math.log(1e-12))


def test_probabilities_must_sum_to_one():
    with pytest.raises(ValueError):
        EvalRecord(0, 0, [0.5, 0.2])


def test_confusion_examples():
    cm = confusion_matrix([rec(i % 3, i % 3) for i in range(7)], 3)
    assert np.array_equal(cm, np.diag([3, 2, 2]))
    cm = confusion_matrix([rec(1, 14)], 20)
    assert cm[1, 14] == 1 and cm.sum() == 1
    cm = confusion_matrix([rec(0, 0), rec(1, 0), rec(2, 0)], 4)
    assert not cm[:, 3].any() and not cm[:, 1].any()
    with pytest.raises(IdOutOfRange):
        confusion_matrix([rec(0, 5, 6)], 5)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.sampled_from([0, 45, 90])),
                min_size=1, max_size=60))
def test_identities_hold_exactly(rows):
    records = [rec(t, p, 6, angle=a) for t, p, a in rows]
    s = summarize(records, 6)
    assert check_identities(s)
    assert Fraction(100 * int(np.trace(s.confusion)), s.n) == accuracy_fraction(records)
    assert s.confusion.sum(axis=1).tolist() == [sum(1 for t, _, _ in rows if t == k) for k in range(6)]


def test_records_from_predictions():
    probs = np.array([[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]])
    records = records_from_predictions(probs, [1, 1, 0], [0, 45, 90])
    assert [r.predicted_id for r in records] == [1, 0, 0]
    assert accuracy(records) == pytest.approx(200 / 3)


def _summaries(models):
    out = {}
    for j, m in enumerate(models):
        records = [rec(i % 4, (i + j) % 4 if i % 3 == 0 else i % 4, 4, angle=(0, 45, 90)[i % 3])
                   for i in range(24)]
        out[m] = summarize(records, 4)
    return out


def test_tables_follow_model_order():
    s = _summaries(list(reversed(MODEL_ORDER)))
    table = overall_table(s)
    assert len(table) == 7
    assert [r[0] for r in table[1:]] == list(MODEL_ORDER)
    grid = angle_table({m: s[m] for m in ("face", "gait", "average", "adaptive")})
    assert len(grid) == 4 and all(len(r) == 5 for r in grid)
    assert [r[0] for r in grid[1:]] == [0, 45, 90]


def test_single_strategy_report(tmp_path):
    s = _summaries(["gait"])
    text = emit_report(s, tmp_path, fmt="csv")
    assert "Gait feature model" in text
    overall = (tmp_path / "overall.csv").read_text().splitlines()
    assert len(overall) == 2
    for name in ("per_angle.csv", "confusion.csv", "confusion.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_report_text_only_and_adaptive_confusion():
    s = _summaries(["face", "adaptive"])
    text = emit_report(s, fmt="text")
    assert "Confusion matrix (adaptive" in text


def test_summary_roundtrip():
    s = _summaries(["face"])["face"]
    back = EvalSummary.from_dict(s.to_dict())
    assert back.accuracy == s.accuracy and np.array_equal(back.confusion, s.confusion)
    assert back.per_angle == s.per_angle and back.per_angle_counts == s.per_angle_counts
    assert check_identities(back)
