import numpy as np
import pytest

from exprnet.errors import ContractError
from exprnet.metrics import (CSV_COLUMNS, ConfusionMatrix, Summary, parse_report_csv,
                             report_table, summarize)


def cm_from(tp, tn, fp, fn, reference=0):
    """Matrix whose outcomes w.r.t. ``reference`` are the given counts."""
    c = np.zeros((2, 2), np.int64)
    o = 1 - reference
    c[reference, reference], c[o, o], c[o, reference], c[reference, o] = tp, tn, fp, fn
    return ConfusionMatrix(c)


def oracle(actual, predicted, ref):
    """Direct scan over the lists, straight from the definitions."""
    tp = sum(a == ref and p == ref for a, p in zip(actual, predicted))
    tn = sum(a != ref and p != ref for a, p in zip(actual, predicted))
    fp = sum(a != ref and p == ref for a, p in zip(actual, predicted))
    fn = sum(a == ref and p != ref for a, p in zip(actual, predicted))
    acc = (tp + tn) / len(actual)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1, acc


def test_update_definition():
    cm = ConfusionMatrix().update(0, 0)
    assert cm.counts[0, 0] == 1 and cm.total == 1
    for k in range(9):
        cm.update(k % 2, (k // 2) % 2)
    assert cm.total == 10


def test_update_rejects_bad_class():
    with pytest.raises(ContractError):
        ConfusionMatrix().update(2, 0)
    with pytest.raises(ContractError):
        ConfusionMatrix().update_batch([0, 1], [0, -1])
    with pytest.raises(ContractError):
        ConfusionMatrix().update_batch([0, 1], [0])


def test_stream_equals_batch(nprng):
    a, p = nprng.integers(0, 2, 300), nprng.integers(0, 2, 300)
    stream = ConfusionMatrix()
    for x, y in zip(a, p):
        stream.update(int(x), int(y))
    assert np.array_equal(stream.counts, ConfusionMatrix.from_pairs(a, p).counts)
    halves = ConfusionMatrix.from_pairs(a[:100], p[:100]).merge(ConfusionMatrix.from_pairs(a[100:], p[100:]))
    assert np.array_equal(halves.counts, stream.counts)


def test_accuracy_example():
    s = summarize(cm_from(2, 2, 1, 1), 0)
    assert s.accuracy == pytest.approx(4 / 6)


def test_precision_recall_f1_example():
    s = summarize(cm_from(9, 0, 1, 9), 0)
    assert s.precision == pytest.approx(0.9)
    assert s.recall == pytest.approx(0.5)
    assert s.f1 == pytest.approx(2 * 0.45 / 1.4)
    assert s.f1 == pytest.approx(0.6429, abs=5e-5)


def test_against_list_oracle(nprng):
    for _ in range(20):
        a, p = nprng.integers(0, 2, 200).tolist(), nprng.integers(0, 2, 200).tolist()
        cm = ConfusionMatrix.from_pairs(a, p)
        for ref in (0, 1):
            s = summarize(cm, ref)
            assert (s.precision, s.recall, s.f1, s.accuracy) == oracle(a, p, ref)


def test_empty_matrix():
    with pytest.raises(ContractError):
        summarize(ConfusionMatrix(), 0)


def test_zero_division_flag():
    s = summarize(cm_from(0, 5, 0, 3), 0)
    assert s.precision == 0 and s.f1 == 0 and s.zero_division
    assert not summarize(cm_from(1, 1, 1, 1), 0).zero_division


def test_transpose_and_symmetry(nprng):
    for _ in range(100):
        cm = ConfusionMatrix(nprng.integers(0, 20, (2, 2)))
        if cm.total == 0:
            continue
        assert summarize(cm, 0).precision == summarize(cm.transpose(), 0).recall
        assert summarize(cm, 0).accuracy == summarize(cm, 1).accuracy
        for ref in (0, 1):
            s = summarize(cm, ref)
            assert all(0 <= v <= 1 for v in (s.precision, s.recall, s.f1, s.accuracy))
            assert (s.f1 == 0) == (s.precision * s.recall == 0)


def test_experiment_7_row():
    happy = Summary(0.91, 0.86, 0.88, 0.89)
    sad = Summary(0.87, 0.92, 0.89, 0.89)
    name = "Experiment 7: With BatchNorm, Dropout, and SE Attention"
    text, csv_text = report_table([(name, happy, sad)])
    lines = text.strip().splitlines()
    assert len(lines) == 3  # header, rule, one row
    assert lines[2].split()[-7:] == ["0.91", "0.86", "0.88", "0.87", "0.92", "0.89", "0.89"]
    assert csv_text.splitlines()[0] == ",".join(CSV_COLUMNS)


def test_csv_round_trip(nprng):
    results = []
    for k in range(8):
        h = Summary(*nprng.random(4))
        s = Summary(*nprng.random(3), h.accuracy)
        results.append((f"Experiment {k + 1}: x, y", h, s))
    _, csv_text = report_table(results)
    rows = parse_report_csv(csv_text)
    assert [r["experiment"] for r in rows] == [n for n, _, _ in results]
    for row, (_, h, s) in zip(rows, results):
        got = [row[c] for c in CSV_COLUMNS[1:]]
        want = [h.precision, h.recall, h.f1, s.precision, s.recall, s.f1, h.accuracy]
        assert got == [round(v, 2) for v in want]
