"""Confusion matrices and the accuracy / precision / recall / F1 suite."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

CSV_COLUMNS = ("experiment", "happy_precision", "happy_recall", "happy_f1",
               "sad_precision", "sad_recall", "sad_f1", "accuracy")


@dataclass
class ConfusionMatrix:
    """2x2 counts indexed ``counts[actual][predicted]``."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), dtype=np.int64))

    def update(self, actual: int, predicted: int) -> "ConfusionMatrix":
        if actual not in (0, 1) or predicted not in (0, 1):
            raise ContractError(f"classes must be 0 or 1, got ({actual}, {predicted})")
        self.counts[actual, predicted] += 1
        return self

    def update_batch(self, actual, predicted) -> "ConfusionMatrix":
        actual, predicted = np.asarray(actual), np.asarray(predicted)
        if actual.shape != predicted.shape:
            raise ContractError("actual and predicted lengths differ")
        if actual.size and (min(actual.min(), predicted.min()) < 0
                            or max(actual.max(), predicted.max()) > 1):
            raise ContractError("classes must be 0 or 1")
        np.add.at(self.counts, (actual, predicted), 1)
        return self

    @classmethod
    def from_pairs(cls, actual, predicted) -> "ConfusionMatrix":
        return cls().update_batch(actual, predicted)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def transpose(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts.T.copy())

    def outcomes(self, reference: int):
        """(TP, TN, FP, FN) treating ``reference`` as the positive class."""
        other = 1 - reference
        c = self.counts
        return (int(c[reference, reference]), int(c[other, other]),
                int(c[other, reference]), int(c[reference, other]))


@dataclass
class Summary:
    precision: float
    recall: float
    f1: float
    accuracy: float
    zero_division: bool = False


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def summarize(cm: ConfusionMatrix, reference_class: int) -> Summary:
    """Accuracy, precision, recall and F1 for ``reference_class``.

    A zero denominator yields 0 and sets ``zero_division``.
    """
    if cm.total < 1:
        raise ContractError("cannot summarize an empty confusion matrix")
    tp, tn, fp, fn = cm.outcomes(reference_class)
    accuracy = (tp + tn) / (tp + tn + fp + fn)
    precision, z1 = _ratio(tp, tp + fp)
    recall, z2 = _ratio(tp, tp + fn)
    f1, z3 = _ratio(2 * precision * recall, precision + recall)
    return Summary(precision, recall, f1, accuracy, z1 or z2 or z3)


def report_rows(results):
    """``[(name, happy Summary, sad Summary), ...]`` to CSV-ordered rows."""
    rows = []
    for name, happy, sad in results:
        rows.append([name, happy.precision, happy.recall, happy.f1,
                     sad.precision, sad.recall, sad.f1, happy.accuracy])
    return rows


def report_table(results):
    """Render per-experiment summaries as ``(aligned text, csv text)``.

    ``results`` is a sequence of ``(experiment name, happy summary, sad
    summary)``; numbers are rounded to two decimals for display.
    """
    rows = report_rows(results)
    fmt = [[r[0]] + [f"{v:.2f}" for v in r[1:]] for r in rows]
    header = ["Experiment", "Happy P", "Happy R", "Happy F1",
              "Sad P", "Sad R", "Sad F1", "Accuracy"]
    widths = [max(len(header[i]), *(len(r[i]) for r in fmt)) for i in range(len(header))]

    def line(cells):
        first = cells[0].ljust(widths[0])
        return "  ".join([first] + [c.rjust(w) for c, w in zip(cells[1:], widths[1:])])

    text = "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in fmt]) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(fmt)
    return text, buf.getvalue()


def parse_report_csv(text: str):
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected columns {reader.fieldnames}")
    return [{k: (v if k == "experiment" else float(v)) for k, v in row.items()} for row in reader]
