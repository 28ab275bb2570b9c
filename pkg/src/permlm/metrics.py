"""Confusion matrices and the per-class precision / recall / F1 report."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Label, language_short
from .errors import DataError, ParameterError, ParseError

CLASSES = tuple(Label)
TABLE_COLUMNS = ("Data", "Classes", "Precision", "Recall", "F1 Score", "Weighted Average-F1", "Accuracy")


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # [gold, predicted], indexed by Label value

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(golds: Sequence, preds: Sequence) -> ConfusionMatrix:
    if len(golds) != len(preds):
        raise ParameterError(f"{len(golds)} gold labels but {len(preds)} predictions")
    if not golds:
        raise ParameterError("cannot tally an empty evaluation set")
    counts = np.zeros((len(CLASSES), len(CLASSES)), dtype=np.int64)
    np.add.at(counts, (np.asarray([int(g) for g in golds]), np.asarray([int(p) for p in preds])), 1)
    return ConfusionMatrix(counts)


def _ratio(num, den) -> float:
    return float(num) / float(den) if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    per_class: dict  # Label -> ClassScores
    weighted_avg_f1: float
    accuracy: float


def class_report(cm: ConfusionMatrix) -> MetricsReport:
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise DataError("confusion matrix is empty")
    per_class = {}
    for label in CLASSES:
        c = int(label)
        tp = counts[c, c]
        p = _ratio(tp, counts[:, c].sum())
        r = _ratio(tp, counts[c, :].sum())
        per_class[label] = ClassScores(p, r, f1_score(p, r), int(counts[c, :].sum()))
    weighted = sum(s.support * s.f1 for s in per_class.values()) / total
    return MetricsReport(per_class, float(weighted), float(np.trace(counts) / total))


def evaluate_labels(golds, preds) -> MetricsReport:
    return class_report(confusion(golds, preds))


def round_half_up(value: float, places: int = 2) -> str:
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


def render_table(report: MetricsReport, language: str) -> str:
    """Fixed-width results table: one row per class, aggregates on the first row."""
    rows = []
    for i, label in enumerate(CLASSES):
        s = report.per_class[label]
        rows.append([
            language_short(language) if i == 0 else "",
            label.display(language),
            round_half_up(s.precision),
            round_half_up(s.recall),
            round_half_up(s.f1),
            round_half_up(report.weighted_avg_f1) if i == 0 else "",
            round_half_up(report.accuracy) if i == 0 else "",
        ])  # fmt: skip
    cells = [list(TABLE_COLUMNS)] + rows
    widths = [max(len(r[i]) for r in cells) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in cells]
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> dict:
    """Recover ``{class name: (P, R, F1)}`` plus the aggregates from :func:`render_table`."""
    lines = [line for line in text.splitlines() if line.strip()]
    header = lines[0]
    starts = [header.index(col) for col in TABLE_COLUMNS]
    bounds = list(zip(starts, starts[1:] + [None]))
    out = {"classes": {}}
    for line in lines[1:]:
        cells = [line[a:b].strip() if a < len(line) else "" for a, b in bounds]
        name = cells[1]
        try:
            out["classes"][name] = tuple(float(x) for x in cells[2:5])
            if cells[5]:
                out["weighted_avg_f1"] = float(cells[5])
                out["accuracy"] = float(cells[6])
        except ValueError:
            raise ParseError(f"malformed table row {line!r}") from None
    return out


def report_to_tsv(report: MetricsReport) -> str:
    lines = ["class\tprecision\trecall\tf1\tsupport"]
    for label, s in report.per_class.items():
        lines.append(f"{label.name}\t{s.precision!r}\t{s.recall!r}\t{s.f1!r}\t{s.support}")
    lines.append(f"weighted_avg_f1\t{report.weighted_avg_f1!r}")
    lines.append(f"accuracy\t{report.accuracy!r}")
    return "\n".join(lines) + "\n"


def report_from_tsv(text: str) -> MetricsReport:
    lines = [line for line in text.split("\n") if line]
    if not lines or lines[0] != "class\tprecision\trecall\tf1\tsupport":
        raise ParseError("missing metrics header", 1)
    per_class, aggregates = {}, {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        try:
            if len(fields) == 5:
                per_class[Label[fields[0]]] = ClassScores(float(fields[1]), float(fields[2]), float(fields[3]), int(fields[4]))
            elif len(fields) == 2:
                aggregates[fields[0]] = float(fields[1])
            else:
                raise ValueError
        except (KeyError, ValueError):
            raise ParseError(f"malformed metrics line {line!r}", lineno) from None
    try:
        return MetricsReport(per_class, aggregates["weighted_avg_f1"], aggregates["accuracy"])
    except KeyError as exc:
        raise ParseError(f"missing aggregate {exc.args[0]}") from None


def write_report(path, report: MetricsReport):
    Path(path).write_bytes(report_to_tsv(report).encode("utf-8"))
