"""Labeled TSV ingestion, label normalization, split statistics and
Krippendorff's alpha for nominal annotations."""

from __future__ import annotations

import enum
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, LabelError, ParameterError, ParseError

log = logging.getLogger(__name__)

LANGUAGES = ("tamil-english", "malayalam-english")


class Label(enum.IntEnum):
    """The five sentiment classes, in results-table row order."""

    MixedFeelings = 0
    Negative = 1
    Positive = 2
    OtherLanguage = 3
    UnknownState = 4

    def display(self, language: str | None = None) -> str:
        if self is Label.OtherLanguage:
            return f"not-{language_short(language)}" if language else "not-in-language"
        return _DISPLAY[self]


_DISPLAY = {
    Label.MixedFeelings: "Mixed feelings",
    Label.Negative: "Negative",
    Label.Positive: "Positive",
    Label.UnknownState: "unknown state",
}

_ALIASES = {
    "positive": Label.Positive,
    "negative": Label.Negative,
    "mixed feelings": Label.MixedFeelings,
    "mixedfeelings": Label.MixedFeelings,
    "unknown state": Label.UnknownState,
    "unknownstate": Label.UnknownState,
    "neutral": Label.UnknownState,
    "not-tamil": Label.OtherLanguage,
    "not tamil": Label.OtherLanguage,
    "not-malayalam": Label.OtherLanguage,
    "not malayalam": Label.OtherLanguage,
    "otherlanguage": Label.OtherLanguage,
}


def language_short(language: str) -> str:
    """``"tamil-english"`` -> ``"Tamil"``; unknown tags pass through."""
    return {"tamil-english": "Tamil", "malayalam-english": "malayalam"}.get(language, language)


def normalize_label(raw: str) -> Label:
    key = re.sub(r"[\s_]+", " ", raw.strip().lower())
    try:
        label = _ALIASES[key]
    except KeyError:
        raise LabelError(raw) from None
    if key == "neutral":
        log.warning("label 'neutral' mapped to UnknownState")
    return label


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: Label

    def __post_init__(self):
        if not self.text.strip():
            raise DataError("example text is empty")


@dataclass(frozen=True)
class SplitDataset:
    train: tuple[LabeledExample, ...]
    validation: tuple[LabeledExample, ...]
    test: tuple[LabeledExample, ...]
    language: str

    def __post_init__(self):
        if self.language not in LANGUAGES:
            raise ParameterError(f"language must be one of {LANGUAGES}, got {self.language!r}")

    def splits(self) -> dict:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def sanitize_text(text: str) -> str:
    """Replace embedded tabs and newlines with single spaces."""
    clean = re.sub(r"[\t\r\n]+", " ", text)
    if clean != text:
        log.info("sanitized control whitespace in text %r", text[:40])
    return clean


def parse_tsv_lines(lines: Iterable[str]) -> list[LabeledExample]:
    examples = []
    seen_content = False
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if not seen_content:
            seen_content = True
            if [f.strip().lower() for f in fields] == ["text", "category"]:
                continue
        if len(fields) != 2:
            raise ParseError(f"expected 2 tab-separated fields, found {len(fields)}", lineno)
        text, raw_label = fields
        try:
            label = normalize_label(raw_label)
        except LabelError as exc:
            raise LabelError(exc.raw, lineno) from None
        if not text.strip():
            raise ParseError("empty text field", lineno)
        examples.append(LabeledExample(text, label))
    return examples


def load_tsv(path, language: str | None = None) -> list[LabeledExample]:
    """Read ``text<TAB>label`` lines (LF or CRLF, optional header)."""
    if language is not None and language not in LANGUAGES:
        raise ParameterError(f"language must be one of {LANGUAGES}, got {language!r}")
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from None
    return parse_tsv_lines(text.split("\n"))


def write_tsv(path, examples: Iterable[LabeledExample], header: bool = True):
    lines = ["text\tcategory"] if header else []
    lines += [f"{sanitize_text(e.text)}\t{e.label.name}" for e in examples]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def load_splits(train_path, validation_path, test_path, language: str) -> SplitDataset:
    return SplitDataset(
        tuple(load_tsv(train_path, language)),
        tuple(load_tsv(validation_path, language)),
        tuple(load_tsv(test_path, language)),
        language,
    )


def class_counts(examples: Iterable[LabeledExample]) -> dict:
    counts = Counter(e.label for e in examples)
    return {label: counts.get(label, 0) for label in Label}


@dataclass(frozen=True)
class SplitStats:
    language: str
    counts: dict  # split name -> {Label: count}

    def totals(self) -> dict:
        return {split: sum(c.values()) for split, c in self.counts.items()}

    def render(self) -> str:
        headers = ["Split", "Total"] + [label.display(self.language) for label in Label]
        rows = [[split, f"{sum(c.values()):,}"] + [f"{c[label]:,}" for label in Label] for split, c in self.counts.items()]
        widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
        fmt = lambda r: "| " + " | ".join(cell.ljust(w) for cell, w in zip(r, widths)) + " |"  # noqa: E731
        rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        title = f"{self.language}: " + " / ".join(f"{v:,}" for v in self.totals().values())
        return "\n".join([title, rule, fmt(headers), rule, *map(fmt, rows), rule])


def split_stats(dataset: SplitDataset) -> SplitStats:
    return SplitStats(dataset.language, {name: class_counts(split) for name, split in dataset.splits().items()})


# --------------------------------------------------------------------------
# agreement
# --------------------------------------------------------------------------


def _is_missing(code) -> bool:
    return code is None or (isinstance(code, str) and not code.strip()) or (isinstance(code, float) and np.isnan(code))


def coincidence_matrix(matrix: Sequence[Sequence]) -> tuple[list, np.ndarray]:
    """Krippendorff coincidences over items with at least two codes."""
    codes = sorted({c for row in matrix for c in row if not _is_missing(c)}, key=repr)
    index = {c: i for i, c in enumerate(codes)}
    o = np.zeros((len(codes), len(codes)))
    for row in matrix:
        present = [index[c] for c in row if not _is_missing(c)]
        m = len(present)
        if m < 2:
            continue
        counts = np.bincount(present, minlength=len(codes)).astype(np.float64)
        o += (np.outer(counts, counts) - np.diag(counts)) / (m - 1)
    return codes, o


def krippendorff_alpha(matrix: Sequence[Sequence]) -> float:
    """Nominal Krippendorff's alpha for an items x annotators grid.

    Missing cells are ``None``, ``""`` or NaN.  Items with fewer than two codes
    are not pairable and drop out.
    """
    _, o = coincidence_matrix(matrix)
    n = o.sum()
    if n < 2:
        raise DataError("no item carries two or more codes; alpha is undefined")
    n_c = o.sum(axis=1)
    observed = (n - np.trace(o)) / n
    expected = (n * n - (n_c * n_c).sum()) / (n * (n - 1))
    if expected == 0:
        return 1.0
    return float(1.0 - observed / expected)


def load_annotations(path) -> list[list[str | None]]:
    """One item per row, one annotator per tab-separated column; empty = missing."""
    text = Path(path).read_bytes().decode("utf-8")
    rows = []
    for line in text.split("\n"):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        rows.append([cell.strip() or None for cell in line.split("\t")])
    return rows
