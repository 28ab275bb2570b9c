"""Character-level (or whitespace word-level) vocabulary and encoding.

Text is split at the level of Unicode code points, which keeps romanized and
native-script code-mixed text free of OOV blowups without a subword model.
Sequences end with ``SEP, CLS`` so the classifier can pool the final position.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ParameterError, ParseError

PAD, UNK, SEP, CLS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<sep>", "<cls>")
N_SPECIAL = len(SPECIALS)

_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_UNESCAPES = {"\\": "\\", "n": "\n", "r": "\r", "t": "\t"}


def split_tokens(text: str, level: str = "char") -> list[str]:
    if level == "char":
        return list(text)
    if level == "word":
        return text.split()
    raise ParameterError(f"unknown tokenization level {level!r}")


def join_tokens(tokens: Sequence[str], level: str = "char") -> str:
    return "".join(tokens) if level == "char" else " ".join(tokens)


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]  # non-special tokens, id = index + N_SPECIAL
    level: str = "char"
    token_to_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mapping = {tok: i + N_SPECIAL for i, tok in enumerate(self.tokens)}
        if len(mapping) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "token_to_id", mapping)

    @property
    def id_to_token(self) -> tuple[str, ...]:
        return SPECIALS + self.tokens

    def __len__(self):
        return N_SPECIAL + len(self.tokens)

    @property
    def size(self) -> int:
        return len(self)

    def to_text(self) -> str:
        return "".join(escape_token(t) + "\n" for t in self.tokens)

    def hash(self) -> str:
        """SHA-256 of the serialized vocabulary (level included)."""
        h = hashlib.sha256()
        h.update(self.level.encode("utf-8") + b"\0")
        h.update(self.to_text().encode("utf-8"))
        return h.hexdigest()

    def save(self, path):
        Path(path).write_bytes(self.to_text().encode("utf-8"))

    @classmethod
    def load(cls, path, level: str = "char") -> "Vocab":
        raw = Path(path).read_bytes().decode("utf-8")
        if raw and not raw.endswith("\n"):
            raise ParseError("vocab file must end with a newline")
        lines = raw.split("\n")[:-1] if raw else []
        return cls(tuple(unescape_token(line, i + 1) for i, line in enumerate(lines)), level=level)


def escape_token(token: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in token)


def unescape_token(line: str, lineno: int | None = None) -> str:
    out = []
    chars = iter(line)
    for ch in chars:
        if ch == "\\":
            nxt = next(chars, None)
            if nxt not in _UNESCAPES:
                raise ParseError(f"bad escape sequence \\{nxt or ''}", lineno)
            out.append(_UNESCAPES[nxt])
        else:
            out.append(ch)
    return "".join(out)


def build_vocab(corpus: Iterable[str], max_size: int = 5000, min_freq: int = 1, level: str = "char") -> Vocab:
    """Rank tokens by frequency (desc), breaking ties by first occurrence."""
    if max_size < N_SPECIAL + 1:
        raise ParameterError(f"max_size must be at least {N_SPECIAL + 1}, got {max_size}")
    counts: Counter = Counter()
    first_seen: dict[str, int] = {}
    n_texts = 0
    for text in corpus:
        n_texts += 1
        for tok in split_tokens(text, level):
            counts[tok] += 1
            first_seen.setdefault(tok, len(first_seen))
    if n_texts == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted((t for t in counts if counts[t] >= min_freq), key=lambda t: (-counts[t], first_seen[t]))
    return Vocab(tuple(ranked[: max_size - N_SPECIAL]), level=level)


@dataclass(frozen=True)
class Encoded:
    ids: tuple[int, ...]
    length: int
    attention_pad_mask: tuple[bool, ...]


def encode(text: str, vocab: Vocab, max_len: int, add_special: bool = True) -> Encoded:
    if max_len < 3:
        raise ParameterError(f"max_len must be at least 3, got {max_len}")
    lookup = vocab.token_to_id
    body = [lookup.get(tok, UNK) for tok in split_tokens(text, vocab.level)]
    if add_special:
        ids = body[: max_len - 2] + [SEP, CLS]
    else:
        ids = body[:max_len]
    return Encoded(tuple(ids), len(ids), (True,) * len(ids))


def decode(ids: Iterable[int], vocab: Vocab) -> str:
    table = vocab.id_to_token
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(table):
            raise IndexError(f"token id {i} outside vocabulary of size {len(table)}")
        if i >= N_SPECIAL:
            out.append(table[i])
    return join_tokens(out, vocab.level)


def pad_batch(encoded: Sequence[Encoded]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to the longest row; returns ``(ids, mask)`` with mask true on real tokens."""
    if not encoded:
        raise DataError("cannot pad an empty batch")
    width = max(e.length for e in encoded)
    ids = np.full((len(encoded), width), PAD, dtype=np.int64)
    mask = np.zeros((len(encoded), width), dtype=bool)
    for row, e in enumerate(encoded):
        ids[row, : e.length] = e.ids[: e.length]
        mask[row, : e.length] = True
    return ids, mask
