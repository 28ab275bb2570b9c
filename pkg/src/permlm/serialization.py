"""Bit-exact binary model files.

Layout (all integers little-endian)::

    b"PLMX"                          magic
    u32 version
    u64 n_bytes, n_bytes of UTF-8    metadata, "key=value\\n" lines
    u32 n_tensors
    per tensor:
        u32 name length, UTF-8 name
        u32 rank, rank x u64 dims
        float64 LE data, row-major
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError, VocabMismatchError
from .model import ModelConfig, TransformerWeights
from .numerics import Tensor
from .tokenizer import Vocab

MAGIC = b"PLMX"
VERSION = 1
_F64 = np.dtype("<f8")


def dump_bytes(metadata: dict, tensors: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    lines = []
    for key, value in metadata.items():
        key, value = str(key), str(value)
        if "=" in key or "\n" in key + value:
            raise DataError(f"metadata entry {key!r} cannot be serialized")
        lines.append(f"{key}={value}\n")
    meta = "".join(lines).encode("utf-8")
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(tensors)))
    for name, array in tensors.items():
        array = np.asarray(array, dtype=_F64, order="C")
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<I", array.ndim))
        buf.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        buf.write(array.tobytes(order="C"))
    return buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ParseError(f"model file truncated at byte {self.pos}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_bytes(raw: bytes) -> tuple[dict, dict]:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise ParseError("not a PLMX model file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ParseError(f"unsupported model file version {version}")
    (n_meta,) = r.unpack("<Q")
    metadata = {}
    for line in r.take(n_meta).decode("utf-8").split("\n")[:-1]:
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"bad metadata line {line!r}")
        metadata[key] = value
    (n_tensors,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_tensors):
        (n_name,) = r.unpack("<I")
        name = r.take(n_name).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(r.take(count * 8), dtype=_F64).reshape(dims).astype(np.float64)
    if r.pos != len(raw):
        raise ParseError(f"{len(raw) - r.pos} trailing bytes after last tensor")
    return metadata, tensors


@contextmanager
def atomic_write(path):
    """Yield a binary file handle; the target appears only if the block completes."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_bytes_atomic(path, data: bytes):
    with atomic_write(path) as fh:
        fh.write(data)


def model_metadata(weights: TransformerWeights, vocab: Vocab, **extra) -> dict:
    meta = {f"model.{k}": repr(v) for k, v in weights.config.to_dict().items()}
    meta["vocab.hash"] = vocab.hash()
    meta["vocab.size"] = len(vocab)
    meta["vocab.level"] = vocab.level
    meta.update(extra)
    return meta


def save_model(path, weights: TransformerWeights, vocab: Vocab, **extra):
    if weights.config.vocab_size != len(vocab):
        raise VocabMismatchError(f"model has vocab_size={weights.config.vocab_size}, vocab has {len(vocab)}")
    tensors = {name: p.data for name, p in weights.params.items()}
    write_bytes_atomic(path, dump_bytes(model_metadata(weights, vocab, **extra), tensors))


def read_metadata(path) -> dict:
    return parse_bytes(Path(path).read_bytes())[0]


def load_model(path, vocab: Vocab | None = None) -> tuple[TransformerWeights, dict]:
    """Read a model file; if ``vocab`` is given its hash must match the file's."""
    metadata, tensors = parse_bytes(Path(path).read_bytes())
    if vocab is not None and metadata.get("vocab.hash") != vocab.hash():
        raise VocabMismatchError(f"{path}: vocabulary hash does not match the supplied vocab")
    prefix = "model."
    config = ModelConfig.from_dict({k[len(prefix):]: v for k, v in metadata.items() if k.startswith(prefix)})
    params = {name: Tensor(array, requires_grad=True, name=name) for name, array in tensors.items()}
    return TransformerWeights(config, params), metadata
