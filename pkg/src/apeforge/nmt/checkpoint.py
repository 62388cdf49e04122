"""Binary model checkpoints.

Layout (all integers little-endian uint32 unless noted):
magic bytes, format version, embedding_dim, hidden_dim, two vocab tables
(count, then length-prefixed UTF-8 tokens including the reserved ones),
tensor count, then per tensor: length-prefixed name, ndim, dims, raw
float64 little-endian data, crc32 of the data bytes.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..corpus import Vocab
from .model import Seq2SeqModel

MAGIC = b"APEF-NMT"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def _write_u32(fh, value: int) -> None:
    fh.write(struct.pack("<I", value))


def _write_str(fh, text: str) -> None:
    data = text.encode("utf-8")
    _write_u32(fh, len(data))
    fh.write(data)


def _write_vocab(fh, vocab: Vocab) -> None:
    _write_u32(fh, len(vocab.tokens))
    for tok in vocab.tokens:
        _write_str(fh, tok)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _read_vocab(r: _Reader) -> Vocab:
    tokens = [r.string() for _ in range(r.u32())]
    if tuple(tokens[: len(Vocab.RESERVED)]) != Vocab.RESERVED:
        raise CheckpointError(f"{r.path}: vocab table missing reserved tokens")
    return Vocab(tokens[len(Vocab.RESERVED) :])


def save(model: Seq2SeqModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write_u32(fh, VERSION)
        _write_u32(fh, model.embedding_dim)
        _write_u32(fh, model.hidden_dim)
        _write_vocab(fh, model.src_vocab)
        _write_vocab(fh, model.tgt_vocab)
        names = model.param_names()
        _write_u32(fh, len(names))
        for name in names:
            arr = np.ascontiguousarray(model.params[name], dtype="<f8")
            _write_str(fh, name)
            _write_u32(fh, arr.ndim)
            for d in arr.shape:
                _write_u32(fh, d)
            data = arr.tobytes()
            fh.write(data)
            _write_u32(fh, zlib.crc32(data) & 0xFFFFFFFF)


def load(path: str | Path) -> Seq2SeqModel:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    r = _Reader(raw, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    embedding_dim = r.u32()
    hidden_dim = r.u32()
    src_vocab = _read_vocab(r)
    tgt_vocab = _read_vocab(r)
    params: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.string()
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = r.take(count * 8)
        stored_crc = r.u32()
        if zlib.crc32(data) & 0xFFFFFFFF != stored_crc:
            raise CheckpointError(f"{path}: checksum mismatch in tensor {name}")
        params[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after final tensor")

    model = Seq2SeqModel(
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        embedding_dim=embedding_dim,
        hidden_dim=hidden_dim,
        params=params,
    )
    _validate_dims(model, path)
    return model


def _validate_dims(model: Seq2SeqModel, path) -> None:
    e, h = model.embedding_dim, model.hidden_dim
    expected = {
        "src_emb": (len(model.src_vocab), e),
        "tgt_emb": (len(model.tgt_vocab), e),
        "out_W": (len(model.tgt_vocab), h + 2 * h + e),
        "out_b": (len(model.tgt_vocab),),
        "init_W": (h, 2 * h),
        "att_U": (h, 2 * h),
    }
    for name, shape in expected.items():
        if name not in model.params:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if model.params[name].shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape "
                f"{model.params[name].shape}, expected {shape}"
            )
