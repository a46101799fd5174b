"""Versioned binary checkpoint container.

Layout (all integers little-endian): magic ``PBG2P``, format version, a JSON
config block, a JSON vocabulary block, then named tensor records
(name, dtype tag ``f32``, shape, raw little-endian payload, CRC-32 of the
payload).  Loading a freshly saved model is bitwise lossless.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, Parameters
from .vocab import Pinyin, VocabMap

MAGIC = b"PBG2P"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass(frozen=True)
class Checkpoint:
    params: Parameters
    config: ModelConfig
    vocab: VocabMap
    kind: str = "mlm"
    extra: dict | None = None


def _vocab_to_json(vocab: VocabMap) -> dict:
    return {
        "base_tokens": list(vocab.base_tokens),
        "ncmcs": [[scpc, str(p)] for scpc, p in vocab.ncmcs],
    }


def _vocab_from_json(obj: dict) -> VocabMap:
    return VocabMap(
        base_tokens=tuple(obj["base_tokens"]),
        ncmcs=tuple((scpc, Pinyin.parse(p)) for scpc, p in obj["ncmcs"]),
    )


def save(path, params: Parameters, config: ModelConfig, vocab: VocabMap,
         kind: str = "mlm", extra: dict | None = None) -> None:
    for name, tensor in params.items():
        if tensor.dtype != np.float32:
            raise CheckpointError(f"tensor {name!r} is {tensor.dtype}, container stores f32 only")
    header = {"kind": kind, "model": config.to_dict(), "extra": extra or {}}
    config_blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    vocab_blob = json.dumps(_vocab_to_json(vocab), ensure_ascii=False).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(vocab_blob)))
        fh.write(vocab_blob)
        fh.write(struct.pack("<I", len(params.tensors)))
        for name, tensor in params.items():
            payload = np.ascontiguousarray(tensor.astype("<f4", copy=False)).tobytes()
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", 3))
            fh.write(b"f32")
            fh.write(struct.pack("<B", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path) -> Checkpoint:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a model checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")

    (n,) = r.unpack("<I")
    header = json.loads(r.take(n).decode("utf-8"))
    (n,) = r.unpack("<I")
    vocab = _vocab_from_json(json.loads(r.take(n).decode("utf-8")))
    config = ModelConfig.from_dict(header["model"])

    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (dtype_len,) = r.unpack("<B")
        dtype_tag = r.take(dtype_len).decode("ascii")
        if dtype_tag != "f32":
            raise CheckpointError(f"{path}: tensor {name!r} has unsupported dtype {dtype_tag!r}")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4
        payload = r.take(nbytes)
        (crc,) = r.unpack("<I")
        if zlib.crc32(payload) != crc:
            raise CheckpointError(f"{path}: checksum mismatch in tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes after last record")

    return Checkpoint(params=Parameters(tensors), config=config, vocab=vocab,
                      kind=header.get("kind", "mlm"), extra=header.get("extra") or {})
