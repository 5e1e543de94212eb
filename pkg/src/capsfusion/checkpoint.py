"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CAPSF1"            magic
    u16                  format version
    u32 + bytes          JSON block: config, vocab size, feature statistics
    u32 + bytes          vocabulary, UTF-8, one token per line
    u32                  tensor count, then per tensor (sorted by name):
      u16 + bytes          name
      u8                   ndim
      u32 * ndim           shape
      f8 * prod(shape)     data, row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig
from .encoder import Vocabulary
from .model import CapsFusion
from .pipeline import FeatureStats

MAGIC = b"CAPSF1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: CapsFusion
    vocab: Vocabulary
    stats: FeatureStats

    @property
    def config(self) -> TrainConfig:
        return self.model.config


def dumps(ckpt: Checkpoint) -> bytes:
    meta = {
        "config": ckpt.model.config.to_dict(),
        "vocab_size": ckpt.model.vocab_size,
        "feature_stats": ckpt.stats.to_dict(),
    }
    parts = [MAGIC, struct.pack("<H", VERSION)]
    for block in (json.dumps(meta, sort_keys=True).encode("utf-8"), ckpt.vocab.dumps().encode("utf-8")):
        parts += [struct.pack("<I", len(block)), block]
    arrays = ckpt.model.arrays
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts += [struct.pack("<H", len(encoded)), encoded, struct.pack("<B", arr.ndim)]
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.take(r.unpack("<I")[0]).decode("utf-8"))
        vocab = Vocabulary.loads(r.take(r.unpack("<I")[0]).decode("utf-8"))
        config = TrainConfig.from_dict(meta["config"])
        stats = FeatureStats.from_dict(meta["feature_stats"])
        vocab_size = int(meta["vocab_size"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    arrays = {}
    (count,) = r.unpack("<I")
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="strict")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    if len(vocab) != vocab_size or arrays.get("embedding", np.zeros((0, 0))).shape[0] != vocab_size:
        raise CheckpointError("vocabulary size does not match the embedding table")
    return Checkpoint(CapsFusion(config, vocab_size, arrays), vocab, stats)


def save(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path: str | Path) -> Checkpoint:
    return loads(Path(path).read_bytes())
