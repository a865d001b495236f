"""
T3DN checkpoint codec.

    magic "T3DN" (4 bytes), version u32 = 1, tensor count u32
    per tensor: name length u16, UTF-8 name, rank u8, dims u32 x rank,
                float32 payload (row-major)
    config digest (32 bytes, sha256 of the architecture), epoch u32

All integers little-endian. The metrics snapshot is kept in the sidecar
`<file>.json`, which is optional on load.
"""

import json
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from t3dnet.core.errors import CheckpointMismatchError, FormatError
from t3dnet.core.logging import get_logger
from t3dnet.models.internal import Checkpoint
from t3dnet.storage.files import atomic_write_bytes, atomic_write_json

logger = get_logger(__name__)

MAGIC = b"T3DN"
VERSION = 1
DIGEST_SIZE = 32

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    if len(ckpt.digest) != DIGEST_SIZE:
        raise FormatError(f"config digest must be {DIGEST_SIZE} bytes, got {len(ckpt.digest)}")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        array = np.asarray(ckpt.tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(_U16.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U8.pack(array.ndim))
        parts.extend(_U32.pack(d) for d in array.shape)
        parts.append(array.tobytes())
    parts.append(ckpt.digest)
    parts.append(_U32.pack(ckpt.epoch))
    return b"".join(parts)


class _Reader:
    """Cursor over a checkpoint payload that reports offsets on failure."""

    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise FormatError(
                f"truncated checkpoint reading {what}: expected {size} bytes, "
                f"{len(self.payload) - self.offset} available",
                offset=self.offset,
            )
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct, what: str) -> int:
        return fmt.unpack(self.take(fmt.size, what))[0]


def decode_checkpoint(payload: bytes) -> Checkpoint:
    reader = _Reader(payload)
    if payload[:4] != MAGIC:
        raise FormatError(f"bad magic {payload[:4]!r}, expected {MAGIC!r}", offset=0)
    reader.take(4, "magic")
    version = reader.unpack(_U32, "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    count = reader.unpack(_U32, "tensor count")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        start = reader.offset
        name_len = reader.unpack(_U16, "name length")
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8", offset=start + 2) from None
        if name in tensors:
            raise FormatError(f"duplicate tensor '{name}'", offset=start)
        rank = reader.unpack(_U8, "rank")
        shape = tuple(reader.unpack(_U32, "dimension") for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = reader.take(size * 4, f"data of '{name}'")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)

    digest = reader.take(DIGEST_SIZE, "config digest")
    epoch = reader.unpack(_U32, "epoch")
    if reader.offset != len(payload):
        raise FormatError(
            f"trailing data: expected {reader.offset} bytes, got {len(payload)}", offset=reader.offset
        )
    return Checkpoint(tensors=tensors, digest=digest, epoch=epoch)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(ckpt))
    atomic_write_json(sidecar_path(path), {
        "architecture": ckpt.architecture,
        "digest": ckpt.digest.hex(),
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics,
        "tensors": len(ckpt.tensors),
    })
    logger.info("Checkpoint saved", path=str(path), epoch=ckpt.epoch, tensors=len(ckpt.tensors))
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint (and its sidecar when present).

    Raises:
        FormatError: bad magic/version, truncation (with byte offset)
    """
    path = Path(path)
    ckpt = decode_checkpoint(path.read_bytes())
    sidecar = sidecar_path(path)
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
            ckpt.metrics = dict(meta.get("metrics", {}))
            ckpt.architecture = str(meta.get("architecture", ""))
        except (json.JSONDecodeError, OSError) as e:
            logger.warning("Checkpoint sidecar unreadable", path=str(sidecar), error=str(e))
    return ckpt


def verify_digest(ckpt: Checkpoint, expected: bytes, allow_mismatch: bool = False, source: str = "") -> None:
    """Raise CheckpointMismatchError unless the digests agree (or the mismatch is allowed)."""
    if ckpt.digest == expected:
        return
    message = (
        f"checkpoint{' ' + source if source else ''} was written for a different architecture "
        f"(digest {ckpt.digest.hex()[:12]}, expected {expected.hex()[:12]})"
    )
    if allow_mismatch:
        logger.warning("Checkpoint digest mismatch ignored", source=source)
        return
    raise CheckpointMismatchError(message)
