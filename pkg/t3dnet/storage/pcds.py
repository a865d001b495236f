"""
PCDS: little-endian binary point-cloud dataset format.

    magic "PCDS" (4 bytes)
    version u32 = 1
    num_classes u32
    points_per_cloud u32
    num_samples u32
    num_samples x { label u32, points_per_cloud x 3 float32 }

Train samples are stored first, then test; the split sizes and class names
live in the sidecar manifest `<file>.json` (see DatasetManifest).
"""

import struct
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np
from pydantic import ValidationError

from t3dnet.core.errors import ConfigError, FormatError
from t3dnet.core.logging import get_logger
from t3dnet.models.internal import Dataset, DatasetManifest, Split
from t3dnet.storage.files import atomic_write_bytes, atomic_write_json

logger = get_logger(__name__)

MAGIC = b"PCDS"
VERSION = 1
HEADER = struct.Struct("<4sIIII")


class PcdsHeader(NamedTuple):
    version: int
    num_classes: int
    points_per_cloud: int
    num_samples: int


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _record_dtype(points_per_cloud: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("points", "<f4", (points_per_cloud, 3))])


def encode_dataset(dataset: Dataset) -> bytes:
    ppc = dataset.points_per_cloud
    points = np.concatenate([dataset.train.points, dataset.test.points], axis=0)
    labels = np.concatenate([dataset.train.labels, dataset.test.labels], axis=0)
    if points.shape[1:] != (ppc, 3):
        raise ConfigError(f"points shape {points.shape[1:]} does not match points_per_cloud={ppc}")
    records = np.empty(labels.shape[0], dtype=_record_dtype(ppc))
    records["label"] = labels
    records["points"] = points
    header = HEADER.pack(MAGIC, VERSION, dataset.num_classes, ppc, labels.shape[0])
    return header + records.tobytes()


def decode_header(payload: bytes) -> PcdsHeader:
    if len(payload) < 4 or payload[:4] != MAGIC:
        raise FormatError(f"bad magic {payload[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(payload) < HEADER.size:
        raise FormatError(
            f"truncated header: expected {HEADER.size} bytes, got {len(payload)}", offset=len(payload)
        )
    _, version, num_classes, ppc, num_samples = HEADER.unpack_from(payload, 0)
    if version != VERSION:
        raise FormatError(f"unsupported PCDS version {version}", offset=4)
    if num_classes < 1:
        raise FormatError("num_classes must be >= 1", offset=8)
    if ppc < 1:
        raise FormatError("points_per_cloud must be >= 1", offset=12)
    return PcdsHeader(version, num_classes, ppc, num_samples)


def decode_records(payload: bytes, header: PcdsHeader) -> np.ndarray:
    dtype = _record_dtype(header.points_per_cloud)
    expected = HEADER.size + header.num_samples * dtype.itemsize
    actual = len(payload)
    if actual < expected:
        complete = (actual - HEADER.size) // dtype.itemsize
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {actual} "
            f"(sample {complete} of {header.num_samples} incomplete)",
            offset=HEADER.size + complete * dtype.itemsize,
        )
    if actual > expected:
        raise FormatError(f"trailing data: expected {expected} bytes, got {actual}", offset=expected)
    records = np.frombuffer(payload, dtype=dtype, count=header.num_samples, offset=HEADER.size)
    bad = np.nonzero(records["label"] >= header.num_classes)[0]
    if bad.size:
        raise FormatError(
            f"label {int(records['label'][bad[0]])} >= num_classes {header.num_classes}",
            offset=HEADER.size + int(bad[0]) * dtype.itemsize,
        )
    return records


def write_dataset(
    dataset: Dataset,
    path: Union[str, Path],
    manifest: Optional[DatasetManifest] = None,
) -> Path:
    """
    Write the PCDS file and its sidecar manifest.

    Args:
        dataset: Dataset to persist
        path: Target .pcds path
        manifest: Extra manifest fields (generator parameters); counts are overwritten

    Returns:
        Path of the PCDS file
    """
    path = Path(path)
    base = manifest or DatasetManifest(
        name=dataset.name,
        class_names=dataset.class_names,
        points_per_cloud=dataset.points_per_cloud,
        seed=dataset.seed,
        num_train=len(dataset.train),
        num_test=len(dataset.test),
    )
    sidecar = base.model_copy(update={
        "name": dataset.name,
        "class_names": list(dataset.class_names),
        "points_per_cloud": dataset.points_per_cloud,
        "seed": dataset.seed,
        "num_train": len(dataset.train),
        "num_test": len(dataset.test),
    })
    atomic_write_bytes(path, encode_dataset(dataset))
    atomic_write_json(manifest_path(path), sidecar)
    logger.info(
        "Dataset written",
        path=str(path),
        classes=dataset.num_classes,
        train=len(dataset.train),
        test=len(dataset.test),
    )
    return path


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    sidecar = manifest_path(path)
    try:
        return DatasetManifest.model_validate_json(sidecar.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"dataset manifest not found: {sidecar}") from None
    except ValidationError as exc:
        raise ConfigError(f"invalid dataset manifest {sidecar}: {exc}") from None


def read_header(path: Union[str, Path]) -> PcdsHeader:
    with open(path, "rb") as f:
        return decode_header(f.read(HEADER.size))


def read_dataset(path: Union[str, Path]) -> Dataset:
    """
    Read a PCDS file plus manifest.

    Raises:
        FormatError: bad magic/version, truncation, manifest/header disagreement
        ConfigError: manifest missing or invalid
    """
    payload = Path(path).read_bytes()
    header = decode_header(payload)
    records = decode_records(payload, header)
    manifest = read_manifest(path)

    if len(manifest.class_names) != header.num_classes:
        raise FormatError(
            f"manifest lists {len(manifest.class_names)} classes, header says {header.num_classes}", offset=8
        )
    if manifest.points_per_cloud != header.points_per_cloud:
        raise FormatError("manifest points_per_cloud disagrees with header", offset=12)
    if manifest.num_train + manifest.num_test != header.num_samples:
        raise FormatError(
            f"manifest splits {manifest.num_train}+{manifest.num_test} != num_samples {header.num_samples}",
            offset=16,
        )

    points = np.array(records["points"], dtype=np.float32)
    labels = records["label"].astype(np.int64)
    n = manifest.num_train
    return Dataset(
        name=manifest.name,
        class_names=list(manifest.class_names),
        points_per_cloud=header.points_per_cloud,
        seed=manifest.seed,
        train=Split(points=points[:n], labels=labels[:n]),
        test=Split(points=points[n:], labels=labels[n:]),
    )
