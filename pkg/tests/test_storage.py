"""
Tests for the PCDS dataset format, the T3DN checkpoint format and atomic writes.
"""

import hashlib
import json
import struct

import numpy as np
import pytest

from t3dnet.core.errors import EXIT_FORMAT, CheckpointMismatchError, ConfigError, FormatError
from t3dnet.models.internal import Checkpoint
from t3dnet.storage.checkpoint_store import (
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
    sidecar_path,
    verify_digest,
)
from t3dnet.storage.files import atomic_write_json, read_json
from t3dnet.storage.pcds import (
    HEADER,
    decode_header,
    decode_records,
    encode_dataset,
    manifest_path,
    read_dataset,
    read_header,
    write_dataset,
)

DIGEST = hashlib.sha256(b"architecture").digest()


@pytest.fixture
def checkpoint():
    rng = np.random.default_rng(0)
    return Checkpoint(
        tensors={
            "b.bias": rng.standard_normal(4).astype(np.float32),
            "a.weight": rng.standard_normal((4, 3)).astype(np.float32),
            "scalar": np.array(2.5, dtype=np.float32),
        },
        digest=DIGEST,
        epoch=7,
        metrics={"best_test_oa": 0.5},
        architecture="micro",
    )


# ============================================================================
# PCDS
# ============================================================================

class TestPcds:

    def test_header_layout(self, micro_dataset):
        payload = encode_dataset(micro_dataset)
        magic, version, classes, ppc, samples = struct.unpack_from("<4sIIII", payload, 0)
        assert (magic, version, classes, ppc, samples) == (b"PCDS", 1, 3, 32, 18)
        record = 4 + 32 * 3 * 4
        assert len(payload) == HEADER.size + 18 * record

    def test_round_trip(self, tmp_path, micro_dataset):
        path = write_dataset(micro_dataset, tmp_path / "ds.pcds")
        assert manifest_path(path).exists()
        back = read_dataset(path)
        assert back.class_names == micro_dataset.class_names
        np.testing.assert_array_equal(back.train.points, micro_dataset.train.points)
        np.testing.assert_array_equal(back.test.labels, micro_dataset.test.labels)
        assert read_header(path).num_samples == 18

    def test_rewrite_is_byte_identical(self, tmp_path, micro_dataset):
        a = write_dataset(micro_dataset, tmp_path / "a.pcds")
        b = write_dataset(read_dataset(a), tmp_path / "b.pcds")
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, micro_dataset):
        payload = b"XXXX" + encode_dataset(micro_dataset)[4:]
        with pytest.raises(FormatError) as info:
            decode_header(payload)
        assert info.value.offset == 0
        assert info.value.exit_code == EXIT_FORMAT

    def test_bad_version(self, micro_dataset):
        payload = bytearray(encode_dataset(micro_dataset))
        payload[4:8] = struct.pack("<I", 2)
        with pytest.raises(FormatError) as info:
            decode_header(bytes(payload))
        assert info.value.offset == 4

    def test_truncated_payload_reports_offset(self, micro_dataset):
        payload = encode_dataset(micro_dataset)
        record = 4 + 32 * 3 * 4
        cut = payload[: HEADER.size + 2 * record + 10]
        with pytest.raises(FormatError) as info:
            decode_records(cut, decode_header(cut))
        assert info.value.offset == HEADER.size + 2 * record

    def test_label_out_of_range(self, micro_dataset):
        payload = bytearray(encode_dataset(micro_dataset))
        record = 4 + 32 * 3 * 4
        offset = HEADER.size + 5 * record
        payload[offset:offset + 4] = struct.pack("<I", 3)
        with pytest.raises(FormatError) as info:
            decode_records(bytes(payload), decode_header(bytes(payload)))
        assert info.value.offset == offset

    def test_missing_manifest(self, tmp_path, micro_dataset):
        path = write_dataset(micro_dataset, tmp_path / "ds.pcds")
        manifest_path(path).unlink()
        with pytest.raises(ConfigError):
            read_dataset(path)

    def test_manifest_disagreement(self, tmp_path, micro_dataset):
        path = write_dataset(micro_dataset, tmp_path / "ds.pcds")
        meta = read_json(manifest_path(path))
        meta["num_train"] += 1
        atomic_write_json(manifest_path(path), meta)
        with pytest.raises(FormatError):
            read_dataset(path)


# ============================================================================
# T3DN
# ============================================================================

class TestCheckpointFormat:

    def test_round_trip(self, checkpoint):
        back = decode_checkpoint(encode_checkpoint(checkpoint))
        assert back.epoch == 7
        assert back.digest == DIGEST
        assert set(back.tensors) == set(checkpoint.tensors)
        for name, value in checkpoint.tensors.items():
            np.testing.assert_array_equal(back.tensors[name], value)
            assert back.tensors[name].shape == value.shape

    def test_encoding_is_canonical(self, checkpoint):
        payload = encode_checkpoint(checkpoint)
        assert encode_checkpoint(decode_checkpoint(payload)) == payload

    def test_tensors_sorted_by_name(self, checkpoint):
        payload = encode_checkpoint(checkpoint)
        (name_len,) = struct.unpack_from("<H", payload, 12)
        assert payload[14:14 + name_len] == b"a.weight"

    def test_trailer(self, checkpoint):
        payload = encode_checkpoint(checkpoint)
        assert payload[-36:-4] == DIGEST
        assert struct.unpack("<I", payload[-4:])[0] == 7

    def test_bad_magic(self, checkpoint):
        with pytest.raises(FormatError) as info:
            decode_checkpoint(b"NOPE" + encode_checkpoint(checkpoint)[4:])
        assert info.value.offset == 0

    def test_truncation(self, checkpoint):
        payload = encode_checkpoint(checkpoint)
        with pytest.raises(FormatError) as info:
            decode_checkpoint(payload[:-10])
        assert info.value.offset is not None

    def test_trailing_bytes(self, checkpoint):
        with pytest.raises(FormatError):
            decode_checkpoint(encode_checkpoint(checkpoint) + b"\x00")

    def test_bad_digest_length(self, checkpoint):
        checkpoint.digest = b"short"
        with pytest.raises(FormatError):
            encode_checkpoint(checkpoint)

    def test_save_load_with_sidecar(self, tmp_path, checkpoint):
        path = save_checkpoint(checkpoint, tmp_path / "c.t3dn")
        meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        assert meta["epoch"] == 7
        assert meta["digest"] == DIGEST.hex()
        back = load_checkpoint(path)
        assert back.metrics == {"best_test_oa": 0.5}
        assert back.architecture == "micro"

    def test_sidecar_optional(self, tmp_path, checkpoint):
        path = save_checkpoint(checkpoint, tmp_path / "c.t3dn")
        sidecar_path(path).unlink()
        back = load_checkpoint(path)
        assert back.metrics == {}
        assert back.epoch == 7


class TestVerifyDigest:

    def test_match(self, checkpoint):
        verify_digest(checkpoint, DIGEST)

    def test_mismatch(self, checkpoint):
        other = hashlib.sha256(b"other").digest()
        with pytest.raises(CheckpointMismatchError) as info:
            verify_digest(checkpoint, other, source="teacher")
        assert info.value.exit_code == EXIT_FORMAT

    def test_mismatch_allowed(self, checkpoint):
        verify_digest(checkpoint, hashlib.sha256(b"other").digest(), allow_mismatch=True)


# ============================================================================
# Atomic writes
# ============================================================================

class TestAtomicWrites:

    def test_json_and_no_temp_left(self, tmp_path):
        path = atomic_write_json(tmp_path / "sub" / "x.json", {"b": 1, "a": [1, 2]})
        assert read_json(path) == {"a": [1, 2], "b": 1}
        assert not (tmp_path / "sub" / "x.json.tmp").exists()
