"""Checkpoint format: round trips, integrity failures, and the byte layout."""

import hashlib
import json
import struct

import numpy as np
import pytest

from auxblocks import ensemble, models
from auxblocks.checkpoint import (MAGIC, VERSION, CheckpointError, CheckpointHashError,
                                  CheckpointTruncatedError, CheckpointVersionError,
                                  load_checkpoint, save_checkpoint)
from auxblocks.data import synthetic_dataset
from auxblocks.optim import SGD


@pytest.fixture
def bn_model():
    """Tiny model with batchnorm so running-stat buffers are exercised."""
    spec = models.build_vgg_config([4, "M"], num_classes=3, input_shape=(1, 8, 8))
    model = models.build_model(spec, seed=2)
    ds = synthetic_dataset(num_classes=3, per_class=10, image_size=8, seed=2)
    opt = SGD(model.parameters(), lr=0.05)
    ensemble.train_epoch(model, ds.images, ds.labels, opt,
                         rng=np.random.default_rng(2), batch_size=8)
    return model


class TestRoundTrip:
    def test_forward_bit_exact(self, bn_model, tmp_path):
        path = tmp_path / "m.auxb"
        save_checkpoint(bn_model, path)
        loaded = load_checkpoint(path)
        x = np.random.default_rng(0).uniform(0, 1, (5, 1, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(bn_model.forward_public(x).data,
                                      loaded.forward_public(x).data)
        assert loaded.spec == bn_model.spec
        assert loaded.param_hash() == bn_model.param_hash()

    def test_aux_model_roundtrip(self, aux_model, tmp_path, blobs):
        path = tmp_path / "aux.auxb"
        save_checkpoint(aux_model, path)
        loaded = load_checkpoint(path)
        x = blobs.images[:4]
        for a, b in zip(aux_model.forward_all(x), loaded.forward_all(x)):
            np.testing.assert_array_equal(a.data, b.data)

    def test_metadata_survives(self, bn_model, tmp_path):
        bn_model.meta["defense"] = "aux_block"
        path = tmp_path / "m.auxb"
        save_checkpoint(bn_model, path)
        assert load_checkpoint(path).meta["defense"] == "aux_block"

    def test_save_load_save_is_byte_stable(self, bn_model, tmp_path):
        p1, p2 = tmp_path / "a.auxb", tmp_path / "b.auxb"
        save_checkpoint(bn_model, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestIntegrity:
    def test_tampered_blob_hash_mismatch(self, bn_model, tmp_path):
        path = tmp_path / "m.auxb"
        save_checkpoint(bn_model, path)
        raw = bytearray(path.read_bytes())
        raw[-3] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointHashError, match="hash"):
            load_checkpoint(path)

    def test_truncated_blob(self, bn_model, tmp_path):
        path = tmp_path / "m.auxb"
        save_checkpoint(bn_model, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointTruncatedError, match="blob"):
            load_checkpoint(path)

    def test_version_mismatch(self, bn_model, tmp_path):
        path = tmp_path / "m.auxb"
        save_checkpoint(bn_model, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointVersionError, match="version 99"):
            load_checkpoint(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "m.auxb"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)


class TestByteLayout:
    def test_fixture_layout_byte_by_byte(self, tmp_path):
        """Reconstruct the expected file for a minimal model and compare."""
        spec = models.ModelSpec((1, 2, 2), (models.Flatten(), models.Dense(2)), (), 2)
        model = models.build_model(spec, seed=0)
        path = tmp_path / "tiny.auxb"
        save_checkpoint(model, path)
        raw = path.read_bytes()

        assert raw[:4] == MAGIC == b"AUXB"
        assert raw[4] == VERSION
        header_len = struct.unpack("<I", raw[5:9])[0]
        header = json.loads(raw[9:9 + header_len].decode())

        weight = model.backbone[1][0].weight.data
        bias = model.backbone[1][0].bias.data
        expected_blob = weight.astype("<f4").tobytes() + bias.astype("<f4").tobytes()
        assert raw[9 + header_len:] == expected_blob
        assert header["manifest"] == [
            {"name": "backbone.1.0.weight", "shape": [2, 4], "kind": "param"},
            {"name": "backbone.1.0.bias", "shape": [2], "kind": "param"},
        ]
        assert header["blob_sha256"] == hashlib.sha256(expected_blob).hexdigest()
        assert header["spec_hash"] == spec.spec_hash()
