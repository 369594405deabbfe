"""Checkpoint format: round trips and corruption handling."""

import numpy as np
import pytest

from tsgrade.autodiff import ParamStore
from tsgrade.checkpoint import (
    CheckpointError,
    config_hash,
    load_checkpoint,
    restore_into,
    save_checkpoint,
)


def small_store():
    store = ParamStore()
    rng = np.random.default_rng(0)
    store.add("lm/w", rng.normal(size=(4, 3)))
    store.add("lm/b", rng.normal(size=3))
    store.add("gm/w", rng.normal(size=(2, 3, 5)), trainable=False)
    store.add("scalar", 1.25)
    return store


def test_round_trip_bit_exact(tmp_path):
    store = small_store()
    path = tmp_path / "model.tgck"
    save_checkpoint(path, store, "abc123", epoch=7, extra={"note": "x"})
    arrays, trainable, header = load_checkpoint(path)
    assert header["config_hash"] == "abc123"
    assert header["epoch"] == 7
    assert header["note"] == "x"
    assert set(arrays) == {"lm/w", "lm/b", "gm/w", "scalar"}
    for name, tensor in store.items():
        np.testing.assert_array_equal(arrays[name], tensor.data)
        assert trainable[name] == store.is_trainable(name)


def test_restore_into_existing_store(tmp_path):
    store = small_store()
    path = tmp_path / "model.tgck"
    save_checkpoint(path, store, config_hash({"a": 1}), epoch=3)
    other = small_store()
    for _, t in other.items():
        t.data[...] = 0.0
    header = restore_into(other, path, expect_hash=config_hash({"a": 1}))
    assert header["epoch"] == 3
    for name, tensor in store.items():
        np.testing.assert_array_equal(other[name].data, tensor.data)


def test_hash_mismatch_rejected(tmp_path):
    store = small_store()
    path = tmp_path / "model.tgck"
    save_checkpoint(path, store, "right", epoch=0)
    with pytest.raises(CheckpointError, match="hash"):
        restore_into(small_store(), path, expect_hash="wrong")


def test_saved_bytes_are_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.tgck", tmp_path / "b.tgck"
    save_checkpoint(p1, small_store(), "h", epoch=1)
    save_checkpoint(p2, small_store(), "h", epoch=1)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncation_reports_offset(tmp_path):
    path = tmp_path / "model.tgck"
    save_checkpoint(path, small_store(), "h", epoch=1)
    blob = path.read_bytes()
    path.write_bytes(blob[:-20])
    with pytest.raises(CheckpointError, match=r"offset \d+"):
        load_checkpoint(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "model.tgck"
    save_checkpoint(path, small_store(), "h", epoch=1)
    blob = bytearray(path.read_bytes())
    wrong = bytearray(blob)
    wrong[:4] = b"XXXX"
    path.write_bytes(bytes(wrong))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    wrong = bytearray(blob)
    wrong[4] = 42
    path.write_bytes(bytes(wrong))
    with pytest.raises(CheckpointError, match="version 42"):
        load_checkpoint(path)


def test_config_hash_stability():
    a = config_hash({"x": 1, "y": [1, 2]})
    b = config_hash({"y": [1, 2], "x": 1})
    assert a == b and len(a) == 16
    assert config_hash({"x": 2}) != a
