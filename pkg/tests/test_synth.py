"""Generator invariants and dataset file round trips."""

from collections import Counter

import numpy as np
import pytest

from tsgrade.binio import FormatError
from tsgrade.synth import (
    SynthConfig,
    generate,
    load_dataset,
    nearest_prototype_grade,
    save_dataset,
)

SMALL = SynthConfig(n_videos=30, t_range=(80, 160), feature_dim=8, n_grades=3,
                    segment_len_range=(15, 40), seed=7)


def test_same_seed_bit_identical():
    a = generate(SMALL)
    b = generate(SMALL)
    assert len(a.videos) == len(b.videos)
    np.testing.assert_array_equal(a.prototypes, b.prototypes)
    for va, vb in zip(a.videos, b.videos):
        np.testing.assert_array_equal(va.features, vb.features)
        assert (va.grade, va.timestamp, va.segment, va.distractors) == (
            vb.grade, vb.timestamp, vb.segment, vb.distractors
        )


def test_different_seed_differs():
    a = generate(SMALL)
    b = generate(SynthConfig(**{**SMALL.__dict__, "seed": 8}))
    assert any(
        not np.array_equal(va.features, vb.features)
        for va, vb in zip(a.videos, b.videos)
    )


def test_noiseless_segment_equals_prototype():
    cfg = SynthConfig(n_videos=12, t_range=(60, 100), feature_dim=8, n_grades=3,
                      segment_len_range=(10, 20), noise_level=0.0,
                      distractor_range=(0, 0), seed=3)
    ds = generate(cfg)
    for v in ds.videos:
        proto32 = ds.prototypes[v.grade - 1].astype(np.float32).astype(np.float64)
        seg = v.features[v.segment[0]:v.segment[1]]
        np.testing.assert_array_equal(seg, np.tile(proto32, (seg.shape[0], 1)))
        outside = np.delete(v.features, slice(*v.segment), axis=0)
        assert np.all(outside == 0.0)
    # the nearest-prototype rule is perfect on segment means
    hits = sum(
        nearest_prototype_grade(v.features[v.segment[0]:v.segment[1]].mean(axis=0),
                                ds.prototypes) == v.grade
        for v in ds.test
    )
    assert hits == len(ds.test)


def test_default_config_oracle_gap():
    """Localization must matter: segment means separate, whole means do not."""
    ds = generate(SynthConfig())

    def oracle_acc(extract):
        hits = sum(
            nearest_prototype_grade(extract(v), ds.prototypes) == v.grade
            for v in ds.test
        )
        return hits / len(ds.test)

    seg_acc = oracle_acc(lambda v: v.features[v.segment[0]:v.segment[1]].mean(axis=0))
    whole_acc = oracle_acc(lambda v: v.features.mean(axis=0))
    assert seg_acc >= 0.95
    assert whole_acc <= seg_acc - 0.15


def test_structural_invariants():
    ds = generate(SMALL)
    counts = Counter(v.grade for v in ds.videos)
    assert max(counts.values()) - min(counts.values()) <= 1
    for v in ds.videos:
        s, e = v.segment
        assert 0 <= s < e <= v.n_frames
        assert s <= v.timestamp < e
        assert np.all(np.isfinite(v.features))
        for a, b in v.distractors:
            assert 0 <= a < b <= v.n_frames
            assert b <= s or a >= e  # distractors avoid the true segment
    dists = np.linalg.norm(
        ds.prototypes[:, None] - ds.prototypes[None, :], axis=2
    )
    np.fill_diagonal(dists, np.inf)
    assert dists.min() >= SMALL.prototype_scale


def test_split_sizes_and_balance():
    ds = generate(SMALL)
    assert len(ds.train) + len(ds.test) == SMALL.n_videos
    train_counts = Counter(v.grade for v in ds.train)
    assert max(train_counts.values()) - min(train_counts.values()) <= 1


def test_infeasible_segment_rejected():
    with pytest.raises(ValueError, match="fit"):
        SynthConfig(t_range=(50, 100), segment_len_range=(60, 80))


class TestRoundTrip:
    def test_export_import_equality(self, tmp_path):
        ds = generate(SMALL)
        path = tmp_path / "data.tgds"
        save_dataset(path, ds)
        back = load_dataset(path)
        assert back.config == ds.config
        np.testing.assert_array_equal(back.prototypes, ds.prototypes)
        assert len(back.train) == len(ds.train) and len(back.test) == len(ds.test)
        for va, vb in zip(ds.videos, back.videos):
            np.testing.assert_array_equal(va.features, vb.features)
            assert (va.grade, va.timestamp, va.segment, va.distractors) == (
                vb.grade, vb.timestamp, vb.segment, vb.distractors
            )

    def test_double_round_trip_is_stable(self, tmp_path):
        ds = generate(SMALL)
        p1, p2 = tmp_path / "a.tgds", tmp_path / "b.tgds"
        save_dataset(p1, ds)
        save_dataset(p2, load_dataset(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_reports_offset(self, tmp_path):
        ds = generate(SMALL)
        path = tmp_path / "data.tgds"
        save_dataset(path, ds)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(FormatError, match=r"offset \d+"):
            load_dataset(path)

    def test_version_mismatch_rejected(self, tmp_path):
        ds = generate(SMALL)
        path = tmp_path / "data.tgds"
        save_dataset(path, ds)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            load_dataset(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "data.tgds"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            load_dataset(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        ds = generate(SMALL)
        path = tmp_path / "data.tgds"
        save_dataset(path, ds)
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(FormatError, match="trailing"):
            load_dataset(path)
