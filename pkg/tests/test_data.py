"""Record parsing, segmentation, shard round-trips and batch iterators."""

import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecglab import data as D
from ecglab.errors import ConfigError, DataError, ShapeError


# ---------------------------------------------------------------- records

def test_signal_round_trip(tmp_path, rng):
    x = rng.standard_normal(100)
    p = tmp_path / "rec.csv"
    D.write_signal(p, x, 360.0)
    got, rate = D.read_signal(p)
    assert rate == 360.0
    assert np.allclose(got, x, atol=1e-6)


def test_signal_header_required(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0.1\n0.2\n")
    with pytest.raises(DataError, match="rate_hz"):
        D.read_signal(p)


def test_annotation_round_trip(tmp_path):
    p = tmp_path / "ann.csv"
    D.write_annotations(p, [(10, "NOR"), (50, "PVC")])
    assert D.read_annotations(p) == [(10, "NOR"), (50, "PVC")]


def test_annotation_validation(tmp_path):
    p = tmp_path / "ann.csv"
    p.write_text("# comment lines are fine\n-3,NOR\n")
    with pytest.raises(DataError, match="negative"):
        D.read_annotations(p)
    p.write_text("5,\n")
    with pytest.raises(DataError, match="empty label"):
        D.read_annotations(p)
    p.write_text("5,NOR,extra\n")
    with pytest.raises(DataError, match="expected"):
        D.read_annotations(p)


# ---------------------------------------------------------------- resample

def test_resample_length_formula():
    y = D.resample(np.zeros(720), 360.0, 250.0)
    assert y.shape == (500,)


def test_resample_preserves_constant():
    y = D.resample(np.full(720, 0.7), 360.0, 250.0)
    assert np.allclose(y, 0.7, atol=1e-12)


def test_resample_identity_when_rates_match(rng):
    x = rng.standard_normal(100)
    assert np.array_equal(D.resample(x, 250.0, 250.0), x)


def test_resample_tracks_slow_sinusoid():
    t = np.arange(1000) / 360.0
    x = np.sin(2 * np.pi * 5.0 * t)
    y = D.resample(x, 360.0, 250.0)
    t2 = np.linspace(0, t[-1], y.shape[0])
    assert np.abs(y - np.sin(2 * np.pi * 5.0 * t2)).max() < 0.01


def test_resample_rejects_bad_input():
    with pytest.raises(DataError, match="non-finite"):
        D.resample(np.array([1.0, np.nan]), 360.0, 250.0)
    with pytest.raises(ConfigError):
        D.resample(np.zeros(10), -1.0, 250.0)
    with pytest.raises(DataError):
        D.resample(np.zeros(2), 10_000.0, 1.0)


# ---------------------------------------------------------------- segmentation

def test_segment_record_boundary_skips(rng):
    x = rng.standard_normal(2000)
    events = [(300, "NOR"), (1000, "PVC"), (1900, "NOR")]
    segs, labels, skipped = D.segment_record(x, events, 512)
    assert segs.shape == (2, 512)
    assert labels == ["NOR", "PVC"]
    assert len(skipped) == 1 and skipped[0]["sample"] == 1900


def test_segment_is_centred(rng):
    x = rng.standard_normal(600).astype(np.float32)
    segs, _, _ = D.segment_record(x, [(300, "NOR")], 128)
    assert segs[0, 64] == x[300]
    assert np.array_equal(segs[0], x[300 - 64 : 300 + 64])


def test_segment_exact_fit():
    x = np.arange(512, dtype=np.float32)
    segs, labels, skipped = D.segment_record(x, [(256, "NOR")], 512)
    assert segs.shape == (1, 512)
    assert np.array_equal(segs[0], x)
    assert not skipped


def test_segment_empty_annotations():
    segs, labels, skipped = D.segment_record(np.zeros(100), [], 32)
    assert segs.shape == (0, 32)
    assert labels == [] and skipped == []


def test_segment_window_validation():
    with pytest.raises(ConfigError):
        D.segment_record(np.zeros(100), [], 31)
    with pytest.raises(ConfigError):
        D.segment_record(np.zeros(100), [], 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(100, 4000), st.integers(0, 4000), st.integers(1, 8))
def test_segment_center_property(n, event, half_exp):
    window = 2 ** half_exp * 2
    x = np.arange(n, dtype=np.float32)
    segs, labels, skipped = D.segment_record(x, [(event, "X")], window)
    if event - window // 2 >= 0 and event + window // 2 <= n:
        assert segs.shape == (1, window)
        assert segs[0, window // 2] == x[event]
    else:
        assert segs.shape == (0, window)
        assert len(skipped) == 1


# ---------------------------------------------------------------- znorm

def test_znorm_moments_and_idempotence(rng):
    segs = (rng.standard_normal((5, 64)) * 3 + 7).astype(np.float32)
    z = D.znorm(segs)
    assert np.allclose(z.mean(axis=1), 0, atol=1e-5)
    assert np.allclose(z.std(axis=1), 1, atol=1e-5)
    z64 = D.znorm(segs.astype(np.float64))
    assert np.abs(D.znorm(z64) - z64).max() <= 1e-12


def test_znorm_flat_rows_only_centred():
    segs = np.full((2, 8), 3.25, dtype=np.float32)
    z = D.znorm(segs)
    assert np.array_equal(z, np.zeros_like(segs))


# ---------------------------------------------------------------- split

def test_split_sizes_and_disjoint():
    tr, te = D.train_test_split(5, 0.8, seed=0)
    assert len(tr) == 4 and len(te) == 1
    assert set(tr.tolist()) | set(te.tolist()) == set(range(5))


def test_split_empty_warns():
    with pytest.warns(UserWarning, match="empty"):
        tr, te = D.train_test_split(0, 0.8, seed=0)
    assert len(tr) == 0 and len(te) == 0


def test_split_ratio_validation():
    with pytest.raises(ConfigError):
        D.train_test_split(10, 1.0, seed=0)
    with pytest.raises(ConfigError):
        D.train_test_split(10, 0.0, seed=0)


def test_split_deterministic():
    a = D.train_test_split(100, 0.8, seed=3)
    b = D.train_test_split(100, 0.8, seed=3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


# ---------------------------------------------------------------- shards

def make_dataset(rng, n=20, l=64, classes=("NOR", "PVC", "APB")):
    x = rng.standard_normal((n, l)).astype(np.float32)
    y = rng.integers(0, len(classes), size=n).astype(np.int64)
    return D.Dataset("toy", 250.0, l, list(classes), x, y)


def test_dataset_round_trip_bitwise(tmp_path, rng):
    ds = make_dataset(rng)
    D.save_dataset(tmp_path, ds)
    back = D.load_dataset(tmp_path)
    assert back.name == ds.name
    assert back.rate_hz == ds.rate_hz
    assert back.segment_len == ds.segment_len
    assert back.classes == ds.classes
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.y, ds.y)


def test_manifest_extra_keys_survive(tmp_path, rng):
    ds = make_dataset(rng, n=6)
    D.save_dataset(tmp_path, ds, extra={"synthetic": True})
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["synthetic"] is True
    D.load_dataset(tmp_path)  # unknown keys are ignored


def test_manifest_tamper_detected(tmp_path, rng):
    ds = make_dataset(rng)
    D.save_dataset(tmp_path, ds)
    man_path = tmp_path / "manifest.json"
    man = json.loads(man_path.read_text())
    man["shards"][0]["count"] += 1
    man_path.write_text(json.dumps(man))
    with pytest.raises(DataError, match=man["shards"][0]["path"]):
        D.load_dataset(tmp_path)


def test_load_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        D.load_dataset(tmp_path / "nowhere")


def test_counts_match_labels(rng):
    ds = make_dataset(rng, n=30)
    counts = ds.counts()
    assert sum(counts.values()) == 30
    for i, name in enumerate(ds.classes):
        assert counts[name] == int((ds.y == i).sum())


# ---------------------------------------------------------------- iterators

def test_batch_iter_covers_and_drops_remainder():
    batches = list(D.batch_iter(10, 3, seed=0, epoch=0))
    assert [len(b) for b in batches] == [3, 3, 3]
    batches = list(D.batch_iter(10, 3, seed=0, epoch=0, drop_last=False))
    assert [len(b) for b in batches] == [3, 3, 3, 1]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))


def test_batch_iter_keyed_on_seed_and_epoch():
    a = np.concatenate(list(D.batch_iter(10, 5, seed=0, epoch=0)))
    b = np.concatenate(list(D.batch_iter(10, 5, seed=0, epoch=0)))
    c = np.concatenate(list(D.batch_iter(10, 5, seed=0, epoch=1)))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_dual_iter_warns_on_oversized_batch():
    with pytest.warns(UserWarning, match="exceeds"):
        list(D.dual_batch_iter(10, 2, batch=4, seed=0, epoch=0))


def test_dual_iter_wrap_reshuffles():
    # 8 vs 2 at batch 2 -> 4 steps; the short stream makes 4 passes
    steps = list(D.dual_batch_iter(8, 2, batch=2, seed=0, epoch=0))
    b_stream = np.concatenate([ib for _, ib in steps])
    assert b_stream.shape == (8,)
    # every pass holds both rows
    for i in range(0, 8, 2):
        assert sorted(b_stream[i : i + 2].tolist()) == [0, 1]


# ---------------------------------------------------------------- merge

def test_augment_merge_counts(rng):
    train = make_dataset(rng, n=40)
    add = D.Dataset("gen", 250.0, 64, train.classes,
                    rng.standard_normal((1200, 64)).astype(np.float32),
                    np.full(1200, 1, dtype=np.int64))
    merged = D.augment_merge(train, add, "PVC", count=900)
    assert merged.x.shape[0] == 940
    assert merged.counts()["PVC"] == train.counts()["PVC"] + 900


def test_augment_merge_zero_count_copies(rng):
    train = make_dataset(rng, n=10)
    add = D.Dataset("gen", 250.0, 64, train.classes,
                    rng.standard_normal((5, 64)).astype(np.float32),
                    np.full(5, 1, dtype=np.int64))
    merged = D.augment_merge(train, add, "PVC", count=0)
    assert merged.x.shape[0] == 10
    assert np.array_equal(merged.x, train.x)


def test_augment_merge_insufficient_synthetic(rng):
    train = make_dataset(rng, n=10)
    add = D.Dataset("gen", 250.0, 64, train.classes,
                    rng.standard_normal((10, 64)).astype(np.float32),
                    np.full(10, 1, dtype=np.int64))
    with pytest.raises(DataError, match="only 10"):
        D.augment_merge(train, add, "PVC", count=900)


def test_augment_merge_rejects_mixed_labels(rng):
    train = make_dataset(rng, n=10)
    add = D.Dataset("gen", 250.0, 64, train.classes,
                    rng.standard_normal((4, 64)).astype(np.float32),
                    np.array([1, 1, 0, 1], dtype=np.int64))
    with pytest.raises(DataError, match="only"):
        D.augment_merge(train, add, "PVC", count=2)


def test_augment_merge_unknown_class(rng):
    train = make_dataset(rng, n=10)
    with pytest.raises(DataError, match="not in dataset"):
        D.augment_merge(train, train, "VFW", count=1)
