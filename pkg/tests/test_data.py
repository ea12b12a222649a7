# tests/test_data.py
import hashlib
import os

import numpy as np
import pytest

from conftest import synthetic_images, write_cifar_dir
from data import (
    RECORD_BYTES,
    TRAIN_FILES,
    AugmentConfig,
    Cifar10Set,
    batches,
    compute_norm_stats,
    crop_flip,
    dataset_checksum,
    encode_record,
    epoch_order,
    load_cifar10_bin,
    load_norm_stats,
    norm_stats_for,
    save_norm_stats,
    subset,
)
from utils.errors import DatasetError
from utils.hashing import file_sha256, files_sha256


def _set(n, split="train", seed=0):
    r = np.random.default_rng(seed)
    labels = r.integers(0, 10, size=n)
    return Cifar10Set(synthetic_images(labels, r).astype(np.float32), labels, split)


# ---------- loading ----------
def test_loader_reads_records_back_exactly(tmp_path):
    r = np.random.default_rng(0)
    img = r.integers(0, 256, size=(3, 32, 32)) / 255.0
    d = tmp_path / "c"
    d.mkdir()
    for name in TRAIN_FILES:
        (d / name).write_bytes(encode_record(img, 7) * 2)
    ds = load_cifar10_bin(str(d), "train", records_per_file=None)
    assert len(ds) == 10
    assert ds.labels.tolist() == [7] * 10
    np.testing.assert_array_equal(np.rint(ds.images[0] * 255), np.rint(img * 255))
    assert ds.images.dtype == np.float32


def test_record_layout_is_label_then_rgb_planes():
    img = np.zeros((3, 32, 32))
    img[1, 0, 0] = 1.0
    rec = encode_record(img, 3)
    assert len(rec) == RECORD_BYTES
    assert rec[0] == 3
    assert rec[1 + 1024] == 255          # first green pixel


def test_loader_splits(cifar_dir):
    train = load_cifar10_bin(cifar_dir, "train", records_per_file=None)
    test = load_cifar10_bin(cifar_dir, "test", records_per_file=None)
    assert (len(train), len(test)) == (100, 20)
    assert train.split == "train" and test.split == "test"


def test_missing_files_name_the_expected_layout(tmp_path):
    with pytest.raises(DatasetError, match="data_batch_1.bin"):
        load_cifar10_bin(str(tmp_path), "train")


def test_truncated_file_reports_offset(cifar_dir):
    path = os.path.join(cifar_dir, "test_batch.bin")
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-100])
    with pytest.raises(DatasetError) as err:
        load_cifar10_bin(cifar_dir, "test", records_per_file=None)
    assert err.value.path == path
    assert err.value.offset == 19 * RECORD_BYTES


def test_bad_label_byte_is_rejected(tmp_path):
    d = tmp_path / "c"
    d.mkdir()
    (d / "test_batch.bin").write_bytes(encode_record(np.zeros((3, 32, 32)), 1) + bytes([12]) + bytes(3072))
    with pytest.raises(DatasetError, match="label byte 12") as err:
        load_cifar10_bin(str(d), "test", records_per_file=None)
    assert err.value.offset == RECORD_BYTES


def test_wrong_record_count_is_rejected(cifar_dir):
    with pytest.raises(DatasetError, match="expected 10000 records"):
        load_cifar10_bin(cifar_dir, "test")


def test_unknown_split():
    with pytest.raises(ValueError):
        load_cifar10_bin(".", "val")


def test_checksum_changes_with_content(tmp_path):
    a = write_cifar_dir(tmp_path / "a", per_file=2, seed=0)
    b = write_cifar_dir(tmp_path / "b", per_file=2, seed=1)
    assert dataset_checksum(a) == dataset_checksum(a)
    assert dataset_checksum(a) != dataset_checksum(b)


def test_file_digest_is_the_single_file_case_of_the_multi_file_digest(tmp_path):
    path = tmp_path / "blob.bin"
    payload = bytes(range(256)) * 5000          # spans several read chunks
    path.write_bytes(payload)
    assert file_sha256(str(path)) == hashlib.sha256(payload).hexdigest()
    assert file_sha256(str(path)) == files_sha256([str(path)])
    assert files_sha256([str(path), str(path)]) == hashlib.sha256(payload * 2).hexdigest()


def test_subset_is_seeded_and_sorted():
    ds = _set(50)
    a, b = subset(ds, 10, seed=3), subset(ds, 10, seed=3)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert len(a) == 10
    assert subset(ds, None) is ds
    with pytest.raises(ValueError):
        subset(ds, 0)


# ---------- normalization ----------
def test_norm_stats_match_numpy():
    ds = _set(30)
    mean, std = compute_norm_stats(ds, chunk=7)
    np.testing.assert_allclose(mean, ds.images.astype(np.float64).mean(axis=(0, 2, 3)), rtol=1e-10)
    np.testing.assert_allclose(std, ds.images.astype(np.float64).std(axis=(0, 2, 3)), rtol=1e-10)


def test_norm_stats_reject_constant_channel():
    ds = Cifar10Set(np.zeros((4, 3, 32, 32), dtype=np.float32), np.zeros(4, dtype=np.int64))
    with pytest.raises(ValueError):
        compute_norm_stats(ds)


def test_norm_stats_file_round_trip_and_checksum_guard(tmp_path):
    path = save_norm_stats(str(tmp_path / "s.json"), [0.1, 0.2, 0.3], [1.0, 2.0, 3.0], checksum="abc")
    mean, std = load_norm_stats(path, checksum="abc")
    np.testing.assert_array_equal(mean, [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(std, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        load_norm_stats(path, checksum="other")


def test_norm_stats_are_cached(cifar_dir, tmp_path):
    train = load_cifar10_bin(cifar_dir, "train", records_per_file=None)
    m1, s1 = norm_stats_for(cifar_dir, train, str(tmp_path))
    assert os.path.isfile(tmp_path / "norm_stats.json")
    m2, s2 = norm_stats_for(cifar_dir, train, str(tmp_path))
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_array_equal(s1, s2)


# ---------- augmentation ----------
def test_center_crop_without_flip_is_normalized_identity(rng):
    img = rng.random((3, 32, 32))
    cfg = AugmentConfig(mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25))
    out = crop_flip(img, 4, 4, False, cfg)
    np.testing.assert_allclose(out, (img - 0.5) / 0.25)


def test_corner_crop_pads_with_zeros_before_normalizing(rng):
    img = rng.random((3, 32, 32)) + 1.0
    out = crop_flip(img, 0, 0, False, AugmentConfig())
    assert np.all(out[:, :4, :] == 0) and np.all(out[:, :, :4] == 0)
    np.testing.assert_array_equal(out[:, 4:, 4:], img[:, :28, :28])


def test_flip_mirrors_width(rng):
    img = rng.random((3, 32, 32))
    out = crop_flip(img, 4, 4, True, AugmentConfig())
    np.testing.assert_array_equal(out, img[:, :, ::-1])


def test_crop_rejects_offsets_outside_canvas(rng):
    with pytest.raises(ValueError):
        crop_flip(rng.random((3, 32, 32)), 9, 0, False, AugmentConfig())


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(flip_prob=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(std=(1.0, 0.0, 1.0))


# ---------- batching ----------
def test_epoch_order_is_seeded_permutation():
    a, b = epoch_order(100, 42, 0), epoch_order(100, 42, 0)
    np.testing.assert_array_equal(a, b)
    assert sorted(a.tolist()) == list(range(100))
    assert not np.array_equal(a, epoch_order(100, 42, 1))


def test_train_batches_shuffle_augment_and_keep_partial_batch():
    ds = _set(10)
    cfg = AugmentConfig()
    out = list(batches(ds, 4, shuffle_seed=42, epoch=0, cfg=cfg))
    assert [len(y) for _, y in out] == [4, 4, 2]
    assert out[0][0].shape == (4, 3, 32, 32) and out[0][0].dtype == np.float64
    seen = np.concatenate([y for _, y in out])
    np.testing.assert_array_equal(seen, ds.labels[epoch_order(10, 42, 0)])

    again = list(batches(ds, 4, shuffle_seed=42, epoch=0, cfg=cfg))
    for (x1, _), (x2, _) in zip(out, again):
        np.testing.assert_array_equal(x1, x2)


def test_test_batches_are_ordered_and_not_augmented():
    ds = _set(6, split="test")
    cfg = AugmentConfig(mean=(0.1, 0.2, 0.3), std=(0.5, 0.5, 0.5))
    out = list(batches(ds, 4, cfg=cfg))
    np.testing.assert_array_equal(np.concatenate([y for _, y in out]), ds.labels)
    expected = (ds.images[:4].astype(np.float64) - np.array([0.1, 0.2, 0.3]).reshape(1, 3, 1, 1)) / 0.5
    np.testing.assert_allclose(out[0][0], expected)


def test_batch_size_must_be_positive():
    with pytest.raises(ValueError):
        next(batches(_set(2), 0))
