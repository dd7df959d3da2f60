"""Synthetic data generation and the binary container format."""

import numpy as np
import pytest

from mhnes.data import (
    DataFormatError,
    MAGIC,
    gen_synthetic,
    load_raw,
    nearest_template_accuracy,
    save_bundle,
)


class TestGeneration:
    def test_same_seed_byte_identical(self, tmp_path):
        a = gen_synthetic(classes=4, n_train=50, n_val=20, n_test=20, seed=3)
        b = gen_synthetic(classes=4, n_train=50, n_val=20, n_test=20, seed=3)
        for split in ("train", "val", "test"):
            np.testing.assert_array_equal(a.split(split)[0], b.split(split)[0])
            np.testing.assert_array_equal(a.split(split)[1], b.split(split)[1])
        pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
        save_bundle(a, pa)
        save_bundle(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_different_seed_differs(self):
        a = gen_synthetic(n_train=50, n_val=20, n_test=20, seed=1)
        b = gen_synthetic(n_train=50, n_val=20, n_test=20, seed=2)
        assert not np.array_equal(a.train_x, b.train_x)

    def test_values_in_unit_interval(self):
        b = gen_synthetic(n_train=40, n_val=20, n_test=20, seed=0)
        for split in ("train", "val", "test"):
            x, _ = b.split(split)
            assert x.min() >= 0.0 and x.max() <= 1.0
            assert x.shape[1] == 1

    @pytest.mark.parametrize("n,classes", [(40, 4), (41, 4), (43, 4), (50, 3)])
    def test_labels_balanced_within_one(self, n, classes):
        b = gen_synthetic(classes=classes, n_train=n, n_val=20, n_test=20, seed=0)
        counts = np.bincount(b.train_y, minlength=classes)
        assert counts.max() - counts.min() <= 1

    def test_template_classifier_far_above_chance(self):
        b = gen_synthetic(classes=4, n_train=50, n_val=20, n_test=200, seed=9)
        acc = nearest_template_accuracy(b)
        assert acc > 2 / 4
        assert acc > 0.9  # the signal is strong at the default noise level

    def test_parameter_validation(self):
        with pytest.raises(ValueError, match="classes"):
            gen_synthetic(classes=1)
        with pytest.raises(ValueError, match="image size"):
            gen_synthetic(image_size=4)


class TestBinaryFormat:
    def test_roundtrip_equality(self, tmp_path):
        b = gen_synthetic(classes=5, n_train=30, n_val=10, n_test=12, seed=4)
        p = tmp_path / "d.bin"
        save_bundle(b, p)
        loaded = load_raw(p)
        assert loaded.classes == 5
        for split in ("train", "val", "test"):
            np.testing.assert_array_equal(b.split(split)[0], loaded.split(split)[0])
            np.testing.assert_array_equal(b.split(split)[1], loaded.split(split)[1])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOTMAG1" + b"\0" * 64)
        with pytest.raises(DataFormatError, match="bad magic"):
            load_raw(p)

    def test_truncation_names_expected_and_actual(self, tmp_path):
        b = gen_synthetic(n_train=10, n_val=5, n_test=5, seed=0)
        p = tmp_path / "t.bin"
        save_bundle(b, p)
        blob = p.read_bytes()
        p.write_bytes(blob[: len(blob) - 7])
        with pytest.raises(DataFormatError, match=r"expected \d+ bytes, found \d+"):
            load_raw(p)

    def test_label_out_of_range_names_record(self, tmp_path):
        b = gen_synthetic(classes=4, n_train=10, n_val=5, n_test=5, seed=0)
        p = tmp_path / "l.bin"
        save_bundle(b, p)
        blob = bytearray(p.read_bytes())
        # labels: u16 per split, trailing the file; corrupt train record 3
        label_bytes = (10 + 5 + 5) * 2
        offset = len(blob) - label_bytes + 3 * 2
        blob[offset : offset + 2] = (4).to_bytes(2, "little")
        p.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError, match="record 3 of split train"):
            load_raw(p)

    def test_magic_constant(self):
        assert MAGIC == b"MHNES1\0"

    def test_header_too_short(self, tmp_path):
        p = tmp_path / "h.bin"
        p.write_bytes(MAGIC + b"\x01\x00")
        with pytest.raises(DataFormatError, match="truncated header"):
            load_raw(p)
