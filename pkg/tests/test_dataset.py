import struct

import numpy as np
import pytest

from gklkit.dataset import (
    IMAGE_BOX,
    IdxFormatError,
    LabeledDataset,
    load_idx,
    long_tail_counts,
    make_blobs,
    make_spirals,
    write_idx,
)
from gklkit.numerics import Rng


class TestBlobs:
    def test_zero_sigma_hits_means(self):
        d = make_blobs(Rng(0), 4, 3, radius=2.0, sigma=0.0)
        angles = 2 * np.pi * d.labels / 4
        np.testing.assert_allclose(d.inputs, 2.0 * np.stack([np.cos(angles), np.sin(angles)], 1), atol=1e-15)

    def test_two_class_means(self):
        d = make_blobs(Rng(0), 2, 1, radius=1.0, sigma=0.0)
        np.testing.assert_allclose(d.inputs, [[1.0, 0.0], [-1.0, 0.0]], atol=1e-15)

    def test_counts(self):
        d = make_blobs(Rng(0), 2, [100, 5])
        assert len(d) == 105
        assert (d.labels == 1).sum() == 5
        np.testing.assert_array_equal(d.class_counts(), [100, 5])

    def test_deterministic(self):
        a, b = make_blobs(Rng(9, 10), 3, 20), make_blobs(Rng(9, 10), 3, 20)
        np.testing.assert_array_equal(a.inputs, b.inputs)

    def test_errors(self):
        with pytest.raises(ValueError, match="zero"):
            make_blobs(Rng(0), 3, 0)
        with pytest.raises(ValueError):
            make_blobs(Rng(0), 1, 5)
        with pytest.raises(ValueError):
            make_blobs(Rng(0), 2, [3, -1])

    def test_long_tail_profile(self):
        counts = long_tail_counts(500, 10, 0.05)
        assert counts[0] == 500 and counts[-1] == 25
        assert np.all(np.diff(counts) <= 0)
        np.testing.assert_allclose(counts, np.round(500 * 0.05 ** (np.arange(10) / 9)))


class TestSpirals:
    def test_noise_free_on_arms(self):
        d = make_spirals(Rng(0), 50, noise=0.0, turns=1.5)
        t = np.arange(1, 51) / 50
        arm = np.stack([t * np.cos(3 * np.pi * t), t * np.sin(3 * np.pi * t)], 1)
        np.testing.assert_allclose(d.inputs[:50], arm, atol=1e-15)
        np.testing.assert_allclose(d.inputs[50:], -arm, atol=1e-15)

    def test_balanced(self):
        d = make_spirals(Rng(0), 37, noise=0.1)
        np.testing.assert_array_equal(d.class_counts(), [37, 37])

    def test_deterministic(self):
        np.testing.assert_array_equal(make_spirals(Rng(3), 20, 0.2).inputs, make_spirals(Rng(3), 20, 0.2).inputs)


class TestLabeledDataset:
    def test_validation(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2)), [0, 1], 2)
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 2)), [0, 2], 2)

    def test_subset(self):
        d = make_blobs(Rng(0), 3, 4)
        s = d.subset([0, 5])
        assert len(s) == 2 and s.dim == 2 and s.num_classes == 3


def _write(path, data):
    path.write_bytes(data)
    return str(path)


class TestIdx:
    def test_hand_built_fixture(self, tmp_path):
        images = struct.pack(">4I", 0x803, 2, 2, 2) + bytes([0, 255, 51, 102, 255, 0, 0, 153])
        labels = struct.pack(">2I", 0x801, 2) + bytes([1, 0])
        d = load_idx(_write(tmp_path / "i", images), _write(tmp_path / "l", labels))
        np.testing.assert_array_equal(d.inputs, [[0.0, 1.0, 0.2, 0.4], [1.0, 0.0, 0.0, 0.6]])
        np.testing.assert_array_equal(d.labels, [1, 0])
        assert d.box == IMAGE_BOX and d.num_classes == 2

    def test_bad_magic(self, tmp_path):
        images = struct.pack(">4I", 0, 1, 1, 1) + b"\x00"
        labels = struct.pack(">2I", 0x801, 1) + b"\x00"
        with pytest.raises(IdxFormatError, match="bad magic"):
            load_idx(_write(tmp_path / "i", images), _write(tmp_path / "l", labels))

    def test_count_mismatch(self, tmp_path):
        images = struct.pack(">4I", 0x803, 3, 1, 1) + b"\x00\x01\x02"
        labels = struct.pack(">2I", 0x801, 2) + b"\x00\x01"
        with pytest.raises(IdxFormatError, match="mismatch"):
            load_idx(_write(tmp_path / "i", images), _write(tmp_path / "l", labels))

    def test_truncated(self, tmp_path):
        labels = struct.pack(">2I", 0x801, 2) + b"\x00\x01"
        short = struct.pack(">4I", 0x803, 2, 2, 2) + b"\x00" * 7
        with pytest.raises(IdxFormatError, match="truncated payload"):
            load_idx(_write(tmp_path / "i", short), _write(tmp_path / "l", labels))
        with pytest.raises(IdxFormatError, match="truncated header"):
            load_idx(_write(tmp_path / "j", b"\x00\x00\x08"), _write(tmp_path / "l", labels))

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
        labs = rng.integers(0, 10, size=5).astype(np.uint8)
        write_idx(tmp_path / "i", tmp_path / "l", imgs, labs)
        d = load_idx(tmp_path / "i", tmp_path / "l", num_classes=10)
        np.testing.assert_array_equal(d.inputs, imgs.reshape(5, 12) / 255.0)
        np.testing.assert_array_equal(d.labels, labs)
