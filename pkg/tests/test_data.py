import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparta import data as D


def reference_encode(images, labels):
    """CIFAR-10 records written field by field: label byte, then R, G, B planes row-major."""
    out = bytearray()
    for img, lab in zip(images, labels):
        out += struct.pack("B", int(lab))
        for ch in range(3):
            for row in range(32):
                for col in range(32):
                    out += struct.pack("B", int(img[row, col, ch]))
    return bytes(out)


class TestCifar:
    def test_single_record(self):
        data = bytes([7]) + bytes(range(256)) * 12
        ds = D.decode_cifar10(data)
        assert len(ds) == 1 and ds.labels[0] == 7
        assert ds.images[0, 0, 0, 0] == 0 and ds.images[0, 0, 1, 0] == 1
        assert ds.images[0, 0, 0, 1] == 1024 % 256  # G plane starts at byte 1024

    def test_zero_records(self):
        ds = D.decode_cifar10(bytes(2 * 3073))
        assert len(ds) == 2 and np.all(ds.labels == 0) and np.all(ds.images == 0)
        assert ds.images.shape == (2, 32, 32, 3)

    def test_round_trip_against_reference_encoder(self, rng, tmp_path):
        images = rng.integers(0, 256, size=(3, 32, 32, 3)).astype(np.float64)
        labels = rng.integers(0, 10, size=3)
        raw = reference_encode(images, labels)
        (tmp_path / "b.bin").write_bytes(raw)
        ds = D.load_cifar10(tmp_path / "b.bin")
        assert ds.images.tobytes() == images.tobytes()
        np.testing.assert_array_equal(ds.labels, labels)
        assert D.encode_cifar10(ds) == raw

    def test_truncated(self):
        with pytest.raises(D.DatasetError, match="multiple of 3073"):
            D.decode_cifar10(bytes(3074))

    def test_label_range(self):
        with pytest.raises(D.DatasetError, match="label"):
            D.decode_cifar10(bytes([10]) + bytes(3072))

    def test_directory(self, tmp_path):
        (tmp_path / "a.bin").write_bytes(bytes([1]) + bytes(3072))
        (tmp_path / "b.bin").write_bytes(bytes([2]) + bytes(3072))
        np.testing.assert_array_equal(D.load_cifar10(tmp_path).labels, [1, 2])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_loader_fuzz(n, seed):
    blob = np.random.default_rng(seed).integers(0, 256, n * 3073, dtype=np.uint8).tobytes()
    try:
        ds = D.decode_cifar10(blob)
    except D.DatasetError as e:
        assert "label" in str(e)
        return
    assert ds.labels.min() >= 0 and ds.labels.max() <= 9
    assert ds.images.min() >= 0 and ds.images.max() <= 255


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=3), st.integers(0, 2**32 - 1))
def test_loader_fuzz_valid_labels(labels, seed):
    r = np.random.default_rng(seed)
    blob = b"".join(bytes([lab]) + r.integers(0, 256, 3072, dtype=np.uint8).tobytes() for lab in labels)
    ds = D.decode_cifar10(blob)
    assert ds.labels.tolist() == labels
    assert ds.images.min() >= 0 and ds.images.max() <= 255


class TestGenericFile:
    def test_round_trip(self, tmp_path, rng):
        ds = D.Dataset(rng.uniform(0, 255, size=(5, 4, 4, 2)), rng.integers(0, 3, size=5), 3)
        D.save_dataset(ds, tmp_path / "d.bin")
        back = D.load_dataset(tmp_path / "d.bin")
        assert back.images.tobytes() == ds.images.tobytes()
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.class_count == 3
        lines = (tmp_path / "d.bin").read_bytes().split(b"\n")[:2]
        assert lines[0] == b"sparta-dataset 1"

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"nope\n")
        with pytest.raises(D.DatasetError):
            D.load_dataset(tmp_path / "x")


class TestDatasetInvariants:
    def test_label_range(self):
        with pytest.raises(D.DatasetError):
            D.Dataset(np.zeros((2, 2, 2, 1)), [0, 3], 3)

    def test_pixel_range(self):
        with pytest.raises(D.DatasetError):
            D.Dataset(np.full((1, 2, 2, 1), 300.0), [0], 2)


class TestSynth:
    def test_nearest_mean_perfect(self):
        spec = D.SynthSpec(10, 30, (8, 8, 3), 4, margin=200.0, noise=10.0)
        ds = D.make_synth(spec)
        means = np.stack([ds.images[ds.labels == c].mean(axis=0) for c in range(10)])
        d = ((ds.images[:, None] - means[None]) ** 2).sum(axis=(2, 3, 4))
        assert np.mean(np.argmin(d, axis=1) == ds.labels) == 1.0

    def test_class_means_separated_by_margin(self):
        spec = D.SynthSpec(10, 1, (8, 8, 3), 0, margin=120.0)
        mu = D.synth_means(spec)
        for a in range(10):
            for b in range(a):
                assert np.max(np.abs(mu[a] - mu[b])) == pytest.approx(120.0)

    def test_flip_symmetric_means(self):
        mu = D.synth_means(D.SynthSpec(extent=(10, 10, 3)))
        np.testing.assert_array_equal(mu, mu[:, :, ::-1, :])

    def test_deterministic(self):
        spec = D.SynthSpec(4, 5, (6, 6, 3), 11)
        a, b = D.make_synth(spec), D.make_synth(spec)
        assert a.images.tobytes() == b.images.tobytes() and a.labels.tobytes() == b.labels.tobytes()

    def test_splits_share_means_differ_in_samples(self):
        spec = D.SynthSpec(4, 5, (6, 6, 3), 11)
        assert D.make_synth(spec, "train").images.tobytes() != D.make_synth(spec, "test").images.tobytes()

    def test_margin_zero_identical_classes(self):
        spec = D.SynthSpec(10, 1, (8, 8, 3), 2, margin=0.0)
        mu = D.synth_means(spec)
        assert np.all(mu == mu[0])
        ds = D.make_synth(D.SynthSpec(10, 100, (4, 4, 3), 2, margin=0.0))
        means = np.stack([ds.images[ds.labels == c].mean(axis=0) for c in range(10)])
        acc = np.mean(np.argmin(((ds.images[:, None] - means[None]) ** 2).sum(axis=(2, 3, 4)), axis=1) == ds.labels)
        assert acc < 0.25

    def test_in_pixel_range(self):
        ds = D.make_synth(D.SynthSpec(3, 20, (4, 4, 3), noise=200.0))
        assert ds.images.min() >= 0 and ds.images.max() <= 255


class TestBatches:
    def _ds(self, n=23):
        r = np.random.default_rng(0)
        return D.Dataset(r.uniform(0, 255, size=(n, 4, 4, 3)), r.integers(0, 3, size=n), 3)

    def test_single_batch_is_permutation(self):
        ds = self._ds()
        (x, y), = list(D.batches(ds, len(ds), 5))
        assert sorted(map(bytes, x)) == sorted(map(bytes, ds.images))

    @pytest.mark.parametrize("bs", [1, 4, 7, 23, 50])
    def test_partition(self, bs):
        idx = np.concatenate(D.batch_indices(23, bs, 3))
        assert sorted(idx.tolist()) == list(range(23))
        sizes = [len(b) for b in D.batch_indices(23, bs, 3)]
        assert all(s == bs for s in sizes[:-1]) and sizes[-1] <= bs

    def test_no_augment_identity(self):
        ds = self._ds()
        for (x, _), idx in zip(D.batches(ds, 5, 2), D.batch_indices(len(ds), 5, 2)):
            assert x.tobytes() == ds.images[idx].tobytes()

    def test_augment_flips_some(self):
        ds = self._ds(200)
        flipped = kept = 0
        for (x, _), idx in zip(D.batches(ds, 50, 2, augment=True), D.batch_indices(len(ds), 50, 2)):
            src = ds.images[idx]
            f = np.all(x == src[:, :, ::-1], axis=(1, 2, 3))
            k = np.all(x == src, axis=(1, 2, 3))
            assert np.all(f | k)
            flipped += f.sum()
            kept += k.sum()
        assert 60 < flipped < 140

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            list(D.batches(self._ds(), 0))
