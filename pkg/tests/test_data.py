import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hylite import data as D
from hylite.errors import (BadMagic, DimOverflow, EmptySplit, FractionOutOfRange,
                           TruncatedPayload, UnlabeledCenter)


def small_cube(h=2, w=2, m=3, seed=0):
    rng = np.random.default_rng(seed)
    refl = rng.random((h, w, m)).astype(np.float32).astype(np.float64)
    labels = rng.integers(1, 3, size=(h, w))
    return D.HsiCube(refl, labels)


class TestFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        cube = small_cube()
        D.save_cube(tmp_path / "c.hsib", cube)
        back = D.load_cube(tmp_path / "c.hsib")
        assert back.reflectance.astype(np.float32).tobytes() == cube.reflectance.astype(np.float32).tobytes()
        assert np.array_equal(back.labels, cube.labels)

    def test_indian_pines_header_accepted(self, tmp_path):
        path = tmp_path / "ip.hsib"
        h, w, m = 145, 145, 224
        with open(path, "wb") as fh:
            fh.write(b"HSIB" + struct.pack("<5I", 1, h, w, m, 1))
            fh.write(np.zeros(h * w * m, dtype="<f4").tobytes())
        D.save_labels(tmp_path / "ip.hsil", np.ones((h, w), dtype=int))
        cube = D.load_cube(path)
        assert (cube.h, cube.w, cube.m) == (145, 145, 224)

    def test_truncated(self, tmp_path):
        cube = small_cube()
        D.save_cube(tmp_path / "c.hsib", cube)
        raw = (tmp_path / "c.hsib").read_bytes()
        (tmp_path / "c.hsib").write_bytes(raw[:-4])
        with pytest.raises(TruncatedPayload):
            D.load_cube(tmp_path / "c.hsib")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.hsib").write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(BadMagic):
            D.load_cube(tmp_path / "x.hsib")

    def test_dim_overflow(self, tmp_path):
        (tmp_path / "x.hsib").write_bytes(b"HSIB" + struct.pack("<5I", 1, 2**31, 2**31, 224, 1))
        with pytest.raises(DimOverflow):
            D.load_cube(tmp_path / "x.hsib")

    def test_missing_file(self, tmp_path):
        with pytest.raises(TruncatedPayload, match="no such file"):
            D.load_cube(tmp_path / "absent.hsib")

    def test_split_round_trip(self, tmp_path):
        split = D.SplitList.from_entries([(0, 1, 2), (1, 0, 1)])
        D.save_split(tmp_path / "s.csv", split)
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "row,col,class"
        assert D.load_split(tmp_path / "s.csv").entries() == split.entries()


class TestNormalize:
    def test_min_max(self):
        refl = np.array([2.0, 4.0, 6.0]).reshape(1, 3, 1)
        out = D.normalize_bands(D.HsiCube(refl, np.ones((1, 3), int)))
        assert np.array_equal(out.reflectance.ravel(), [0.0, 0.5, 1.0])

    def test_constant_band(self):
        refl = np.full((2, 2, 2), 7.0)
        refl[..., 1] = [[1, 2], [3, 4]]
        out = D.normalize_bands(D.HsiCube(refl, np.ones((2, 2), int)))
        assert np.all(out.reflectance[..., 0] == 0.0)

    def test_idempotent(self):
        once = D.normalize_bands(small_cube(4, 5, 6))
        twice = D.normalize_bands(once)
        np.testing.assert_allclose(twice.reflectance, once.reflectance, rtol=0, atol=1e-15)

    def test_zscore(self):
        out = D.normalize_bands(small_cube(6, 6, 3), "zscore").reflectance
        np.testing.assert_allclose(out.mean(axis=(0, 1)), 0.0, atol=1e-12)


class TestPatchify:
    def test_constant_bands(self):
        m, p = 4, 5
        refl = np.broadcast_to(np.arange(1.0, m + 1), (7, 7, m)).copy()
        cube = D.HsiCube(refl, np.ones((7, 7), int))
        inst = D.patchify(cube, (3, 3), p)
        for b in range(m):
            assert np.all(inst[b] == b + 1)

    def test_corner_reflection(self):
        ramp = np.arange(9.0).reshape(3, 3, 1)
        cube = D.HsiCube(ramp, np.ones((3, 3), int))
        # reflection-index oracle: -1 -> 1 on each axis
        expected = [[4, 3, 4], [1, 0, 1], [4, 3, 4]]
        assert np.array_equal(D.patchify(cube, (0, 0), 3).reshape(3, 3), expected)

    def test_shape_contract(self):
        cube = small_cube(6, 7, 5)
        cube.labels[:] = 1
        assert D.patchify(cube, (2, 3), 3).shape == (5, 9)

    def test_unlabeled_center(self):
        cube = small_cube(3, 3, 2)
        cube.labels[1, 1] = 0
        with pytest.raises(UnlabeledCenter):
            D.patchify(cube, (1, 1), 3)

    @pytest.mark.parametrize("p", [1, 3, 5, 7])
    def test_border_fuzz_centre_column(self, p):
        cube = small_cube(5, 5, 3, seed=p)
        cube.labels[:] = 1
        for r in range(5):
            for c in range(5):
                inst = D.patchify(cube, (r, c), p)
                assert inst.shape == (3, p * p) and np.all(np.isfinite(inst))
                assert np.array_equal(inst[:, p * p // 2], cube.reflectance[r, c])

    def test_reflect_index_in_range(self):
        for n in (1, 2, 3, 5):
            for i in range(-12, 12 + n):
                assert 0 <= D.reflect_index(i, n) < n

    def test_source_matches_patchify(self):
        cube = small_cube(5, 6, 4)
        cube.labels[:] = 1
        src = D.PatchSource(cube, 5)
        rows, cols = np.array([0, 4, 2]), np.array([5, 0, 3])
        batch = src.instances(rows, cols)
        for i in range(3):
            assert np.array_equal(batch[i], D.patchify(cube, (rows[i], cols[i]), 5))


def ip_like_split():
    counts = [50] * 13 + [15] * 3
    entries = []
    for k, n in enumerate(counts, start=1):
        entries += [(k, j, k) for j in range(n)]
    return D.HsiCube(np.zeros((17, 60, 2)), np.zeros((17, 60), int)), D.SplitList.from_entries(entries)


class TestBatches:
    def test_695_in_batches_of_32(self):
        cube, split = ip_like_split()
        cube.labels[split.rows, split.cols] = split.classes
        sizes = [len(b.targets) for b in D.make_batches(cube, split, 3, 32, seed=0)]
        assert len(split) == 695
        assert sizes == [32] * 21 + [23]

    def test_same_seed_same_order(self):
        cube, split = ip_like_split()
        cube.labels[split.rows, split.cols] = split.classes
        a = [b.targets for b in D.make_batches(cube, split, 1, 32, seed=3)]
        b = [b.targets for b in D.make_batches(cube, split, 1, 32, seed=3)]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_unshuffled_is_file_order(self):
        cube, split = ip_like_split()
        cube.labels[split.rows, split.cols] = split.classes
        got = np.concatenate([b.targets for b in D.make_batches(cube, split, 1, 32, shuffle=False)])
        assert np.array_equal(got, split.classes)

    def test_shuffled_union_is_split(self):
        cube, split = ip_like_split()
        cube.labels[split.rows, split.cols] = split.classes
        got = np.concatenate([b.targets for b in D.make_batches(cube, split, 1, 32, seed=9)])
        assert np.array_equal(np.sort(got), np.sort(split.classes))

    def test_empty(self):
        cube, _ = ip_like_split()
        with pytest.raises(EmptySplit):
            list(D.make_batches(cube, D.SplitList.from_entries([]), 1, 32))


class TestSubsample:
    def test_full_fraction_identity(self):
        _, split = ip_like_split()
        assert D.subsample_split(split, 1.0, 0).entries() == split.entries()

    def test_ten_percent_of_fifty(self):
        _, split = ip_like_split()
        sub = D.subsample_split(split, 0.1, 0)
        counts = sub.class_counts(16)
        assert list(counts[:13]) == [5] * 13
        assert list(counts[13:]) == [1] * 3

    def test_seeds_differ_same_sizes(self):
        _, split = ip_like_split()
        a, b = D.subsample_split(split, 0.3, 1), D.subsample_split(split, 0.3, 2)
        assert np.array_equal(a.class_counts(16), b.class_counts(16))
        assert a.entries() != b.entries()

    @given(st.integers(0, 10_000), st.integers(1, 9))
    def test_monotone(self, seed, tenths):
        _, split = ip_like_split()
        small = set(D.subsample_split(split, tenths / 10, seed).entries())
        big = set(D.subsample_split(split, (tenths + 1) / 10, seed).entries())
        assert small <= big

    @pytest.mark.parametrize("f", [0.0, -0.1, 1.5])
    def test_out_of_range(self, f):
        _, split = ip_like_split()
        with pytest.raises(FractionOutOfRange):
            D.subsample_split(split, f, 0)


class TestSynth:
    def test_noise_free_equals_prototype(self):
        cube = D.synth_generate(16, 16, 10, 4, noise=0.0, seed=0)
        protos = D.synth_prototypes(10, 4, (3, 4))
        for k in range(1, 5):
            assert np.array_equal(cube.reflectance[cube.labels == k], np.tile(protos[k - 1], ((cube.labels == k).sum(), 1)))

    def test_covers_all_classes(self):
        cube = D.synth_generate(32, 32, 24, 4, 0.05, seed=1)
        assert set(np.unique(cube.labels)) >= {1, 2, 3, 4}

    def test_deterministic(self):
        a = D.synth_generate(8, 8, 5, 4, 0.05, seed=7)
        b = D.synth_generate(8, 8, 5, 4, 0.05, seed=7)
        assert a.reflectance.tobytes() == b.reflectance.tobytes()

    def test_confusable_pair_is_chance_for_nearest_prototype(self):
        cube = D.synth_generate(32, 32, 24, 4, 0.05, seed=0)
        protos = D.synth_prototypes(24, 4, (3, 4))
        mask = cube.labels >= 3
        pred = D.nearest_prototype(cube.reflectance[mask], protos)
        truth = cube.labels[mask]
        # pixels of the pair land on either prototype at random
        assert np.all(np.isin(pred, [3, 4]))
        acc = [(pred[truth == k] == k).mean() for k in (3, 4)]
        assert 0.35 <= np.mean(acc) <= 0.65

    def test_other_classes_are_separable(self):
        cube = D.synth_generate(32, 32, 24, 4, 0.05, seed=0)
        protos = D.synth_prototypes(24, 4, (3, 4))
        mask = (cube.labels == 1) | (cube.labels == 2)
        pred = D.nearest_prototype(cube.reflectance[mask], protos)
        assert (pred == cube.labels[mask]).mean() > 0.99

    def test_split_per_class(self):
        cube = D.synth_generate(32, 32, 24, 4, 0.05, seed=0)
        train, test = D.split_per_class(cube, 20, seed=0)
        assert list(train.class_counts(4)) == [20] * 4
        assert not set(train.entries()) & set(test.entries())
        train.validate(cube)
        test.validate(cube)
