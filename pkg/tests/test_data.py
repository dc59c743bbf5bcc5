"""Hierarchy handling, mixture generation, views, and CSV round trips."""

import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from melkit.data import (
    COARSE,
    FINE,
    LabelHierarchy,
    SyntheticSpec,
    coarsify,
    gen_hierarchical,
    load_csv,
    process_dataset,
    save_csv,
)
from melkit.ensemble import SubsetId

SMALL = SyntheticSpec(coarse_classes=3, fine_per_coarse=2, dim=8, samples_per_class=20, spread_ratio=0.3, seed=5)


class TestHierarchy:
    def test_even_layout(self):
        h = LabelHierarchy.even(2, 3)
        assert h.fine_to_coarse == (0, 0, 0, 1, 1, 1)
        assert h.num_fine == 6
        assert h.num_coarse == 2

    def test_gap_in_coarse_labels_rejected(self):
        with pytest.raises(ValueError):
            LabelHierarchy((0, 2))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            LabelHierarchy(())

    @given(st.integers(min_value=1, max_value=5), st.integers(min_value=1, max_value=5))
    def test_even_is_total_and_balanced(self, coarse, fine_per):
        h = LabelHierarchy.even(coarse, fine_per)
        counts = np.bincount(np.asarray(h.fine_to_coarse), minlength=coarse)
        assert counts.tolist() == [fine_per] * coarse


class TestCoarsify:
    def test_maps_through_table(self):
        h = LabelHierarchy.even(2, 2)
        got = coarsify(np.array([0, 1, 2, 3, 3, 0]), h)
        np.testing.assert_array_equal(got, [0, 0, 1, 1, 1, 0])

    def test_five_fine_one_coarse_group(self):
        # a 5-wide group, like a produce superclass over five item kinds
        h = LabelHierarchy.even(2, 5)
        np.testing.assert_array_equal(coarsify(np.arange(5), h), np.zeros(5))
        np.testing.assert_array_equal(coarsify(np.arange(5, 10), h), np.ones(5))

    def test_out_of_range_rejected(self):
        h = LabelHierarchy.even(2, 2)
        with pytest.raises(ValueError):
            coarsify(np.array([4]), h)
        with pytest.raises(ValueError):
            coarsify(np.array([-1]), h)

    @given(st.lists(st.integers(min_value=0, max_value=11), min_size=1, max_size=30))
    def test_composition_matches_per_element_lookup(self, labels):
        h = LabelHierarchy.even(3, 4)
        got = coarsify(np.array(labels), h)
        assert got.tolist() == [h.fine_to_coarse[f] for f in labels]


class TestGeneration:
    def test_counts_and_stratification(self):
        data = gen_hierarchical(SMALL)
        assert len(data) == SMALL.num_samples
        for tag, want in (("train", 14), ("val", 3), ("test", 3)):
            part = data.subset(tag)
            counts = np.bincount(part.fine, minlength=SMALL.num_fine)
            assert counts.tolist() == [want] * SMALL.num_fine

    def test_splits_disjoint_and_cover(self):
        data = gen_hierarchical(SMALL)
        sizes = [len(data.subset(t)) for t in ("train", "val", "test")]
        assert sum(sizes) == len(data)

    def test_coarse_consistent_with_hierarchy(self):
        data = gen_hierarchical(SMALL)
        np.testing.assert_array_equal(data.coarse, coarsify(data.fine, data.hierarchy))

    def test_same_seed_identical(self):
        a = gen_hierarchical(SMALL)
        b = gen_hierarchical(SMALL)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.fine, b.fine)
        np.testing.assert_array_equal(a.split, b.split)

    def test_different_seed_differs(self):
        a = gen_hierarchical(SMALL)
        b = gen_hierarchical(SyntheticSpec(**{**SMALL.__dict__, "seed": 6}))
        assert not np.array_equal(a.features, b.features)

    def test_huge_separation_linear_probe_is_perfect(self):
        # two far-apart coarse blobs, one fine class each: least squares to
        # one-hot labels classifies the held-out split perfectly
        spec = SyntheticSpec(coarse_classes=2, fine_per_coarse=1, dim=8, samples_per_class=50, spread_ratio=0.02, seed=0)
        data = gen_hierarchical(spec)
        train, test = data.subset("train"), data.subset("test")
        onehot = np.eye(2)[train.coarse]
        x_train = np.hstack([train.features, np.ones((len(train), 1))])
        w, *_ = np.linalg.lstsq(x_train, onehot, rcond=None)
        x_test = np.hstack([test.features, np.ones((len(test), 1))])
        pred = np.argmax(x_test @ w, axis=1)
        assert (pred == test.coarse).all()

    def test_ratio_must_leave_coarse_easier(self):
        with pytest.raises(ValueError):
            SyntheticSpec(spread_ratio=1.0)
        with pytest.raises(ValueError):
            SyntheticSpec(spread_ratio=0.0)

    def test_tiny_split_rejected(self):
        with pytest.raises(ValueError):
            gen_hierarchical(SyntheticSpec(samples_per_class=3))


class TestViews:
    def test_fine_and_coarse_views(self):
        data = gen_hierarchical(SMALL)
        s = SubsetId.of(1)
        fine_view = process_dataset(data, s, {s: FINE})
        coarse_view = process_dataset(data, s, {s: COARSE})
        assert fine_view.num_classes == SMALL.num_fine
        assert coarse_view.num_classes == SMALL.coarse_classes
        np.testing.assert_array_equal(fine_view.labels, data.fine)
        np.testing.assert_array_equal(coarse_view.labels, data.coarse)

    def test_features_shared_not_copied(self):
        data = gen_hierarchical(SMALL)
        view = process_dataset(data, SubsetId.of(1), None)
        assert view.features is data.features

    def test_default_granularity_is_fine(self):
        data = gen_hierarchical(SMALL)
        view = process_dataset(data, SubsetId.of(2), {SubsetId.of(1): COARSE})
        assert view.granularity == FINE

    def test_unknown_granularity_rejected(self):
        data = gen_hierarchical(SMALL)
        with pytest.raises(ValueError):
            process_dataset(data, SubsetId.of(1), {SubsetId.of(1): "medium"})


class TestCsv:
    def test_round_trip_exact(self, tmp_path):
        data = gen_hierarchical(SMALL)
        path = tmp_path / "data.csv"
        save_csv(data, path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.features, data.features)
        np.testing.assert_array_equal(back.fine, data.fine)
        np.testing.assert_array_equal(back.coarse, data.coarse)
        np.testing.assert_array_equal(back.split, data.split)
        assert back.hierarchy == data.hierarchy

    def test_checksum_stable_across_runs(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        save_csv(gen_hierarchical(SMALL), a)
        save_csv(gen_hierarchical(SMALL), b)
        assert hashlib.sha256(a.read_bytes()).hexdigest() == hashlib.sha256(b.read_bytes()).hexdigest()

    def test_inconsistent_hierarchy_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,fine,coarse,split\n0.0,0,0,train\n1.0,0,1,train\n")
        with pytest.raises(ValueError):
            load_csv(path)
