import tempfile
from pathlib import Path

import numpy as np
from numpy.testing import assert_array_equal
from django.test import SimpleTestCase

from config.exceptions import ConfigError, DatasetParseError, EpisodeShapeError, SplitViolationError
from .datasets import gen_synthetic, load_dataset, save_dataset, split_counts
from .models import Dataset, DatasetClass, RngStream, Split, make_rng
from .sampling import sample_episode


def small_dataset(seed=7, **kwargs):
    options = dict(n_classes=10, per_class=50, dim=16, spread=0.5, separation=5.0)
    options.update(kwargs)
    return gen_synthetic(rng=make_rng(seed, RngStream.SYNTHETIC), **options)


class SyntheticGeneratorTestCase(SimpleTestCase):

    def test_split_counts_follow_fractions(self):
        ds = small_dataset()
        self.assertEqual(len(ds.split_classes(Split.TRAIN)), 6)
        self.assertEqual(len(ds.split_classes(Split.VAL)), 2)
        self.assertEqual(len(ds.split_classes(Split.TEST)), 2)
        self.assertEqual(ds.n_train_classes, 6)
        self.assertEqual(ds.dim, 16)
        self.assertTrue(all(c.n_rows == 50 for c in ds.classes))

    def test_three_classes_is_feasible(self):
        self.assertEqual(split_counts(3, (0.6, 0.2, 0.2)), (1, 1, 1))

    def test_infeasible_splits(self):
        with self.assertRaises(ConfigError):
            split_counts(2, (0.6, 0.2, 0.2))
        with self.assertRaises(ConfigError):
            split_counts(10, (0.5, 0.5, 0.0))
        with self.assertRaises(ConfigError):
            split_counts(10, (0.6, 0.3, 0.3))

    def test_zero_spread_gives_identical_samples(self):
        ds = small_dataset(spread=0.0)
        for cls in ds.classes:
            assert_array_equal(cls.features, np.broadcast_to(cls.features[0], cls.features.shape))

    def test_same_seed_is_bit_identical(self):
        first, second = small_dataset(seed=3), small_dataset(seed=3)
        for a, b in zip(first.classes, second.classes):
            self.assertEqual((a.class_id, a.split), (b.class_id, b.split))
            self.assertEqual(a.features.tobytes(), b.features.tobytes())

    def test_means_stay_inside_hypercube(self):
        ds = small_dataset(spread=0.0, separation=2.0)
        for cls in ds.classes:
            self.assertTrue(np.all(np.abs(cls.features[0]) <= 2.0))


class DatasetFileTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text, meta="name=toy\ndim=4\nn_train_classes=1\n"):
        path = self.dir / "toy.csv"
        path.write_text(text, encoding="utf-8")
        (self.dir / "toy.meta").write_text(meta, encoding="utf-8")
        return path

    def test_round_trip_is_bit_exact(self):
        ds = small_dataset(n_classes=5, per_class=6, dim=4)
        path = save_dataset(ds, self.dir / "synth.csv")
        loaded = load_dataset(path)
        self.assertEqual(loaded.name, ds.name)
        self.assertEqual(loaded.n_train_classes, ds.n_train_classes)
        for a, b in zip(ds.classes, loaded.classes):
            self.assertEqual((a.class_id, a.split), (b.class_id, b.split))
            self.assertEqual(a.features.tobytes(), b.features.tobytes())

    def test_save_is_deterministic(self):
        ds = small_dataset(n_classes=4, per_class=3, dim=2)
        first = save_dataset(ds, self.dir / "a.csv").read_bytes()
        second = save_dataset(ds, self.dir / "b.csv").read_bytes()
        self.assertEqual(first, second)

    def test_three_class_file(self):
        path = self.write(
            "class_id,split,f0,f1,f2,f3\n"
            "0,train,1,2,3,4\n"
            "1,val,1,2,3,4.5\n"
            "2,test,0,0,0,1e-3\n"
        )
        ds = load_dataset(path)
        self.assertEqual(ds.dim, 4)
        self.assertEqual(len(ds.classes), 3)

    def test_class_in_two_splits(self):
        path = self.write(
            "class_id,split,f0,f1,f2,f3\n"
            "0,train,1,2,3,4\n"
            "0,test,1,2,3,4\n"
        )
        with self.assertRaises(SplitViolationError):
            load_dataset(path)

    def test_short_row_names_line(self):
        path = self.write(
            "class_id,split,f0,f1,f2,f3\n"
            "0,train,1,2,3,4\n"
            "1,test,1,2,3\n"
        )
        with self.assertRaises(DatasetParseError) as ctx:
            load_dataset(path)
        self.assertEqual(ctx.exception.line, 3)

    def test_non_numeric_cell(self):
        path = self.write(
            "class_id,split,f0,f1,f2,f3\n"
            "0,train,1,two,3,4\n"
        )
        with self.assertRaisesMessage(DatasetParseError, "line 2"):
            load_dataset(path)

    def test_manifest_dim_mismatch(self):
        path = self.write("class_id,split,f0,f1,f2\n0,train,1,2,3\n")
        with self.assertRaisesMessage(DatasetParseError, "line 1"):
            load_dataset(path)

    def test_manifest_train_count_mismatch(self):
        path = self.write(
            "class_id,split,f0,f1,f2,f3\n0,train,1,2,3,4\n",
            meta="name=toy\ndim=4\nn_train_classes=3\n",
        )
        with self.assertRaises(DatasetParseError):
            load_dataset(path)


class EpisodeSamplerTestCase(SimpleTestCase):

    def setUp(self):
        self.ds = small_dataset()

    def test_five_way_one_shot_fifteen_query_shape(self):
        ep = sample_episode(self.ds, Split.TRAIN, 5, 1, 15, make_rng(1))
        self.assertEqual(ep.support.shape, (5, 16))
        self.assertEqual(ep.query.shape, (75, 16))
        assert_array_equal(ep.support_labels, np.arange(5))
        assert_array_equal(np.bincount(ep.query_labels), [15] * 5)

    def test_block_contiguous_labels_and_disjoint_rows(self):
        rng = make_rng(2)
        for _ in range(50):
            ep = sample_episode(self.ds, Split.TRAIN, 4, 3, 5, rng)
            assert_array_equal(ep.support_labels, np.arange(ep.support.shape[0]) // 3)
            self.assertFalse(set(ep.support_rows) & set(ep.query_rows))
            self.assertEqual(len(set(ep.class_map.tolist())), 4)
            assert_array_equal(ep.query_global, ep.class_map[ep.query_labels])
            self.assertTrue(np.all(ep.class_map < self.ds.n_train_classes))

    def test_all_classes_once(self):
        ep = sample_episode(self.ds, Split.TRAIN, 6, 1, 1, make_rng(4))
        self.assertEqual(sorted(ep.class_map.tolist()), list(range(6)))

    def test_insufficient_samples_and_classes(self):
        with self.assertRaises(EpisodeShapeError):
            sample_episode(self.ds, Split.TRAIN, 5, 40, 15, make_rng(0))
        with self.assertRaises(EpisodeShapeError):
            sample_episode(self.ds, Split.VAL, 3, 1, 1, make_rng(0))

    def test_reproducible(self):
        a = sample_episode(self.ds, Split.TRAIN, 5, 2, 3, make_rng(9, RngStream.TRAIN, 0))
        b = sample_episode(self.ds, Split.TRAIN, 5, 2, 3, make_rng(9, RngStream.TRAIN, 0))
        self.assertEqual(a.support.tobytes(), b.support.tobytes())
        self.assertEqual(a.query.tobytes(), b.query.tobytes())
        assert_array_equal(a.class_map, b.class_map)

    def test_relabel_keeps_block_layout(self):
        ep = sample_episode(self.ds, Split.TRAIN, 3, 2, 2, make_rng(5))
        moved = ep.relabel([2, 0, 1])
        assert_array_equal(moved.support_labels, [0, 0, 1, 1, 2, 2])
        assert_array_equal(moved.support[4:6], ep.support[0:2])
        self.assertEqual(moved.class_map[2], ep.class_map[0])

    def test_dataset_rejects_duplicate_class(self):
        feats = np.zeros((2, 2))
        with self.assertRaises(SplitViolationError):
            Dataset("dup", 2, [DatasetClass(0, "train", feats), DatasetClass(0, "test", feats)])
