import numpy as np
import pytest

from conftest import random_labeled_dataset
from pcrf.features import (StaticFeatureSpace, estimate_threshold_ranges,
                           sample_candidates)
from pcrf.forest import (Forest, HyperParams, best_split, build_balanced_bootstrap,
                         gini, grow_tree, oob_accuracy, pairwise_profile,
                         select_split, static_profile, train_forest)
from pcrf.frames import Dataset, LandmarkFrame
from pcrf.serialize import forest_from_bytes, forest_text_dump, forest_to_bytes


class TestGini:
    def test_homogeneous(self):
        assert gini((10, 0)) == 0.0

    def test_even_split(self):
        assert gini((5, 5)) == 0.5

    def test_four_way(self):
        assert gini((1, 1, 1, 1)) == 0.75

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            gini((0, 0))


class TestHyperParams:
    def test_table_defaults(self):
        hp = static_profile()
        assert hp.k == (40, 40, 160, 0, 0, 0)
        assert hp.total_candidates == 6000
        assert hp.n_trees == 500
        assert hp.data_ratio == pytest.approx(2 / 3)
        hp = pairwise_profile()
        assert hp.k == (20, 20, 80, 20, 20, 80)
        assert hp.total_candidates == 6000

    def test_validation(self):
        with pytest.raises(ValueError):
            HyperParams(n_trees=0)
        with pytest.raises(ValueError):
            HyperParams(data_ratio=0.0)
        with pytest.raises(ValueError):
            HyperParams(impurity="entropy")


def oracle_best_split(space, samples, candidates, n_labels):
    """Exhaustive enumeration over candidates with integer-count Gini."""
    from pcrf.forest import space_labels

    y = space_labels(space, samples)
    n = len(samples)
    best_H = np.inf
    best_idx = None
    for idx, cand in enumerate(candidates):
        vals = np.array([space.eval_descriptor(cand, s) for s in samples])
        left = vals < cand.threshold
        nl = int(left.sum())
        nr = n - nl
        if nl == 0 or nr == 0:
            continue
        cl = np.bincount(y[left], minlength=n_labels).astype(np.int64)
        cr = np.bincount(y[~left], minlength=n_labels).astype(np.int64)
        nlf, nrf = float(nl), float(nr)
        gl = 1.0 - float((cl.astype(np.float64) ** 2).sum()) / (nlf * nlf)
        gr = 1.0 - float((cr.astype(np.float64) ** 2).sum()) / (nrf * nrf)
        H = (nlf * gl + nrf * gr) / float(n)
        if H < best_H:
            best_H = H
            best_idx = idx
    return best_idx


class TestBestSplit:
    def test_perfect_separator_wins(self):
        # single feature separating the labels perfectly at theta = 0.5
        ds = random_labeled_dataset(seed=1, n_subjects=2, frames_per_subject=10,
                                    n_labels=2)
        space = StaticFeatureSpace(ds)
        samples = np.arange(20)
        vals = np.array([space.eval_descriptor(_desc(3, 7, 0.0), s) for s in samples])
        cut = np.median(vals)
        # relabel so the candidate at the median separates exactly
        for i, s in enumerate(samples):
            ds.frames[s].label = ds.labels[0] if vals[i] < cut else ds.labels[1]
        ds._build_index()
        good = _desc(3, 7, float(cut))
        bad = _desc(10, 11, -1.0)  # all values >= 0: degenerate split
        chosen = best_split(space, samples, [bad, good])
        assert chosen is good

    def test_all_degenerate_gives_none(self):
        ds = random_labeled_dataset(seed=2, n_subjects=2, frames_per_subject=6,
                                    n_labels=2)
        space = StaticFeatureSpace(ds)
        cands = [_desc(1, 2, -5.0), _desc(3, 4, -9.0)]  # phi1 >= 0 always
        assert best_split(space, np.arange(12), cands) is None

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(33)
        for trial in range(20):
            ds = random_labeled_dataset(seed=100 + trial, n_subjects=3,
                                        frames_per_subject=int(rng.integers(4, 20)),
                                        n_labels=int(rng.integers(2, 4)))
            space = StaticFeatureSpace(ds)
            n = len(ds)
            samples = rng.choice(n, size=int(rng.integers(5, min(60, n))), replace=False)
            y = ds.y[samples]
            if np.all(y == y[0]):
                continue
            hp = HyperParams(k=(4, 4, 0, 0, 0, 0), thresholds_per_feature=3, n_trees=1)
            ranges = estimate_threshold_ranges(space, hp.counts,
                                               np.random.default_rng(trial))
            cands = sample_candidates(space.templates, hp.counts, 3, ranges,
                                      space.L, np.random.default_rng(trial)).flatten()
            chosen = best_split(space, samples, cands)
            expected = oracle_best_split(space, samples, cands, ds.n_labels)
            if expected is None:
                assert chosen is None
            else:
                assert chosen is cands[expected]


def _desc(a, b, thr):
    from pcrf.features import FeatureDescriptor

    return FeatureDescriptor(1, (a, b), thr)


class TestSampleCandidates:
    def test_counts(self):
        ranges = {1: (0.0, 1.0)}
        rng = np.random.default_rng(0)
        c = sample_candidates((1, 2, 3), {1: 1, 2: 0, 3: 0}, 25, ranges, 49, rng)
        flat = c.flatten()
        assert len(flat) == 25
        assert all(d.template == 1 for d in flat)

    def test_default_profile_yields_6000(self):
        hp = static_profile()
        ranges = {1: (0.0, 2.0), 2: (-1.0, 1.0), 3: (0.0, 1.0)}
        rng = np.random.default_rng(1)
        ds = random_labeled_dataset(seed=5, n_subjects=1, frames_per_subject=2)
        space = StaticFeatureSpace(ds)
        c = sample_candidates(space.templates, hp.counts, hp.thresholds_per_feature,
                              ranges, space.L, rng)
        assert len(c.flatten()) == 6000

    def test_deterministic_for_fixed_seed(self):
        ranges = {1: (0.0, 1.0), 2: (-1.0, 1.0), 3: (0.0, 1.0)}
        a = sample_candidates((1, 2, 3), {1: 5, 2: 5, 3: 5}, 4, ranges, 49,
                              np.random.default_rng(9)).flatten()
        b = sample_candidates((1, 2, 3), {1: 5, 2: 5, 3: 5}, 4, ranges, 49,
                              np.random.default_rng(9)).flatten()
        assert a == b

    def test_parameter_domains(self):
        ranges = {t: (0.0, 1.0) for t in range(1, 7)}
        rng = np.random.default_rng(2)
        c = sample_candidates(tuple(range(1, 7)), {t: 50 for t in range(1, 7)},
                              2, ranges, 49, rng)
        for d in c.flatten():
            if d.template in (1, 4):
                assert d.params[0] != d.params[1]
            elif d.template in (2, 5):
                assert len(set(d.params[:3])) == 3
                assert d.params[3] in (0, 1)
            else:
                t1, t2, t3, ch, s, al, be, ga = d.params
                assert len({t1, t2, t3}) == 3
                assert 1 <= ch <= 8
                assert 0.1 <= s <= 1.0
                assert al >= 0 and be >= 0 and ga >= 0
                assert al + be + ga == pytest.approx(1.0)


class TestBalancedBootstrap:
    def test_downsamples_to_minority(self):
        ds = random_labeled_dataset(seed=3, n_subjects=6, frames_per_subject=30,
                                    n_labels=3)
        idx, subjects, missing = build_balanced_bootstrap(ds, 2 / 3,
                                                          np.random.default_rng(0))
        counts = np.bincount(ds.y[idx], minlength=3)
        assert len(set(counts)) == 1
        assert missing == []
        assert len(subjects) == 4  # ceil(2/3 * 6)

    def test_already_balanced_unchanged(self):
        frames = []
        for s in range(3):
            for t in range(4):
                pts = np.random.default_rng(s * 10 + t).uniform(0, 10, (49, 2))
                frames.append(LandmarkFrame(f"s{s}", "q", t, pts,
                                            label=["neutral", "happiness"][t % 2],
                                            eye_indices=(22, 28)))
        ds = Dataset(frames, ["neutral", "happiness"], 49, (22, 28))
        idx, _, _ = build_balanced_bootstrap(ds, 1.0, np.random.default_rng(1))
        counts = np.bincount(ds.y[idx])
        assert counts.tolist() == [6, 6]

    def test_missing_label_flagged(self):
        frames = []
        for s in range(2):
            for t in range(4):
                pts = np.random.default_rng(s * 7 + t).uniform(0, 10, (49, 2))
                frames.append(LandmarkFrame(f"s{s}", "q", t, pts, label="neutral",
                                            eye_indices=(22, 28)))
        ds = Dataset(frames, ["neutral", "happiness"], 49, (22, 28))
        _, _, missing = build_balanced_bootstrap(ds, 1.0, np.random.default_rng(2))
        assert missing == ["happiness"]

    def test_seeded_identical(self):
        ds = random_labeled_dataset(seed=4)
        a = build_balanced_bootstrap(ds, 0.5, np.random.default_rng(42))
        b = build_balanced_bootstrap(ds, 0.5, np.random.default_rng(42))
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def xor_dataset(seed=0, n=80):
    """Labels follow XOR of two landmark distances: needs depth >= 2."""
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(n):
        pts = rng.uniform(-10, 10, size=(49, 2))
        pts[22] = (0.0, 0.0)
        pts[28] = (10.0, 0.0)  # iod fixed at 10
        d1 = rng.choice([2.0, 8.0])
        d2 = rng.choice([2.0, 8.0])
        pts[0] = (0.0, 5.0)
        pts[1] = (d1, 5.0)
        pts[2] = (0.0, -5.0)
        pts[3] = (d2, -5.0)
        label = "neutral" if (d1 > 5) == (d2 > 5) else "happiness"
        frames.append(LandmarkFrame(f"s{i % 8}", "q", i, pts, label=label,
                                    eye_indices=(22, 28)))
    return Dataset(frames, ["neutral", "happiness"], 49, (22, 28))


class TestGrowTree:
    def test_homogeneous_bootstrap_single_leaf(self):
        ds = random_labeled_dataset(seed=6, n_labels=2)
        ds_h = ds.subset(np.flatnonzero(ds.y == 0)[:10])
        space = StaticFeatureSpace(ds_h)
        hp = HyperParams(k=(3, 0, 0, 0, 0, 0), thresholds_per_feature=2, n_trees=1)
        store = grow_tree(space, np.arange(10), hp, {1: (0.0, 1.0)},
                          np.random.default_rng(0), 2)
        assert store.n_nodes == 1
        assert store.leaf_dist[0].tolist() == [1.0, 0.0]

    def test_xor_training_replay_perfect(self):
        ds = xor_dataset(seed=7)
        space = StaticFeatureSpace(ds)
        hp = HyperParams(k=(40, 0, 0, 0, 0, 0), thresholds_per_feature=10,
                         n_trees=1, max_depth=12)
        rng = np.random.default_rng(1)
        ranges = estimate_threshold_ranges(space, hp.counts, rng)
        store = grow_tree(space, np.arange(len(ds)), hp, ranges, rng, 2)
        forest = Forest(store, np.array([0]), ds.labels, [[]])
        correct = 0
        for i in range(len(ds)):
            p = forest.predict(ds.frames[i])
            correct += int(np.argmax(p)) == ds.y[i]
        assert correct == len(ds)

    def test_fixed_seed_byte_identical(self):
        ds = random_labeled_dataset(seed=8, n_labels=3)
        space = StaticFeatureSpace(ds)
        hp = HyperParams(k=(5, 5, 0, 0, 0, 0), thresholds_per_feature=5, n_trees=2,
                         max_depth=8)

        def bootstrap(rng):
            return build_balanced_bootstrap(ds, 0.8, rng)

        a = train_forest(space, hp, bootstrap, np.random.default_rng(77), 3, ds.labels)
        b = train_forest(space, hp, bootstrap, np.random.default_rng(77), 3, ds.labels)
        assert forest_to_bytes(a) == forest_to_bytes(b)

    def test_sample_order_invariance(self):
        ds = random_labeled_dataset(seed=9, n_labels=2)
        space = StaticFeatureSpace(ds)
        hp = HyperParams(k=(6, 0, 0, 0, 0, 0), thresholds_per_feature=4, n_trees=1,
                         max_depth=6)
        ranges = estimate_threshold_ranges(space, hp.counts, np.random.default_rng(3))
        samples = np.arange(40)
        t1 = grow_tree(space, samples, hp, ranges, np.random.default_rng(5), 2)
        perm = np.random.default_rng(9).permutation(samples)
        t2 = grow_tree(space, perm, hp, ranges, np.random.default_rng(5), 2)
        assert np.array_equal(t1.template, t2.template)
        assert np.array_equal(t1.threshold, t2.threshold)
        assert np.array_equal(t1.leaf_dist, t2.leaf_dist)


class TestPredict:
    def _forest(self, seed=0, n_trees=5):
        ds = random_labeled_dataset(seed=seed, n_labels=3)
        space = StaticFeatureSpace(ds)
        hp = HyperParams(k=(6, 6, 0, 0, 0, 0), thresholds_per_feature=4,
                         n_trees=n_trees, max_depth=8)

        def bootstrap(rng):
            return build_balanced_bootstrap(ds, 2 / 3, rng)

        return ds, train_forest(space, hp, bootstrap, np.random.default_rng(seed),
                                3, ds.labels)

    def test_probabilities_sum_to_one(self):
        ds, forest = self._forest()
        for i in range(0, len(ds), 7):
            p = forest.predict(ds.frames[i])
            assert p.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(p >= 0) and np.all(p <= 1)

    def test_matches_per_tree_average(self):
        ds, forest = self._forest(seed=1)
        frame = ds.frames[3]
        per_tree = []
        for t in range(forest.n_trees):
            per_tree.append(forest.predict(frame, tree_subset=[t]))
        manual = np.sum(per_tree, axis=0) / forest.n_trees
        assert np.allclose(forest.predict(frame), manual, atol=1e-12)

    def test_one_hot_agreement(self):
        # all trees voting the same label produce that one-hot
        ds, forest = self._forest(seed=2, n_trees=3)
        frame = ds.frames[0]
        preds = [forest.predict(frame, tree_subset=[t]) for t in range(3)]
        if all(np.argmax(p) == np.argmax(preds[0]) and p.max() == 1.0 for p in preds):
            assert forest.predict(frame).max() == 1.0


class TestOob:
    def test_single_tree_in_bag_subject_skipped(self):
        ds = random_labeled_dataset(seed=10, n_subjects=2, frames_per_subject=8,
                                    n_labels=2)
        space = StaticFeatureSpace(ds)
        hp = HyperParams(k=(4, 0, 0, 0, 0, 0), thresholds_per_feature=3, n_trees=1,
                         data_ratio=1.0, max_depth=4)

        def bootstrap(rng):
            return build_balanced_bootstrap(ds, 1.0, rng)

        forest = train_forest(space, hp, bootstrap, np.random.default_rng(0), 2,
                              ds.labels)
        res = oob_accuracy(forest, ds)
        assert res.evaluated == 0
        assert res.skipped == len(ds)

    def test_confusion_shape_and_counts(self):
        ds = random_labeled_dataset(seed=11, n_subjects=8, frames_per_subject=10,
                                    n_labels=3)
        space = StaticFeatureSpace(ds)
        hp = HyperParams(k=(5, 0, 0, 0, 0, 0), thresholds_per_feature=3, n_trees=6,
                         data_ratio=0.5, max_depth=6)

        def bootstrap(rng):
            return build_balanced_bootstrap(ds, 0.5, rng)

        forest = train_forest(space, hp, bootstrap, np.random.default_rng(1), 3,
                              ds.labels)
        res = oob_accuracy(forest, ds)
        assert res.confusion.shape == (3, 3)
        assert res.evaluated + res.skipped == len(ds)
        assert 0.0 <= res.accuracy <= 1.0


class TestSerialization:
    def test_roundtrip_preserves_predictions(self):
        ds = random_labeled_dataset(seed=12, n_labels=3)
        space = StaticFeatureSpace(ds)
        hp = HyperParams(k=(5, 5, 0, 0, 0, 0), thresholds_per_feature=3, n_trees=4,
                         max_depth=6)

        def bootstrap(rng):
            return build_balanced_bootstrap(ds, 2 / 3, rng)

        forest = train_forest(space, hp, bootstrap, np.random.default_rng(2), 3,
                              ds.labels)
        blob = forest_to_bytes(forest)
        back = forest_from_bytes(blob)
        assert back.labels == forest.labels
        assert back.bootstrap_subjects == forest.bootstrap_subjects
        assert forest_to_bytes(back) == blob
        for i in range(0, len(ds), 11):
            assert np.array_equal(back.predict(ds.frames[i]),
                                  forest.predict(ds.frames[i]))

    def test_text_dump_mentions_every_tree(self):
        ds = random_labeled_dataset(seed=13, n_labels=2)
        space = StaticFeatureSpace(ds)
        hp = HyperParams(k=(3, 0, 0, 0, 0, 0), thresholds_per_feature=2, n_trees=3,
                         max_depth=4)

        def bootstrap(rng):
            return build_balanced_bootstrap(ds, 0.5, rng)

        forest = train_forest(space, hp, bootstrap, np.random.default_rng(3), 2,
                              ds.labels)
        dump = forest_text_dump(forest)
        assert dump.count("tree ") == 3
        assert "leaf" in dump
