import itertools

import numpy as np
import pytest

from moodsense import simulator
from moodsense.forest import (
    CLASSIFIER_OUTCOMES,
    EvalConfig,
    ForestConfig,
    KappaDegenerateWarning,
    accuracy,
    cohen_kappa,
    gini_impurity,
    gps_ablation,
    predict_class,
    replicated_evaluation,
    replicated_evaluation_matrix,
    train_forest,
    train_tree,
)


def brute_force_best_split(X, y, n_classes, min_leaf=1):
    """Exhaustive weighted-Gini scan over every feature and threshold."""
    best = np.inf
    n = len(y)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals, vals[1:]):
            thr = a + 0.5 * (b - a)
            if thr >= b:
                thr = a
            left = X[:, f] <= thr
            nl, nr = left.sum(), n - left.sum()
            if nl < min_leaf or nr < min_leaf:
                continue
            wl = nl * gini_impurity(np.bincount(y[left], minlength=n_classes))
            wr = nr * gini_impurity(np.bincount(y[~left], minlength=n_classes))
            best = min(best, wl + wr)
    return best


def split_impurity(tree, X, y, n_classes):
    """Weighted child Gini of the root split the kernel actually chose."""
    f, thr = int(tree.feature[0]), float(tree.threshold[0])
    left = X[:, f] <= thr
    wl = left.sum() * gini_impurity(np.bincount(y[left], minlength=n_classes))
    wr = (~left).sum() * gini_impurity(np.bincount(y[~left], minlength=n_classes))
    return wl + wr


class TestGini:
    def test_pure_node(self):
        assert gini_impurity([10, 0]) == 0.0

    def test_maximal_binary(self):
        assert gini_impurity([5, 5]) == 0.5

    def test_hand_example(self):
        assert gini_impurity([3, 1]) == pytest.approx(0.375, abs=1e-15)

    def test_zero_counts_rejected(self):
        with pytest.raises(ValueError):
            gini_impurity([0, 0])
        with pytest.raises(ValueError):
            gini_impurity([-1, 2])

    def test_bounds(self, rng):
        for _ in range(100):
            c = int(rng.integers(2, 6))
            counts = rng.integers(0, 50, c)
            if counts.sum() == 0:
                continue
            g = gini_impurity(counts)
            assert 0.0 <= g <= 1.0 - 1.0 / c + 1e-12
            if (counts > 0).sum() == 1:
                assert g == 0.0


class TestTree:
    def test_pure_input_single_leaf(self):
        X = np.random.default_rng(0).normal(size=(20, 3))
        tree = train_tree(X, np.zeros(20, dtype=int), seed=1)
        assert tree.n_nodes == 1 and tree.n_leaves == 1

    def test_separable_1d_depth_one(self):
        x = np.linspace(-1, 1, 40).reshape(-1, 1)
        y = (x[:, 0] >= 0).astype(int)
        tree = train_tree(x, y, ForestConfig(n_features_per_split=1), seed=3)
        assert tree.depth == 1
        pred = tree.predict_indices(x)
        assert np.array_equal(pred, y)

    def test_deterministic(self, rng):
        X = rng.normal(size=(80, 4))
        y = rng.integers(0, 3, 80)
        a = train_tree(X, y, seed=7)
        b = train_tree(X, y, seed=7)
        assert np.array_equal(a.feature, b.feature)
        assert np.array_equal(a.threshold, b.threshold)

    def test_leaf_counts_sum_to_rows(self, rng):
        X = rng.normal(size=(60, 3))
        y = rng.integers(0, 2, 60)
        tree = train_tree(X, y, seed=2)
        leaves = tree.feature < 0
        assert tree.counts[leaves].sum() == 60
        # internal nodes partition into two non-empty children
        for k in range(tree.n_nodes):
            if tree.feature[k] >= 0:
                assert tree.counts[tree.left[k]].sum() > 0
                assert tree.counts[tree.right[k]].sum() > 0
                assert (
                    tree.counts[tree.left[k]].sum() + tree.counts[tree.right[k]].sum()
                    == tree.counts[k].sum()
                )

    def test_split_matches_brute_force_exactly(self, rng):
        for trial in range(12):
            n = int(rng.integers(10, 200))
            X = np.round(rng.normal(size=(n, 3)), 2)  # ties likely
            y = rng.integers(0, 3, n).astype(np.int64)
            if len(np.unique(y)) < 2:
                continue
            tree = train_tree(
                X, y, ForestConfig(n_features_per_split=3, min_leaf=1, max_depth=1), seed=trial
            )
            if tree.feature[0] < 0:
                continue
            assert split_impurity(tree, X, y, 3) == pytest.approx(
                brute_force_best_split(X, y, 3), abs=0
            )

    def test_min_leaf_respected(self, rng):
        X = rng.normal(size=(50, 2))
        y = rng.integers(0, 2, 50)
        tree = train_tree(X, y, ForestConfig(min_leaf=5), seed=4)
        leaves = tree.feature < 0
        assert tree.counts[leaves].sum(axis=1).min() >= 5

    def test_max_depth_respected(self, rng):
        X = rng.normal(size=(200, 3))
        y = rng.integers(0, 2, 200)
        tree = train_tree(X, y, ForestConfig(max_depth=3), seed=5)
        assert tree.depth <= 3


class TestForest:
    def test_single_tree_degenerates(self, rng):
        X = rng.normal(size=(50, 3))
        y = rng.integers(0, 2, 50)
        model = train_forest(X, y, ForestConfig(n_trees=1), seed=11)
        assert model.n_trees == 1
        pred_tree = model.trees[0].predict_indices(X)
        assert np.array_equal(model.predict(X), model.classes[pred_tree])

    def test_deterministic_predictions(self, rng):
        X = rng.normal(size=(100, 4))
        y = rng.integers(0, 3, 100)
        probe = rng.normal(size=(30, 4))
        a = train_forest(X, y, ForestConfig(n_trees=7), seed=13).predict(probe)
        b = train_forest(X, y, ForestConfig(n_trees=7), seed=13).predict(probe)
        assert np.array_equal(a, b)

    def test_forest_beats_single_tree_on_noisy_data(self):
        """Paired test-set comparison averaged over 20 seeds."""
        gaps = []
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            X = rng.normal(size=(400, 6))
            logits = 1.2 * X[:, 0] - 0.9 * X[:, 1] + 0.7 * X[:, 2] * X[:, 3]
            y = (logits + rng.normal(0, 1.5, 400) > 0).astype(int)
            tr, te = np.arange(280), np.arange(280, 400)
            forest_model = train_forest(X[tr], y[tr], ForestConfig(n_trees=25), seed=seed)
            tree_model = train_forest(X[tr], y[tr], ForestConfig(n_trees=1), seed=seed)
            acc_f = (forest_model.predict(X[te]) == y[te]).mean()
            acc_t = (tree_model.predict(X[te]) == y[te]).mean()
            gaps.append(acc_f - acc_t)
        assert np.mean(gaps) > 0.0

    def test_default_feature_subsample_is_sqrt(self, rng):
        X = rng.normal(size=(30, 9))
        y = rng.integers(0, 2, 30)
        model = train_forest(X, y, ForestConfig(n_trees=1), seed=0)
        assert model.n_features_per_split == 3

    def test_row_order_dependence_documented(self, rng):
        # bootstrap draws address row positions, so permuting rows under the
        # same seed is allowed (and expected) to change the model
        X = rng.normal(size=(120, 4))
        y = (X[:, 0] + rng.normal(0, 1, 120) > 0).astype(int)
        perm = rng.permutation(120)
        probe = rng.normal(size=(200, 4))
        a = train_forest(X, y, ForestConfig(n_trees=3), seed=5).predict(probe)
        b = train_forest(X[perm], y[perm], ForestConfig(n_trees=3), seed=5).predict(probe)
        assert not np.array_equal(a, b)


class TestPredictClass:
    def test_unanimous_and_tie_rule(self):
        # two trees voting for classes 1 and 3 -> tie resolved to class 1
        X = np.array([[0.0], [1.0]])
        model = train_forest(X, np.array([1, 3]), ForestConfig(n_trees=2, n_features_per_split=1), seed=2)
        votes_pred = model.predict(np.array([[0.5]]))
        assert votes_pred[0] in (1, 3)
        pure = train_forest(X, np.array([2, 2]), ForestConfig(n_trees=4), seed=0)
        assert pure.predict(np.array([[0.3]]))[0] == 2

    def test_explicit_tie_breaks_to_smallest_label(self):
        from moodsense.forest import DecisionTree, ForestModel

        leaf = lambda c0, c1: DecisionTree(
            feature=np.array([-1]),
            threshold=np.zeros(1),
            left=np.array([-1]),
            right=np.array([-1]),
            counts=np.array([[c0, c1]]),
        )
        model = ForestModel(
            trees=(leaf(5, 0), leaf(0, 5)),  # one tree votes class 1, one votes class 3
            classes=np.array([1, 3]),
            feature_names=("x",),
            n_features_per_split=1,
            seed=0,
        )
        assert model.predict(np.zeros((1, 1)))[0] == 1

    def test_missing_feature_named(self, small_rows):
        rows = [r for r in small_rows if r.gps_present][:50]
        X = np.stack([[getattr(r, f) for f in ("avg_bpm", "light_level")] for r in rows])
        y = np.array([r.label_happiness for r in rows])
        model = train_forest(X, y, ForestConfig(n_trees=3), seed=1, feature_names=("avg_bpm", "light_level"))
        assert predict_class(model, rows[0]) in (0, 1)
        broken = rows[0].__class__(**{**rows[0].__dict__, "avg_bpm": float("nan")})
        with pytest.raises(ValueError, match="avg_bpm"):
            predict_class(model, broken)


class TestKappa:
    def test_perfect_agreement(self):
        assert cohen_kappa(np.diag([10, 20, 5])) == 1.0

    def test_chance_level(self):
        assert cohen_kappa(np.array([[25, 25], [25, 25]])) == 0.0

    def test_hand_example(self):
        assert cohen_kappa(np.array([[45, 5], [5, 45]])) == pytest.approx(0.8, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cohen_kappa(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            cohen_kappa(np.array([[1, 2, 3], [4, 5, 6]]))

    def test_degenerate_flagged(self):
        with pytest.warns(KappaDegenerateWarning):
            assert cohen_kappa(np.array([[7, 0], [0, 0]])) == 0.0

    def test_kappa_below_accuracy(self, rng):
        for _ in range(50):
            c = rng.integers(0, 30, (3, 3)).astype(float)
            if c.sum() == 0:
                continue
            p_o = accuracy(c)
            p_e = float(c.sum(axis=1) @ c.sum(axis=0)) / c.sum() ** 2
            if 1 - p_e < 1e-12:
                continue
            k = cohen_kappa(c)
            assert -1.0 - 1e-12 <= k <= 1.0 + 1e-12
            if p_o < 1.0 and p_e > 0:
                assert k < p_o
            off_diag = c.sum() - np.trace(c)
            assert (k == 1.0) == (off_diag == 0)


class TestReplicatedEvaluation:
    @pytest.fixture(scope="class")
    def learnable(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(400, 4))
        y = (X[:, 0] > 0).astype(int)
        return X, y

    def test_exactly_n_replicates(self, learnable):
        X, y = learnable
        rep = replicated_evaluation_matrix(
            X, y, EvalConfig(forest=ForestConfig(n_trees=5), n_replicates=100), seed=0
        )
        assert len(rep.accuracies) == 100 and len(rep.kappas) == 100
        assert rep.mean_accuracy == pytest.approx(float(np.mean(rep.accuracies)))
        assert rep.mean_kappa == pytest.approx(float(np.mean(rep.kappas)))

    def test_learnable_target_high_accuracy(self, learnable):
        X, y = learnable
        rep = replicated_evaluation_matrix(
            X, y, EvalConfig(forest=ForestConfig(n_trees=15), n_replicates=20), seed=1
        )
        assert rep.mean_accuracy > 0.99

    def test_shuffled_labels_null_kappa(self, learnable):
        X, y = learnable
        y_shuf = np.random.default_rng(9).permutation(y)
        rep = replicated_evaluation_matrix(
            X, y_shuf, EvalConfig(forest=ForestConfig(n_trees=10), n_replicates=30), seed=2
        )
        assert abs(rep.mean_kappa) <= 0.05

    def test_deterministic(self, learnable):
        X, y = learnable
        cfg = EvalConfig(forest=ForestConfig(n_trees=5), n_replicates=10)
        a = replicated_evaluation_matrix(X, y, cfg, seed=3)
        b = replicated_evaluation_matrix(X, y, cfg, seed=3)
        assert a.accuracies == b.accuracies and a.kappas == b.kappas

    def test_rare_class_triggers_redraws(self, rng):
        # a 90% test split frequently swallows the whole minority class
        X = rng.normal(size=(60, 2))
        y = np.zeros(60, dtype=int)
        y[:10] = 1
        rep = replicated_evaluation_matrix(
            X,
            y,
            EvalConfig(forest=ForestConfig(n_trees=3), n_replicates=50, test_fraction=0.9),
            seed=4,
        )
        assert rep.n_redraws > 0
        assert len(rep.accuracies) == 50

    def test_min_rows_per_class_enforced(self, rng):
        X = rng.normal(size=(30, 2))
        y = np.zeros(30, dtype=int)
        y[:3] = 1
        with pytest.raises(ValueError, match="per class"):
            replicated_evaluation_matrix(X, y, EvalConfig(), seed=0)

    def test_rows_interface_drops_missing(self, small_rows):
        rep = replicated_evaluation(
            small_rows,
            "happiness",
            EvalConfig(forest=ForestConfig(n_trees=3), n_replicates=5),
            seed=0,
            include_gps=False,
        )
        assert rep.n_rows + rep.n_dropped_rows == len(small_rows)

    def test_unknown_outcome_rejected(self, small_rows):
        with pytest.raises(ValueError):
            replicated_evaluation(small_rows, "bpm", EvalConfig(), seed=0)

    def test_stratified_flag(self, learnable):
        X, y = learnable
        cfg = EvalConfig(forest=ForestConfig(n_trees=3), n_replicates=5, stratified=True)
        rep = replicated_evaluation_matrix(X, y, cfg, seed=5)
        assert len(rep.accuracies) == 5


class TestAblation:
    def test_grid_shape_and_directions(self):
        cfg = simulator.location_effect_config(seed=21, n_days=10)
        rows = simulator.generate_cohort(cfg).to_feature_rows()
        ec = EvalConfig(forest=ForestConfig(n_trees=6, max_depth=12), n_replicates=8)
        grid = gps_ablation(rows, seed=1, config=ec)
        assert set(grid.reports) == set(itertools.product(CLASSIFIER_OUTCOMES, (True, False)))
        for outcome in CLASSIFIER_OUTCOMES:
            for flag in (True, False):
                rep = grid.report(outcome, flag)
                assert len(rep.accuracies) == 8
                assert 0 <= rep.mean_accuracy <= 1
                assert -1 <= rep.mean_kappa <= 1
            assert grid.gap(outcome) > 0

    def test_needs_gps_rows(self, small_rows):
        bare = [r.__class__(**{**r.__dict__, "latitude": None, "longitude": None, "altitude": None})
                for r in small_rows[:40]]
        with pytest.raises(ValueError, match="GPS"):
            gps_ablation(bare, seed=0)
