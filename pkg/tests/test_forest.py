import numpy as np
import pytest

from parcelsense import forest
from parcelsense.forest import DecisionTree, ForestConfig

from oracles import naive_gini_best_split, naive_tree_predict


def _leaf_tree(class_index):
    return DecisionTree(
        feature=np.array([-1]),
        threshold=np.array([0.0]),
        left=np.array([-1]),
        right=np.array([-1]),
        label=np.array([class_index]),
    )


def _separable_data(n=200, seed=0, flip=0.0):
    """Two classes split on feature 0 with a clear margin, noise elsewhere."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 4))
    labels = np.where(np.arange(n) % 2 == 0, "R", "M")
    x[:, 0] = np.where(labels == "R", 1.0, -1.0) + 0.4 * rng.normal(size=n)
    if flip:
        swap = rng.random(n) < flip
        labels = np.where(swap, np.where(labels == "R", "M", "R"), labels)
    return x, list(labels)


def test_bootstrap_singleton():
    in_bag, oob = forest.bootstrap_sample(1, np.random.default_rng(0))
    assert in_bag.tolist() == [0]
    assert oob.size == 0


def test_bootstrap_in_bag_size_is_n():
    rng = np.random.default_rng(1)
    for n in (1, 5, 40):
        in_bag, oob = forest.bootstrap_sample(n, rng)
        assert in_bag.shape == (n,)
        assert set(oob.tolist()).isdisjoint(set()) and len(set(oob) & set(in_bag)) == 0


def test_bootstrap_oob_fraction_near_e_inverse():
    rng = np.random.default_rng(7)
    n = 1000
    fractions = [forest.bootstrap_sample(n, rng)[1].size / n for _ in range(300)]
    assert abs(np.mean(fractions) - np.exp(-1)) < 0.01


def test_grow_tree_pure_node_is_single_leaf():
    x = np.zeros((5, 2))
    tree = forest.grow_tree(x, np.zeros(5, dtype=int), 2, ForestConfig(seed=0), np.random.default_rng(0))
    assert tree.feature.tolist() == [-1]
    assert tree.label.tolist() == [0]


def test_grow_tree_one_dimensional_split():
    x = np.array([[0.0], [1.0]])
    y = np.array([0, 1])
    tree = forest.grow_tree(x, y, 2, ForestConfig(seed=0), np.random.default_rng(0))
    assert tree.feature[0] == 0
    assert tree.threshold[0] == pytest.approx(0.5)
    assert naive_tree_predict(tree, np.array([0.2])) == 0
    assert naive_tree_predict(tree, np.array([0.8])) == 1


def test_root_split_matches_exhaustive_gini_oracle():
    rng = np.random.default_rng(5)
    for trial in range(8):
        x = rng.normal(size=(25, 3)).round(2)
        y = rng.integers(0, 2, size=25)
        if len(set(y.tolist())) < 2:
            continue
        config = ForestConfig(features_per_split=3, seed=trial)  # full feature set: no subsampling
        tree = forest.grow_tree(x, y, 2, config, np.random.default_rng(trial))
        expected = naive_gini_best_split(x, y, 2)
        assert expected is not None
        got_left = x[:, tree.feature[0]] <= tree.threshold[0]
        exp_left = x[:, expected[1]] <= expected[2]

        def weighted(mask):
            def gini(side):
                if not side.any():
                    return 0.0
                p = np.bincount(y[side], minlength=2) / side.sum()
                return 1.0 - (p**2).sum()

            return (mask.sum() * gini(mask) + (~mask).sum() * gini(~mask)) / len(y)

        assert weighted(got_left) == pytest.approx(expected[0], abs=1e-12)


def test_unpruned_tree_memorizes_distinct_vectors():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(60, 5))
    y = rng.integers(0, 3, size=60)
    tree = forest.grow_tree(x, y, 3, ForestConfig(seed=0), np.random.default_rng(2))
    assert np.array_equal(tree.predict_batch(x), y)


def test_train_forest_is_bit_deterministic():
    x, labels = _separable_data()
    config = ForestConfig(n_trees=20, seed=9)
    a = forest.model_to_json(forest.train_forest(x, labels, config))
    b = forest.model_to_json(forest.train_forest(x, labels, config))
    assert a == b


def test_train_forest_thread_count_does_not_change_model():
    x, labels = _separable_data(n=80)
    config = ForestConfig(n_trees=12, seed=3)
    serial = forest.model_to_json(forest.train_forest(x, labels, config, threads=1))
    threaded = forest.model_to_json(forest.train_forest(x, labels, config, threads=4))
    assert serial == threaded


def test_separable_data_has_low_oob_error():
    x, labels = _separable_data(n=300, seed=2)
    model = forest.train_forest(x, labels, ForestConfig(n_trees=100, seed=0))
    assert model.oob_error <= 0.05


def test_shuffled_labels_oob_near_half():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(400, 4))
    labels = ["R"] * 200 + ["M"] * 200
    rng.shuffle(labels)
    model = forest.train_forest(x, labels, ForestConfig(n_trees=60, seed=1))
    assert abs(model.oob_error - 0.5) <= 0.1


def test_train_forest_rejects_degenerate_input():
    x = np.zeros((4, 2))
    with pytest.raises(ValueError):
        forest.train_forest(x, ["R"] * 4, ForestConfig(n_trees=2))
    with pytest.raises(ValueError):
        forest.train_forest(x, ["R", "M"], ForestConfig(n_trees=2))


def test_oob_error_matches_naive_recount():
    x, labels = _separable_data(n=40, seed=6, flip=0.2)
    config = ForestConfig(n_trees=15, seed=21)
    model = forest.train_forest(x, labels, config)
    classes = model.classes
    y = np.array([classes.index(l) for l in labels])

    votes = np.zeros((len(labels), len(classes)), dtype=int)
    for i, tree in enumerate(model.trees):
        rng = np.random.default_rng([config.seed, i])
        _, oob = forest.bootstrap_sample(len(labels), rng)
        for sample in oob:
            votes[sample, naive_tree_predict(tree, x[sample])] += 1
    voted = votes.sum(axis=1) > 0
    naive_error = float(
        (np.argmax(votes[voted], axis=1) != y[voted]).mean()
    )
    assert model.oob_error == naive_error


def test_predict_single_tree_forest():
    model = forest.ForestModel(
        trees=(_leaf_tree(1),), classes=("M", "R"), oob_error=0.0, feature_count=2
    )
    assert forest.predict(model, np.zeros(2)) == "R"


def test_predict_unanimous_forest():
    model = forest.ForestModel(
        trees=(_leaf_tree(0),) * 5, classes=("M", "R"), oob_error=0.0, feature_count=1
    )
    assert forest.predict(model, np.zeros(1)) == "M"


def test_predict_tie_break_uses_class_order():
    # two trees vote M, two vote G; M precedes G in the canonical order
    model = forest.ForestModel(
        trees=(_leaf_tree(0), _leaf_tree(0), _leaf_tree(1), _leaf_tree(1)),
        classes=("M", "G"),
        oob_error=0.0,
        feature_count=1,
    )
    assert forest.predict(model, np.zeros(1)) == "M"


def test_predict_dimension_mismatch():
    model = forest.ForestModel(trees=(_leaf_tree(0),), classes=("M", "R"), oob_error=0.0, feature_count=3)
    with pytest.raises(ValueError):
        forest.predict(model, np.zeros(2))


def test_class_order_canonical_then_sorted():
    assert forest.class_order(["U", "M", "G"]) == ("M", "G", "U")
    assert forest.class_order(["zeta", "alpha"]) == ("alpha", "zeta")


def test_ensemble_beats_single_tree_on_average():
    gains = []
    for seed in range(20):
        x, labels = _separable_data(n=120, seed=seed, flip=0.15)
        x_test, labels_test = _separable_data(n=200, seed=1000 + seed, flip=0.0)
        y_test = np.asarray(labels_test)
        small = forest.train_forest(x, labels, ForestConfig(n_trees=1, seed=seed))
        big = forest.train_forest(x, labels, ForestConfig(n_trees=100, seed=seed))
        acc1 = (np.asarray(forest.predict_batch(small, x_test)) == y_test).mean()
        acc100 = (np.asarray(forest.predict_batch(big, x_test)) == y_test).mean()
        gains.append(acc100 - acc1)
    assert np.mean(gains) >= 0.0


def test_feature_scaling_preserves_split_structure():
    x, labels = _separable_data(n=60, seed=3)
    config = ForestConfig(n_trees=5, seed=2)
    base = forest.train_forest(x, labels, config)
    scaled = forest.train_forest(x * 4.0, labels, config)
    for t1, t2 in zip(base.trees, scaled.trees):
        assert np.array_equal(t1.feature, t2.feature)
        assert np.array_equal(t1.label, t2.label)
        assert np.allclose(t1.threshold * 4.0, t2.threshold)


def test_model_json_round_trip():
    x, labels = _separable_data(n=50, seed=8)
    model = forest.train_forest(x, labels, ForestConfig(n_trees=7, seed=5))
    text = forest.model_to_json(model)
    back = forest.model_from_json(text)
    assert forest.model_to_json(back) == text
    assert back.classes == model.classes
    probe = np.random.default_rng(0).normal(size=(10, 4))
    assert forest.predict_batch(back, probe) == forest.predict_batch(model, probe)
