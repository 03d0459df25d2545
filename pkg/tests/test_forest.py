import numpy as np
import pytest

from asrmi import forest as rf
from asrmi.forest import LEAF, Forest, MIExample, Tree


def examples(X, y, tag="losses"):
    return [MIExample(np.asarray(x, dtype=float), int(l), f"spk{i % 5}", f"u{i:04d}", tag)
            for i, (x, l) in enumerate(zip(X, y))]


def separable_1d(n=100, seed=0):
    rng = np.random.default_rng(seed)
    x = np.concatenate([-rng.uniform(0.01, 1, n // 2), rng.uniform(0.01, 1, n - n // 2)])
    return x[:, None], (x > 0).astype(int)


def stump(value_left, value_right, thr=0.0):
    return Tree(np.array([0, LEAF, LEAF]), np.array([thr, 0.0, 0.0]), np.array([1, -1, -1]),
                np.array([2, -1, -1]), np.array([0.5, value_left, value_right]))


def leaf(value):
    return Tree(np.array([LEAF]), np.array([0.0]), np.array([-1]), np.array([-1]),
                np.array([value]))


def test_separable_1d_training_accuracy():
    X, y = separable_1d()
    f = rf.rf_train(examples(X, y), seed=0)
    assert len(f.trees) == 100
    assert np.array_equal(rf.rf_predict(f, X), y)


def test_single_class_rejected():
    X = np.arange(10.0)[:, None]
    with pytest.raises(rf.ForestError, match="single class"):
        rf.rf_train(examples(X, np.ones(10)))


def test_too_few_and_mixed_layouts_rejected():
    with pytest.raises(rf.ForestError):
        rf.rf_train(examples([[0.0]], [1]))
    ex = examples([[0.0], [1.0]], [0, 1]) + examples([[0.0, 1.0]], [1])
    with pytest.raises(rf.ForestError):
        rf.rf_train(ex)


def test_same_data_and_seed_byte_identical():
    X, y = separable_1d(seed=2)
    a = rf.forest_to_bytes(rf.rf_train(examples(X, y), n_trees=20, seed=4))
    b = rf.forest_to_bytes(rf.rf_train(examples(X, y), n_trees=20, seed=4))
    assert a == b
    c = rf.forest_to_bytes(rf.rf_train(examples(X, y), n_trees=20, seed=5))
    assert a != c


def test_example_order_does_not_matter(rng):
    X = rng.normal(size=(80, 5))
    y = (X[:, 0] + 0.5 * rng.normal(size=80) > 0).astype(int)
    ex = examples(X, y)
    perm = [ex[i] for i in rng.permutation(len(ex))]
    a = rf.forest_to_bytes(rf.rf_train(ex, n_trees=15, seed=1))
    b = rf.forest_to_bytes(rf.rf_train(perm, n_trees=15, seed=1))
    assert a == b


def test_affine_feature_transform_keeps_predictions(rng):
    X = rng.normal(size=(120, 4))
    y = (X[:, 1] - X[:, 2] + 0.3 * rng.normal(size=120) > 0).astype(int)
    test = rng.normal(size=(60, 4))
    assert np.unique(X[:, 1]).size == 120
    a = rf.rf_train(examples(X, y), n_trees=25, seed=3)
    X2, test2 = X.copy(), test.copy()
    X2[:, 1] = 2 * X2[:, 1] + 1
    test2[:, 1] = 2 * test2[:, 1] + 1
    b = rf.rf_train(examples(X2, y), n_trees=25, seed=3)
    assert np.array_equal(rf.rf_predict(a, test), rf.rf_predict(b, test2))


def test_score_hand_built_forests():
    assert rf.rf_score(Forest([leaf(0.75)], 1), [3.0]) == 0.75
    assert rf.rf_score(Forest([leaf(1.0)] * 3, 1), [3.0]) == 1.0
    two = Forest([stump(0.2, 0.9, thr=5.0), stump(0.6, 0.0, thr=5.0)], 1)
    assert rf.rf_score(two, [1.0]) == pytest.approx(0.4)
    np.testing.assert_allclose(rf.rf_score(two, [[1.0], [5.0], [9.0]]), [0.4, 0.4, 0.45])


def test_predict_boundary_is_member():
    assert rf.rf_predict(Forest([leaf(0.5)], 1), [0.0]) == 1
    assert rf.rf_predict(Forest([leaf(0.49)], 1), [0.0]) == 0


def test_length_mismatch():
    with pytest.raises(rf.ForestError):
        rf.rf_score(Forest([leaf(0.5)], 2), [0.0])


def test_scores_are_in_unit_interval_and_pure_leaf_multiples(rng):
    X = rng.normal(size=(60, 3))
    y = rng.integers(0, 2, size=60)
    y[:2] = [0, 1]
    f = rf.rf_train(examples(X, y), n_trees=100, seed=0)
    s = rf.rf_score(f, rng.normal(size=(40, 3)))
    assert np.all((s >= 0) & (s <= 1))
    for t in f.trees:
        assert np.all(t.feature[t.feature != LEAF] < 3)
        assert np.all((t.value >= 0) & (t.value <= 1))
    # unconstrained trees end in pure leaves, so scores are multiples of 1/100
    np.testing.assert_allclose(s * 100, np.round(s * 100), atol=1e-9)


def test_serialization_round_trip(rng):
    X = rng.normal(size=(30, 2))
    y = (X[:, 0] > 0).astype(int)
    f = rf.rf_train(examples(X, y), n_trees=5, seed=0)
    data = rf.forest_to_bytes(f)
    g = rf.forest_from_bytes(data)
    assert rf.forest_to_bytes(g) == data
    probe = rng.normal(size=(10, 2))
    np.testing.assert_array_equal(rf.rf_score(f, probe), rf.rf_score(g, probe))
    with pytest.raises(rf.ForestError):
        rf.forest_from_bytes(data[:-1])


def test_non_finite_features_rejected():
    with pytest.raises(rf.ForestError):
        rf.fit_forest([[0.0], [np.nan]], [0, 1])
