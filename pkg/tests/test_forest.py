import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotdrift.forest import (
    DISCARDED,
    ClassThresholds,
    DecisionTree,
    EmptyTrainingSet,
    Forest,
    ForestParams,
    ScoredPrediction,
    SingleClassWarning,
    dumps_model,
    fit_thresholds,
    loads_model,
    load_model,
    predict,
    predict_accepted,
    save_model,
    thresholds_from_scores,
    train_forest,
)
from oracles import macro_accuracy_oracle


def _constant_tree(cls: int, n_classes: int) -> DecisionTree:
    counts = np.zeros((1, n_classes), dtype=np.int32)
    counts[0, cls] = 1
    return DecisionTree(
        np.array([-1], np.int32), np.zeros(1), np.array([-1], np.int32),
        np.array([-1], np.int32), np.array([0], np.int32), counts,
    )


def _voting_forest(votes: list[int], n_classes: int = 2) -> Forest:
    trees = tuple(_constant_tree(c, n_classes) for c in votes)
    return Forest(trees, tuple("ABCDE"[:n_classes]), ForestParams(n_trees=len(votes)), 3)


def _blobs(rng, n_per_class=500, n_classes=3, spread=0.3, dim=6):
    centers = rng.uniform(-5, 5, size=(n_classes, dim))
    X = np.vstack([c + spread * rng.normal(size=(n_per_class, dim)) for c in centers])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return X, y


def test_seven_of_ten_votes():
    f = _voting_forest([0] * 7 + [1] * 3)
    assert predict(f, np.zeros(3)) == ScoredPrediction(0, 0.7)


def test_tie_goes_to_lower_class():
    assert predict(_voting_forest([1] * 5 + [0] * 5), np.zeros(3)) == ScoredPrediction(0, 0.5)


def test_unanimous_score_one():
    assert predict(_voting_forest([1] * 4), np.zeros(3)).score == 1.0


def test_single_class_is_constant():
    X = np.random.default_rng(0).normal(size=(30, 4))
    with pytest.warns(SingleClassWarning):
        f = train_forest(X, np.zeros(30, dtype=int), ForestParams(n_trees=5), ["only"])
    classes, scores = f.predict_batch(np.random.default_rng(1).normal(size=(10, 4)))
    assert (classes == 0).all() and (scores == 1.0).all()


def test_empty_training_set():
    with pytest.raises(EmptyTrainingSet):
        train_forest(np.empty((0, 3)), [])


def test_param_bounds():
    with pytest.raises(ValueError):
        ForestParams(n_trees=0)
    with pytest.raises(ValueError):
        ForestParams(max_features=0)


def test_same_seed_same_bytes(rng):
    X, y = _blobs(rng, 100, spread=2.0)
    a = train_forest(X, y, ForestParams(n_trees=20, seed=3))
    b = train_forest(X, y, ForestParams(n_trees=20, seed=3))
    c = train_forest(X, y, ForestParams(n_trees=20, seed=4))
    assert dumps_model(a) == dumps_model(b)
    assert dumps_model(a) != dumps_model(c)


def test_parallel_equals_serial(rng):
    X, y = _blobs(rng, 80, spread=2.0)
    p = ForestParams(n_trees=12, seed=9)
    assert dumps_model(train_forest(X, y, p)) == dumps_model(train_forest(X, y, p, n_jobs=3))


def test_separable_blobs_held_out(rng):
    X, y = _blobs(rng)
    test_X, test_y = _blobs(np.random.default_rng(12345), 200)  # same centers: same seed as fixture
    f = train_forest(X, y)
    classes, _ = f.predict_batch(test_X)
    assert macro_accuracy_oracle(classes.tolist(), test_y.tolist()) >= 0.99


def test_tree_structure_invariants(rng):
    X, y = _blobs(rng, 60, spread=3.0)
    f = train_forest(X, y, ForestParams(n_trees=10, max_depth=4, seed=2))
    for t in f.trees:
        internal = t.feature >= 0
        assert ((t.left[internal] > 0) & (t.right[internal] > 0)).all()
        assert (t.leaf_slot[internal] == -1).all()
        assert (t.leaf_counts.sum(axis=1) > 0).all() and (t.leaf_counts >= 0).all()
        assert t.depth <= 4
        assert t.feature.max() < X.shape[1]


def test_votes_sum_to_n_trees(rng):
    X, y = _blobs(rng, 50, spread=3.0)
    f = train_forest(X, y, ForestParams(n_trees=17, seed=1))
    assert (f.votes(X).sum(axis=1) == 17).all()
    _, scores = f.predict_batch(X)
    assert ((scores > 0) & (scores <= 1)).all()


def test_single_tree_reproduces_training_labels(rng):
    X = rng.normal(size=(200, 5))
    y = (X[:, 0] + X[:, 1] ** 2 > 0.5).astype(int) + (X[:, 2] > 0.8)
    f = train_forest(X, y, ForestParams(n_trees=1, max_features=5, max_depth=64, bootstrap=False))
    assert np.array_equal(f.predict_batch(X)[0], y)


def test_threshold_mean_of_correct():
    classes = np.array([0, 0, 1, 1])
    labels = np.array([0, 0, 1, 0])
    tau = thresholds_from_scores(classes, np.array([0.6, 0.8, 0.5, 0.9]), labels, 2).tau
    assert tau.tolist() == pytest.approx([0.7, 0.5])


def test_threshold_all_perfect():
    tau = thresholds_from_scores(np.array([0, 1]), np.array([1.0, 1.0]), np.array([0, 1]), 2).tau
    assert tau.tolist() == [1.0, 1.0]


def test_threshold_fallback():
    # class 2 is never predicted correctly: it gets the mean of the others
    classes = np.array([0, 1, 0])
    labels = np.array([0, 1, 2])
    tau = thresholds_from_scores(classes, np.array([0.6, 0.8, 0.9]), labels, 3).tau
    assert tau.tolist() == pytest.approx([0.6, 0.8, 0.7])
    assert thresholds_from_scores(np.array([1]), np.array([0.9]), np.array([0]), 2).tau.tolist() == [0.5, 0.5]


@pytest.mark.parametrize("score,accepted", [(0.9, True), (0.69, False), (0.7, True)])
def test_accept_boundary(score, accepted):
    th = ClassThresholds(np.array([0.7, 0.7]))
    assert bool(th.accept(np.array([0]), np.array([score]))[0]) is accepted


def test_predict_accepted():
    f = _voting_forest([0] * 7 + [1] * 3)
    assert predict_accepted(f, ClassThresholds([0.7, 0.7]), np.zeros(3)) == ScoredPrediction(0, 0.7)
    assert predict_accepted(f, ClassThresholds([0.71, 0.7]), np.zeros(3)) is DISCARDED


def test_fit_thresholds_consistent(rng):
    X, y = _blobs(rng, 40, spread=4.0)
    f = train_forest(X, y, ForestParams(n_trees=15, seed=5))
    classes, scores = f.predict_batch(X)
    th = fit_thresholds(f, X, y)
    for c in range(3):
        hit = (classes == y) & (y == c)
        assert th.tau[c] == pytest.approx(scores[hit].mean())


def test_model_round_trip(tmp_path, rng):
    X, y = _blobs(rng, 40, spread=3.0)
    f = train_forest(X, y, ForestParams(n_trees=8, seed=11), ["a", "b", "c"])
    th = fit_thresholds(f, X, y)
    path = tmp_path / "m.model"
    save_model(path, f, th)
    g, th2 = load_model(path)
    assert g.class_names == ("a", "b", "c") and g.params == f.params
    assert np.array_equal(th.tau, th2.tau)
    assert dumps_model(g, th2) == path.read_bytes()
    assert np.array_equal(f.votes(X), g.votes(X))


def test_corrupt_model_rejected(rng):
    X, y = _blobs(rng, 10, spread=3.0)
    blob = dumps_model(train_forest(X, y, ForestParams(n_trees=2)))
    with pytest.raises(ValueError):
        loads_model(b"NOTMODEL" + blob[8:])
    with pytest.raises(ValueError):
        loads_model(blob[:-5])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(2, 40))
def test_deterministic_on_random_data(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, 4)).astype(float)
    y = rng.integers(0, 3, size=n)
    y[:3 if n >= 3 else n] = np.arange(min(n, 3))
    p = ForestParams(n_trees=3, max_features=2, seed=seed)
    names = ["x", "y", "z"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingleClassWarning)
        a, b = train_forest(X, y, p, names), train_forest(X, y, p, names)
    assert dumps_model(a) == dumps_model(b)
    assert (a.votes(X).sum(axis=1) == 3).all()
