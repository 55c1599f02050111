import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import brute_best_split
from rampflow.tree import BACKEND, RegressionTree, available_backends, fit_tree, predict_tree

BACKENDS = available_backends()
needs_ext = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernel not built")


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def test_default_backend_is_compiled_when_available():
    assert BACKEND == BACKENDS[0]


def test_constant_target_single_leaf(backend):
    t = fit_tree(np.arange(10.0)[:, None], np.full(10, 4.5), backend=backend)
    assert t.node_count == 1 and t.value[0] == 4.5


def test_depth_one_split(backend):
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    t = fit_tree(X, np.array([0.0, 0.0, 10.0, 10.0]), max_depth=1, backend=backend)
    assert t.feature[0] == 0 and t.threshold[0] == 1.5
    assert sorted(t.value[t.is_leaf].tolist()) == [0.0, 10.0]
    np.testing.assert_array_equal(predict_tree(t, np.array([[0.2], [2.6], [1.5]]), backend=backend),
                                  [0.0, 10.0, 10.0])


def test_single_leaf_predicts_value():
    t = RegressionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                       np.array([7.0]), np.array([1]), n_features=3, max_depth=0)
    np.testing.assert_array_equal(t.predict(np.random.default_rng(0).normal(size=(4, 3))), [7.0] * 4)


def test_root_split_matches_exhaustive_scan(backend, rng):
    for _ in range(20):
        n, p = int(rng.integers(5, 25)), int(rng.integers(1, 4))
        X = rng.normal(size=(n, p)).round(2)
        y = rng.normal(size=n)
        w = rng.random(n) + 0.01
        t = fit_tree(X, y, w, max_depth=1, backend=backend)
        best = brute_best_split(X.tolist(), y.tolist(), w.tolist())
        if best is None or best[0] <= 1e-12:
            assert t.node_count == 1
            continue
        assert (t.feature[0], t.threshold[0]) == (best[1], pytest.approx(best[2], abs=0))


def test_leaf_values_are_weighted_means(backend, rng):
    X = rng.normal(size=(40, 2))
    y = rng.normal(size=40)
    w = rng.random(40)
    t = fit_tree(X, y, w, max_depth=2, backend=backend)
    leaf_of = _leaf_index(t, X)
    for leaf in np.unique(leaf_of):
        rows = leaf_of == leaf
        assert t.value[leaf] == pytest.approx(np.sum(w[rows] * y[rows]) / np.sum(w[rows]), rel=1e-12)


def _leaf_index(t, X):
    out = []
    for x in X:
        node = 0
        while t.feature[node] >= 0:
            node = t.left[node] if x[t.feature[node]] < t.threshold[node] else t.right[node]
        out.append(node)
    return np.array(out)


def test_zero_weight_rows_are_ignored(backend, rng):
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    w = np.zeros(30)
    w[[4, 17]] = [0.3, 0.7]
    a = fit_tree(X, y, w, backend=backend)
    b = fit_tree(X[[4, 17]], y[[4, 17]], w[[4, 17]], backend=backend)
    for f in ("feature", "threshold", "value"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_memorises_distinct_rows(backend, rng):
    X = rng.normal(size=(64, 3))
    y = rng.normal(size=64)
    t = fit_tree(X, y, max_depth=20, backend=backend)
    np.testing.assert_array_equal(predict_tree(t, X, backend=backend), y)


def test_depth_and_leaf_size_limits(backend, rng):
    X = rng.normal(size=(200, 4))
    y = X[:, 0] + rng.normal(size=200)
    t = fit_tree(X, y, max_depth=3, min_samples_leaf=10, backend=backend)
    assert t.depth() <= 3
    assert t.n_samples[t.is_leaf].min() >= 10


@given(st.integers(0, 5000), st.integers(1, 6))
def test_predictions_within_label_range(seed, depth):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 2))
    y = rng.uniform(-5, 5, 30)
    pred = fit_tree(X, y, rng.random(30) + 1e-3, max_depth=depth).predict(rng.normal(size=(10, 2)))
    assert np.all(pred >= y.min() - 1e-12) and np.all(pred <= y.max() + 1e-12)


def test_validation_errors():
    X = np.ones((3, 2))
    with pytest.raises(ValueError):
        fit_tree(np.empty((0, 2)), np.empty(0))
    with pytest.raises(ValueError):
        fit_tree(X, np.ones(3), weights=np.zeros(3))
    with pytest.raises(ValueError):
        fit_tree(X, np.ones(3), weights=np.array([1.0, -1.0, 1.0]))
    t = fit_tree(X, np.ones(3))
    with pytest.raises(ValueError, match="features"):
        predict_tree(t, np.ones((2, 5)))


def test_serialisation_round_trip(rng):
    X = rng.normal(size=(50, 3))
    t = fit_tree(X, rng.normal(size=50), max_depth=4)
    back = RegressionTree.from_dict(t.to_dict())
    np.testing.assert_array_equal(back.predict(X), t.predict(X))


@needs_ext
@given(st.integers(0, 10_000), st.integers(1, 12), st.sampled_from([1, 2, 5]))
def test_backends_build_identical_trees(seed, depth, leaf):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 120))
    X = rng.normal(size=(n, 5)).round(1)  # duplicates exercise the tie rules
    y = rng.normal(size=n).round(1)
    w = rng.random(n) * (rng.random(n) > 0.2)
    if w.sum() == 0:
        w[0] = 1.0
    a = fit_tree(X, y, w, depth, leaf, backend="python")
    b = fit_tree(X, y, w, depth, leaf, backend="cython")
    for f in ("feature", "threshold", "left", "right", "value", "n_samples"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    Q = rng.normal(size=(20, 5))
    np.testing.assert_array_equal(predict_tree(a, Q, backend="python"), predict_tree(a, Q, backend="cython"))
