"""Weight-aware regression tree, the weak learner inside the boosting ensembles.

The induction kernel comes from the compiled extension when it is built and
falls back to a pure-numpy implementation otherwise. Set
``RAMPFLOW_PURE_PYTHON=1`` to force the fallback.
"""
import os
from dataclasses import dataclass

import numpy as np

from rampflow.tree import _tree_py

if os.environ.get("RAMPFLOW_PURE_PYTHON", "") not in ("", "0"):
    _kernel = _tree_py
else:
    try:
        from rampflow.tree import _tree_ext as _kernel
    except ImportError:  # extension not compiled
        _kernel = _tree_py

BACKEND = _kernel.BACKEND


def available_backends():
    """Names of the kernels importable in this environment."""
    names = ["python"]
    try:
        from rampflow.tree import _tree_ext  # noqa: F401
    except ImportError:
        return names
    return ["cython"] + names


def _get_kernel(backend):
    if backend is None:
        return _kernel
    if backend == "python":
        return _tree_py
    if backend == "cython":
        from rampflow.tree import _tree_ext
        return _tree_ext
    raise ValueError(f"unknown tree backend {backend!r}")


@dataclass(frozen=True)
class RegressionTree:
    """Fitted tree in flat-array form. Leaves carry ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    n_features: int
    max_depth: int
    min_samples_leaf: int = 1

    @property
    def node_count(self):
        return len(self.feature)

    @property
    def is_leaf(self):
        return self.feature < 0

    def depth(self):
        depths = np.zeros(self.node_count, dtype=np.int64)
        for node in range(self.node_count):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def predict(self, X, backend=None):
        return predict_tree(self, X, backend=backend)

    def to_dict(self):
        return {
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_samples=np.asarray(d["n_samples"], dtype=np.int64),
            n_features=int(d["n_features"]),
            max_depth=int(d["max_depth"]),
            min_samples_leaf=int(d.get("min_samples_leaf", 1)),
        )


def fit_tree(X, y, weights=None, max_depth=20, min_samples_leaf=1, backend=None):
    """Greedy top-down weighted CART for regression.

    Each split maximises the reduction of weighted squared error over
    midpoints between consecutive distinct feature values; ties go to the
    lower feature index, then the smaller threshold. Rows with zero weight
    are dropped before induction, so they cannot influence any split or
    leaf value.

    Parameters
    ----------
    X : array of shape (n, p)
    y : array of shape (n,)
    weights : array of shape (n,), optional
        Non-negative with a positive sum. Uniform when omitted.
    max_depth : int
        Maximum number of splits on any root-to-leaf path.
    min_samples_leaf : int
        Minimum number of (positive-weight) rows in every leaf.
    backend : {"cython", "python"}, optional
        Force a kernel; defaults to the one selected at import.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    n, p = X.shape
    if n == 0:
        raise ValueError("cannot fit a tree on empty input")
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if weights is None:
        weights = np.full(n, 1.0 / n)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if weights.shape != (n,):
        raise ValueError(f"weights has shape {weights.shape}, expected ({n},)")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and non-negative")
    if max_depth < 0 or min_samples_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_samples_leaf >= 1")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")

    keep = weights > 0
    if not keep.any():
        raise ValueError("sum of weights must be positive")
    if not keep.all():
        X, y, weights = X[keep], y[keep], weights[keep]
        X = np.ascontiguousarray(X)

    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int64)
    kernel = _get_kernel(backend)
    feature, threshold, left, right, value, n_samples = kernel.build(
        X, y, weights, order, int(max_depth), int(min_samples_leaf)
    )
    return RegressionTree(
        feature=feature,
        threshold=threshold,
        left=left,
        right=right,
        value=value,
        n_samples=n_samples,
        n_features=p,
        max_depth=int(max_depth),
        min_samples_leaf=int(min_samples_leaf),
    )


def predict_tree(tree, X, backend=None):
    """Route each row with ``x[feature] < threshold`` to the left child."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != tree.n_features:
        raise ValueError(
            f"X has {X.shape[1]} features, tree was trained on {tree.n_features}"
        )
    X = np.ascontiguousarray(X)
    kernel = _get_kernel(backend)
    return kernel.predict(tree.feature, tree.threshold, tree.left, tree.right, tree.value, X)


__all__ = ["BACKEND", "RegressionTree", "available_backends", "fit_tree", "predict_tree"]
