"""Bagged CART forests with sqrt-feature subsampling and majority vote.

Each tree gets its own generator derived from (seed, tree_index), so the
model is byte-identical across runs and across thread counts; only the
gather order is fixed, never the completion order.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyInputError, ShapeMismatchError, UsageError
from .tree import TreeNode, TreeParams, train_tree, tree_predict


@dataclass
class ForestModel:
    trees: list
    n_trees: int
    seed: int
    feature_count: int
    class_count: int
    max_depth: int | None = None
    min_leaf: int = 1
    oob_info: dict | None = None

    def predict(self, X) -> np.ndarray:
        return predict_forest(self, X)


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tree_index]))


def _fit_one(X, y, n_classes, params, seed, tree_index) -> TreeNode:
    rng = _tree_rng(seed, tree_index)
    n = X.shape[0]
    sample = rng.integers(0, n, size=n)
    return train_tree(X[sample], y[sample], params, rng=rng, n_classes=n_classes)


def train_forest(
    X,
    y,
    n_trees: int,
    seed: int,
    max_depth: int | None = None,
    min_leaf: int = 1,
    n_classes: int | None = None,
    threads: int = 1,
) -> ForestModel:
    """Train n_trees CART trees on size-N bootstrap samples.

    Raises:
        UsageError: n_trees < 1.
        EmptyInputError: no training rows.
    """
    if n_trees < 1:
        raise UsageError(f"n_trees must be >= 1, got {n_trees}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ShapeMismatchError(f"X {X.shape} does not align with {len(y)} labels")
    if X.shape[0] == 0:
        raise EmptyInputError("cannot train a forest on zero rows")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    d = X.shape[1]
    params = TreeParams(
        max_depth=max_depth,
        min_leaf=min_leaf,
        feature_subsample=max(1, int(math.sqrt(d))),
    )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_fit_one, X, y, n_classes, params, seed, t)
                for t in range(n_trees)
            ]
            trees = [f.result() for f in futures]  # gather in index order
    else:
        trees = [_fit_one(X, y, n_classes, params, seed, t) for t in range(n_trees)]
    return ForestModel(
        trees=trees,
        n_trees=n_trees,
        seed=seed,
        feature_count=d,
        class_count=n_classes,
        max_depth=max_depth,
        min_leaf=min_leaf,
    )


def forest_votes(model: ForestModel, X) -> np.ndarray:
    """Per-class vote counts, one row per input row."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_count:
        raise ShapeMismatchError(
            f"expected n x {model.feature_count} features, got {X.shape}"
        )
    votes = np.zeros((X.shape[0], model.class_count), dtype=np.int64)
    if X.shape[0] == 0:
        return votes
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        votes[rows, tree_predict(tree, X)] += 1
    return votes


def predict_forest(model: ForestModel, X) -> np.ndarray:
    """Majority vote over trees; ties go to the lowest class index."""
    return np.argmax(forest_votes(model, X), axis=1).astype(np.int64)
