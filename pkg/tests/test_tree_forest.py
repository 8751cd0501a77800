import numpy as np
import pytest

from wlclass.classifiers import (
    ForestModel,
    TreeNode,
    TreeParams,
    forest_votes,
    predict,
    serialize_model,
    train_forest,
    train_tree,
    tree_predict,
)
from wlclass.errors import EmptyInputError, ShapeMismatchError, UsageError


def gini_scan_oracle(X, y, n_classes):
    """Brute-force best split: lowest weighted impurity, ties to lowest feature then threshold."""
    n = len(y)

    def gini(labels):
        if len(labels) == 0:
            return 0.0
        counts = np.bincount(labels, minlength=n_classes)
        return 1.0 - ((counts / len(labels)) ** 2).sum()

    best = None
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for a, b in zip(values[:-1], values[1:]):
            threshold = (a + b) / 2.0
            mask = X[:, f] <= threshold
            weighted = (mask.sum() * gini(y[mask]) + (~mask).sum() * gini(y[~mask])) / n
            if best is None or weighted < best[0]:
                best = (weighted, f, threshold)
    return best


class TestTree:
    def test_single_class_is_leaf(self):
        root = train_tree(np.random.default_rng(0).normal(size=(10, 3)), np.zeros(10))
        assert root.is_leaf
        assert root.histogram[0] == 10

    def test_one_dimensional_threshold(self):
        root = train_tree(np.array([[1.0], [2.0], [3.0], [4.0]]), np.array([0, 0, 1, 1]))
        assert root.feature_index == 0
        assert root.threshold == 2.5
        assert root.left.is_leaf and root.right.is_leaf

    def test_root_split_matches_scan_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(25):
            n = int(rng.integers(6, 40))
            d = int(rng.integers(1, 5))
            n_classes = int(rng.integers(2, 4))
            X = np.round(rng.normal(size=(n, d)), 2)
            y = rng.integers(0, n_classes, size=n)
            if len(np.unique(y)) < 2:
                continue
            root = train_tree(X, y, n_classes=n_classes)
            expected = gini_scan_oracle(X, y, n_classes)
            if expected is None:
                assert root.is_leaf
            else:
                assert (root.feature_index, root.threshold) == (expected[1], expected[2])

    def test_xor_fits_at_depth_two(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 1, 1, 0])
        root = train_tree(X, y, TreeParams(max_depth=2))
        np.testing.assert_array_equal(tree_predict(root, X), y)

    def test_memorizes_consistent_data(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(60, 4))
        y = rng.integers(0, 5, size=60)
        root = train_tree(X, y)
        np.testing.assert_array_equal(tree_predict(root, X), y)

    def test_routing_consistency(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(40, 3))
        y = rng.integers(0, 3, size=40)
        root = train_tree(X, y)

        def walk(node, idx):
            assert node.histogram.sum() == len(idx)
            if node.is_leaf:
                return
            assert np.isfinite(node.threshold)
            go_left = X[idx, node.feature_index] <= node.threshold
            assert 0 < go_left.sum() < len(idx)
            walk(node.left, idx[go_left])
            walk(node.right, idx[~go_left])

        walk(root, np.arange(40))

    def test_max_depth_limits_splits(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(50, 3))
        y = rng.integers(0, 2, size=50)
        root = train_tree(X, y, TreeParams(max_depth=1))
        for child in (root.left, root.right):
            assert child is None or child.is_leaf

    def test_min_leaf_respected(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 2))
        y = rng.integers(0, 2, size=30)
        root = train_tree(X, y, TreeParams(min_leaf=5))

        def smallest(node):
            if node.is_leaf:
                return int(node.histogram.sum())
            return min(smallest(node.left), smallest(node.right))

        assert smallest(root) >= 5

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            train_tree(np.zeros((0, 3)), np.zeros(0))

    def test_duplicate_rows_conflicting_labels_terminate(self):
        X = np.ones((6, 2))
        y = np.array([0, 1, 0, 1, 0, 1])
        root = train_tree(X, y)
        assert root.is_leaf  # nothing to split on


class TestForest:
    def blobs(self, n_per=20, seed=6):
        rng = np.random.default_rng(seed)
        centers = np.array([[0.0, 0.0], [6.0, 6.0], [0.0, 6.0]])
        X = np.vstack([c + rng.normal(0, 0.5, size=(n_per, 2)) for c in centers])
        y = np.repeat(np.arange(3), n_per)
        return X, y

    def test_single_tree_forest_matches_its_tree(self):
        X, y = self.blobs()
        forest = train_forest(X, y, n_trees=1, seed=0)
        np.testing.assert_array_equal(predict(forest, X), tree_predict(forest.trees[0], X))
        assert (predict(forest, X) == y).mean() >= 0.9

    def test_determinism_bytes(self):
        X, y = self.blobs(seed=7)
        a = serialize_model(train_forest(X, y, n_trees=12, seed=3))
        b = serialize_model(train_forest(X, y, n_trees=12, seed=3))
        assert a == b

    def test_thread_count_does_not_change_model(self):
        X, y = self.blobs(seed=8)
        a = serialize_model(train_forest(X, y, n_trees=8, seed=5, threads=1))
        b = serialize_model(train_forest(X, y, n_trees=8, seed=5, threads=4))
        assert a == b

    def test_different_seeds_differ(self):
        X, y = self.blobs(seed=9)
        a = serialize_model(train_forest(X, y, n_trees=5, seed=1))
        b = serialize_model(train_forest(X, y, n_trees=5, seed=2))
        assert a != b

    def test_vote_count_oracle(self):
        X, y = self.blobs(seed=10)
        forest = train_forest(X, y, n_trees=9, seed=4)
        rng = np.random.default_rng(11)
        queries = rng.normal(3, 3, size=(25, 2))
        votes = forest_votes(forest, queries)
        manual = np.zeros_like(votes)
        for tree in forest.trees:
            labels = tree_predict(tree, queries)
            for row, label in enumerate(labels):
                manual[row, label] += 1
        np.testing.assert_array_equal(votes, manual)
        np.testing.assert_array_equal(predict(forest, queries), np.argmax(manual, axis=1))

    def test_tie_breaks_toward_lowest_class(self):
        leaf_for = lambda c: TreeNode(histogram=np.eye(3, dtype=np.int64)[c] * 5)
        forest = ForestModel(
            trees=[leaf_for(2), leaf_for(1)], n_trees=2, seed=0, feature_count=2, class_count=3
        )
        assert predict(forest, np.zeros((1, 2)))[0] == 1

    def test_all_trees_reference_valid_features(self):
        X, y = self.blobs(seed=12)
        forest = train_forest(X, y, n_trees=6, seed=9)

        def check(node):
            if node.is_leaf:
                return
            assert 0 <= node.feature_index < forest.feature_count
            check(node.left)
            check(node.right)

        for tree in forest.trees:
            check(tree)

    def test_feature_subsample_is_sqrt(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(80, 16))
        y = (X[:, 0] > 0).astype(int)
        forest = train_forest(X, y, n_trees=30, seed=2)
        used = set()

        def collect(node):
            if node.is_leaf:
                return
            used.add(node.feature_index)
            collect(node.left)
            collect(node.right)

        for tree in forest.trees:
            collect(tree)
        # sqrt(16) = 4 features per split, but across many trees most features appear
        assert len(used) > 4

    def test_empty_query(self):
        X, y = self.blobs(seed=14)
        forest = train_forest(X, y, n_trees=2, seed=0)
        assert predict(forest, np.zeros((0, 2))).shape == (0,)

    def test_preconditions(self):
        X, y = self.blobs(seed=15)
        with pytest.raises(UsageError):
            train_forest(X, y, n_trees=0, seed=0)
        with pytest.raises(EmptyInputError):
            train_forest(np.zeros((0, 2)), np.zeros(0), n_trees=1, seed=0)
        forest = train_forest(X, y, n_trees=2, seed=0)
        with pytest.raises(ShapeMismatchError):
            predict(forest, np.zeros((3, 9)))

    def test_bootstrap_varies_between_trees(self):
        X, y = self.blobs(n_per=40, seed=16)
        forest = train_forest(X, y, n_trees=4, seed=7)
        serialized = {serialize_model(
            ForestModel([t], 1, 0, forest.feature_count, forest.class_count)
        ) for t in forest.trees}
        assert len(serialized) > 1
