"""CART classification trees: Gini impurity, exhaustive midpoint thresholds.

The split search is vectorized per feature with prefix class counts over
the sorted column. Ties resolve to the lowest feature index, then the
lowest threshold, so a tree is a pure function of (X, y, params, rng
state). A node may split at zero impurity decrease as long as it is
impure and a valid cut exists; both children are then strictly smaller,
which keeps recursion finite and lets depth-2 trees represent XOR.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyInputError, ShapeMismatchError


@dataclass
class TreeNode:
    """Either a split (feature_index/threshold/left/right) or a leaf.

    Classification leaves carry a class histogram; regression leaves (used
    by the boosted trees) carry weight plus the (g_sum, h_sum) statistics
    they were derived from. Rows with x[feature] <= threshold go left.
    """

    feature_index: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    histogram: np.ndarray | None = None
    weight: float | None = None
    g_sum: float | None = None
    h_sum: float | None = None
    gain: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_index is None


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_leaf: int = 1
    feature_subsample: int | None = None  # features considered per split


def _gini_from_counts(counts: np.ndarray, n: float) -> float:
    return 1.0 - float(((counts / n) ** 2).sum())


def _best_gini_split(X, y, idx, feats, n_classes, min_leaf):
    """Scan candidate midpoints; return (weighted_impurity, feature, threshold) or None."""
    yn = y[idx]
    n = len(idx)
    total = np.bincount(yn, minlength=n_classes).astype(np.float64)
    best = None
    for f in feats:
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = yn[order]
        cut = np.nonzero(vs[:-1] < vs[1:])[0]
        if len(cut) == 0:
            continue
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys] = 1.0
        prefix = np.cumsum(onehot, axis=0)
        n_left = (cut + 1).astype(np.float64)
        n_right = n - n_left
        left_counts = prefix[cut]
        right_counts = total - left_counts
        gini_left = 1.0 - ((left_counts / n_left[:, None]) ** 2).sum(axis=1)
        gini_right = 1.0 - ((right_counts / n_right[:, None]) ** 2).sum(axis=1)
        weighted = (n_left * gini_left + n_right * gini_right) / n
        if min_leaf > 1:
            valid = (n_left >= min_leaf) & (n_right >= min_leaf)
            if not valid.any():
                continue
            weighted = np.where(valid, weighted, np.inf)
        pos = int(np.argmin(weighted))  # first minimum: smallest threshold wins ties
        if not np.isfinite(weighted[pos]):
            continue
        if best is None or weighted[pos] < best[0]:
            threshold = float((vs[cut[pos]] + vs[cut[pos] + 1]) / 2.0)
            best = (float(weighted[pos]), int(f), threshold)
    return best


def _pick_features(d, params: TreeParams, rng) -> np.ndarray:
    m = params.feature_subsample
    if m is None or m >= d:
        return np.arange(d)
    return np.sort(rng.choice(d, size=m, replace=False))


def _grow(X, y, idx, depth, n_classes, params, rng) -> TreeNode:
    counts = np.bincount(y[idx], minlength=n_classes)
    node = TreeNode(histogram=counts)
    if _gini_from_counts(counts.astype(np.float64), len(idx)) == 0.0:
        return node
    if params.max_depth is not None and depth >= params.max_depth:
        return node
    if len(idx) < 2 * params.min_leaf:
        return node
    feats = _pick_features(X.shape[1], params, rng)
    best = _best_gini_split(X, y, idx, feats, n_classes, params.min_leaf)
    if best is None:
        return node
    _, f, threshold = best
    go_left = X[idx, f] <= threshold
    node.feature_index = f
    node.threshold = threshold
    node.left = _grow(X, y, idx[go_left], depth + 1, n_classes, params, rng)
    node.right = _grow(X, y, idx[~go_left], depth + 1, n_classes, params, rng)
    return node


def train_tree(X, y, params: TreeParams | None = None, rng=None, n_classes=None) -> TreeNode:
    """Grow one CART tree. Deterministic given the rng state.

    Raises:
        EmptyInputError: no training rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2:
        raise ShapeMismatchError(f"X must be rows x features, got {X.shape}")
    if len(y) != X.shape[0]:
        raise ShapeMismatchError(f"{X.shape[0]} rows but {len(y)} labels")
    if X.shape[0] == 0:
        raise EmptyInputError("cannot train a tree on zero rows")
    params = params or TreeParams()
    rng = rng or np.random.default_rng(0)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    return _grow(X, y, np.arange(X.shape[0]), 0, n_classes, params, rng)


def tree_apply(node: TreeNode, X) -> np.ndarray:
    """Return the leaf reached by each row."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=object)
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        current, idx = stack.pop()
        if len(idx) == 0:
            continue
        if current.is_leaf:
            out[idx] = current
            continue
        go_left = X[idx, current.feature_index] <= current.threshold
        stack.append((current.left, idx[go_left]))
        stack.append((current.right, idx[~go_left]))
    return out


def tree_predict(node: TreeNode, X) -> np.ndarray:
    """Predict labels: argmax of each leaf histogram, ties to the lowest class."""
    leaves = tree_apply(node, X)
    return np.array([int(np.argmax(leaf.histogram)) for leaf in leaves], dtype=np.int64)


def tree_predict_counts(node: TreeNode, X, n_classes: int) -> np.ndarray:
    leaves = tree_apply(node, X)
    out = np.zeros((len(leaves), n_classes), dtype=np.float64)
    for i, leaf in enumerate(leaves):
        hist = leaf.histogram
        out[i, : len(hist)] = hist
    return out
