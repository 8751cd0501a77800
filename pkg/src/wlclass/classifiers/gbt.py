"""Regularized gradient-boosted regression trees with a softmax objective.

Every boosting round fits one tree per class to the current gradient and
hessian statistics (g = p - y, h = p(1 - p)). Split gain follows the
second-order formulation: recorded gain is
half [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)], and a
split is accepted only when that exceeds gamma. Leaf weights apply the
l1 soft threshold: -sign(G) max(|G|-alpha, 0) / (H+lambda). Split counts
and gains accumulate into per-feature importance.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyInputError, ShapeMismatchError, UsageError
from .tree import TreeNode


@dataclass(frozen=True)
class GbtParams:
    rounds: int = 40
    learning_rate: float = 0.3
    max_depth: int = 6
    gamma: float = 0.0  # minimum loss reduction to split
    alpha: float = 0.0  # l1 on leaf weights
    reg_lambda: float = 1.0  # l2 on leaf weights
    base_score: float = 0.0

    def __post_init__(self):
        if self.rounds < 1:
            raise UsageError(f"rounds must be >= 1, got {self.rounds}")
        if self.max_depth < 0:
            raise UsageError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.learning_rate <= 0:
            raise UsageError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.alpha < 0 or self.reg_lambda < 0 or (
            self.gamma < 0 and not math.isinf(self.gamma)
        ):
            raise UsageError("regularization constants must be non-negative")


@dataclass
class GbtModel:
    rounds: list  # rounds[r][c] is the round-r tree for class c
    params: GbtParams
    feature_count: int
    class_count: int
    split_counts: np.ndarray  # per feature
    split_gains: np.ndarray  # per feature, accumulated recorded gain
    train_loss: list  # per-round multiclass log-loss

    def predict_scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise ShapeMismatchError(
                f"expected n x {self.feature_count} features, got {X.shape}"
            )
        scores = np.full((X.shape[0], self.class_count), self.params.base_score)
        if X.shape[0] == 0:
            return scores
        for round_trees in self.rounds:
            for c, tree in enumerate(round_trees):
                scores[:, c] += self.params.learning_rate * _tree_values(tree, X)
        return scores

    def predict(self, X) -> np.ndarray:
        scores = self.predict_scores(X)
        if scores.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmax(scores, axis=1).astype(np.int64)


def _leaf_weight(g: float, h: float, alpha: float, lam: float) -> float:
    denom = h + lam
    if denom <= 0.0:
        return 0.0
    shrunk = max(abs(g) - alpha, 0.0)
    return -math.copysign(shrunk, g) / denom


def _gain_term(g, h, lam):
    denom = h + lam
    return np.where(denom > 0.0, g * g / np.where(denom > 0.0, denom, 1.0), 0.0)


def _best_gain_split(X, g, h, idx, lam):
    """Max recorded gain over features and midpoints; ties to lowest feature/threshold."""
    g_total, h_total = float(g[idx].sum()), float(h[idx].sum())
    parent_term = float(_gain_term(np.array(g_total), np.array(h_total), lam))
    best = None
    for f in range(X.shape[1]):
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        cut = np.nonzero(vs[:-1] < vs[1:])[0]
        if len(cut) == 0:
            continue
        g_prefix = np.cumsum(g[idx][order])[cut]
        h_prefix = np.cumsum(h[idx][order])[cut]
        gains = 0.5 * (
            _gain_term(g_prefix, h_prefix, lam)
            + _gain_term(g_total - g_prefix, h_total - h_prefix, lam)
            - parent_term
        )
        pos = int(np.argmax(gains))  # first maximum: smallest threshold wins ties
        if best is None or gains[pos] > best[0]:
            threshold = float((vs[cut[pos]] + vs[cut[pos] + 1]) / 2.0)
            best = (float(gains[pos]), int(f), threshold)
    return best


def _grow_regression(X, g, h, idx, depth, params: GbtParams, importance) -> TreeNode:
    g_sum, h_sum = float(g[idx].sum()), float(h[idx].sum())
    leaf = TreeNode(
        weight=_leaf_weight(g_sum, h_sum, params.alpha, params.reg_lambda),
        g_sum=g_sum,
        h_sum=h_sum,
    )
    if depth >= params.max_depth or len(idx) < 2:
        return leaf
    best = _best_gain_split(X, g, h, idx, params.reg_lambda)
    if best is None:
        return leaf
    gain, f, threshold = best
    if not gain - params.gamma > 0.0:
        return leaf
    go_left = X[idx, f] <= threshold
    node = TreeNode(feature_index=f, threshold=threshold, gain=gain)
    importance[0][f] += 1
    importance[1][f] += gain
    node.left = _grow_regression(X, g, h, idx[go_left], depth + 1, params, importance)
    node.right = _grow_regression(X, g, h, idx[~go_left], depth + 1, params, importance)
    return node


def _tree_values(node: TreeNode, X) -> np.ndarray:
    out = np.zeros(X.shape[0])
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        current, idx = stack.pop()
        if len(idx) == 0:
            continue
        if current.is_leaf:
            out[idx] = current.weight
            continue
        go_left = X[idx, current.feature_index] <= current.threshold
        stack.append((current.left, idx[go_left]))
        stack.append((current.right, idx[~go_left]))
    return out


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _log_loss(proba: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(proba[np.arange(len(y)), y], 1e-15, 1.0)
    return float(-np.log(p).mean())


def train_gbt(X, y, params: GbtParams | None = None, n_classes: int | None = None) -> GbtModel:
    """Boost class_count regression trees per round on softmax gradients.

    Raises:
        EmptyInputError: no training rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ShapeMismatchError(f"X {X.shape} does not align with {len(y)} labels")
    if X.shape[0] == 0:
        raise EmptyInputError("cannot train on zero rows")
    params = params or GbtParams()
    if n_classes is None:
        n_classes = max(int(y.max()) + 1, 2)
    n, d = X.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    scores = np.full((n, n_classes), params.base_score)
    importance = (np.zeros(d, dtype=np.int64), np.zeros(d))
    all_idx = np.arange(n)
    rounds, losses = [], []
    for _ in range(params.rounds):
        proba = _softmax(scores)
        round_trees = []
        for c in range(n_classes):
            g = proba[:, c] - onehot[:, c]
            h = proba[:, c] * (1.0 - proba[:, c])
            tree = _grow_regression(X, g, h, all_idx, 0, params, importance)
            scores[:, c] += params.learning_rate * _tree_values(tree, X)
            round_trees.append(tree)
        rounds.append(round_trees)
        losses.append(_log_loss(_softmax(scores), y))
    return GbtModel(
        rounds=rounds,
        params=params,
        feature_count=d,
        class_count=n_classes,
        split_counts=importance[0],
        split_gains=importance[1],
        train_loss=losses,
    )


def feature_importance_report(model: GbtModel, feature_names) -> list:
    """Features that split at least once, ranked by count then total gain.

    Returns (name, split_count, total_gain) tuples.
    """
    if len(feature_names) != model.feature_count:
        raise ShapeMismatchError(
            f"{len(feature_names)} names for {model.feature_count} features"
        )
    ranked = [
        (name, int(count), float(gain))
        for name, count, gain in zip(feature_names, model.split_counts, model.split_gains)
        if count > 0
    ]
    ranked.sort(key=lambda item: (-item[1], -item[2], item[0]))
    return ranked
