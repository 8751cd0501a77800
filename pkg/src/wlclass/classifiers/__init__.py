"""The three baseline model families, trained from scratch."""

import numpy as np

from ..errors import ShapeMismatchError
from .forest import ForestModel, forest_votes, predict_forest, train_forest
from .gbt import GbtModel, GbtParams, feature_importance_report, train_gbt
from .serialize import deserialize_model, load_model, save_model, serialize_model
from .svm import (
    KernelSpec,
    SvmBinary,
    SvmEnsemble,
    default_gamma,
    dual_objective,
    kernel_matrix,
    train_svm_binary,
    train_svm_multiclass,
)
from .tree import TreeNode, TreeParams, train_tree, tree_apply, tree_predict

__all__ = [
    "ForestModel",
    "GbtModel",
    "GbtParams",
    "KernelSpec",
    "SvmBinary",
    "SvmEnsemble",
    "TreeNode",
    "TreeParams",
    "default_gamma",
    "deserialize_model",
    "dual_objective",
    "feature_importance_report",
    "forest_votes",
    "kernel_matrix",
    "load_model",
    "predict",
    "predict_forest",
    "save_model",
    "serialize_model",
    "train_forest",
    "train_gbt",
    "train_svm_binary",
    "train_svm_multiclass",
    "train_tree",
    "tree_apply",
    "tree_predict",
]


def predict(model, X) -> np.ndarray:
    """Label predictions for any trained model; ties resolve to the lowest class."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatchError(f"X must be rows x features, got {X.shape}")
    if isinstance(model, (ForestModel, SvmEnsemble, GbtModel)):
        return model.predict(X)
    raise ShapeMismatchError(f"cannot predict with {type(model).__name__}")
