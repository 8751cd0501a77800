"""Stratified k-fold cross validation, grid search, and evaluation reports.

The grid search consumes raw window tensors, never precomputed features:
the standardizer (and PCA, when selected) is refit inside every fold on
that fold's training rows only, so no statistic of a validation row ever
reaches the model that is scored on it. Fold and cell work can run
concurrently; results are gathered by (cell, fold) index so the output
is independent of scheduling.
"""

import hashlib
import itertools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classifiers import (
    GbtParams,
    KernelSpec,
    default_gamma,
    predict,
    train_forest,
    train_gbt,
    train_svm_multiclass,
)
from .errors import (
    BadKError,
    MissingArchiveError,
    ShapeMismatchError,
    UsageError,
    WlclassError,
)
from .features import (
    PcaModel,
    Standardizer,
    apply_standardizer,
    covariance_feature_matrix,
    fit_pca,
    fit_standardizer,
    flatten_tensor,
    pca_feature_matrix,
)

MODEL_FAMILIES = ("rf", "svm", "gbt")

DEFAULT_FOLDS = {"rf": 10, "svm": 10, "gbt": 5}

DATASET_COLUMNS = (
    "60-start-1",
    "60-middle-1",
    "60-random-1",
    "60-random-2",
    "60-random-3",
    "60-random-4",
    "60-random-5",
)

#: Published baseline test accuracies for the released challenge datasets,
#: in DATASET_COLUMNS order, used by the reproduction report for deltas.
REFERENCE_ACCURACY = {
    "svm-pca": (82.13, 80.84, 76.62, 75.32, 76.78, 75.29, 75.46),
    "svm-cov": (67.24, 73.21, 71.66, 71.32, 71.05, 70.55, 70.61),
    "rf-pca": (83.17, 89.76, 85.58, 86.69, 86.51, 86.31, 86.42),
    "rf-cov": (81.80, 93.02, 90.05, 90.64, 90.01, 90.73, 90.90),
    "gbt-cov": (None, None, 88.47, None, None, None, None),
}


@dataclass(frozen=True)
class ReductionSpec:
    """Which trial-level reduction a grid cell uses."""

    kind: str  # "cov" | "pca"
    k: int | None = None
    center_per_trial: bool = False
    scale_unbiased: bool = False

    def __post_init__(self):
        if self.kind not in ("cov", "pca"):
            raise UsageError(f"reduction must be cov or pca, got {self.kind!r}")
        if (self.kind == "pca") != (self.k is not None):
            raise UsageError("k is required for pca and only for pca")
        if self.k is not None and self.k < 1:
            raise UsageError(f"k must be >= 1, got {self.k}")

    def describe(self) -> str:
        if self.kind == "cov":
            suffix = ",centered" if self.center_per_trial else ""
            return f"cov{suffix}"
        return f"pca-{self.k}"


@dataclass
class FittedReduction:
    """A standardizer plus optional PCA, fitted on one specific training set."""

    spec: ReductionSpec
    standardizer: Standardizer
    pca: PcaModel | None = None

    def transform(self, tensor) -> np.ndarray:
        if self.spec.kind == "cov":
            return covariance_feature_matrix(
                tensor,
                self.standardizer,
                self.spec.center_per_trial,
                self.spec.scale_unbiased,
            ).data
        return pca_feature_matrix(tensor, self.standardizer, self.pca).data

    def fingerprint(self) -> str:
        """Hash of every fitted statistic; distinguishes what data fit this object."""
        h = hashlib.sha256()
        h.update(self.standardizer.means.tobytes())
        h.update(self.standardizer.stds.tobytes())
        if self.pca is not None:
            h.update(self.pca.mean.tobytes())
            h.update(self.pca.components.tobytes())
        return h.hexdigest()


def fit_reduction(spec: ReductionSpec, x_train) -> FittedReduction:
    standardizer = fit_standardizer(x_train)
    pca = None
    if spec.kind == "pca":
        flat = flatten_tensor(apply_standardizer(standardizer, x_train))
        pca = fit_pca(flat, spec.k)
    return FittedReduction(spec=spec, standardizer=standardizer, pca=pca)


@dataclass(frozen=True)
class GridSpec:
    model_family: str
    hyperparameter_grid: dict  # name -> list of values
    reduction_grid: tuple  # ReductionSpec entries
    folds: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.model_family not in MODEL_FAMILIES:
            raise UsageError(f"model family must be one of {MODEL_FAMILIES}")
        if not self.reduction_grid:
            raise UsageError("reduction grid must be non-empty")
        for name, values in self.hyperparameter_grid.items():
            if not values:
                raise UsageError(f"grid list for {name!r} is empty")
        folds = self.effective_folds
        if folds < 2:
            raise BadKError(f"folds must be >= 2, got {folds}")

    @property
    def effective_folds(self) -> int:
        return self.folds if self.folds is not None else DEFAULT_FOLDS[self.model_family]

    def cells(self) -> list:
        names = list(self.hyperparameter_grid)
        value_lists = [self.hyperparameter_grid[n] for n in names]
        out = []
        for reduction in self.reduction_grid:
            for combo in itertools.product(*value_lists):
                out.append(GridCell(len(out), reduction, dict(zip(names, combo))))
        return out


@dataclass(frozen=True)
class GridCell:
    index: int
    reduction: ReductionSpec
    params: dict

    def describe(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.reduction.describe()}|{inner}" if inner else self.reduction.describe()


@dataclass
class GridPipeline:
    """Refit result: reduction fitted on the full training split plus the model."""

    reduction: FittedReduction
    model: object
    family: str

    def predict(self, tensor) -> np.ndarray:
        return predict(self.model, self.reduction.transform(tensor))

    @property
    def provenance(self) -> dict:
        return {
            "family": self.family,
            "reduction": self.reduction.spec.describe(),
            "reduction_fingerprint": self.reduction.fingerprint(),
        }


@dataclass
class CvResult:
    cells: list  # GridCell
    mean_accuracy: np.ndarray  # per cell
    std_accuracy: np.ndarray  # per cell
    fold_accuracy: np.ndarray  # cells x folds
    best_cell: int
    pipeline: GridPipeline

    @property
    def best_mean(self) -> float:
        return float(self.mean_accuracy[self.best_cell])


def kfold_indices(n: int, k: int, labels, seed: int) -> list:
    """Stratified fold assignment: per-class seeded shuffle, dealt round-robin.

    Classes smaller than k degrade gracefully with a warning. Returns
    (train_idx, val_idx) pairs whose validation sets partition range(n).

    Raises:
        BadKError: k < 2 or k > n.
    """
    if k < 2 or k > n:
        raise BadKError(f"k must be in [2, {n}], got {k}")
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != n:
        raise ShapeMismatchError(f"{len(labels)} labels for n={n}")
    fold_of = np.empty(n, dtype=np.int64)
    for class_position, label in enumerate(np.unique(labels)):
        members = np.nonzero(labels == label)[0]
        if len(members) < k:
            warnings.warn(
                f"class {label} has {len(members)} member(s) for {k} folds; "
                "some folds will miss it",
                RuntimeWarning,
                stacklevel=2,
            )
        rng = np.random.default_rng(np.random.SeedSequence([seed, class_position]))
        shuffled = members[rng.permutation(len(members))]
        fold_of[shuffled] = np.arange(len(members)) % k
    out = []
    everything = np.arange(n)
    for fold in range(k):
        val = everything[fold_of == fold]
        train = everything[fold_of != fold]
        out.append((train, val))
    return out


def _svm_kernel(params: dict, features) -> KernelSpec:
    name = params.get("kernel", "rbf")
    if name == "linear":
        return KernelSpec("linear")
    gamma = params.get("gamma")
    return KernelSpec("rbf", gamma if gamma is not None else default_gamma(features))


def train_family(family: str, features, y, params: dict, seed: int, n_classes: int, threads: int = 1):
    """Train one model of the given family with one grid cell's parameters."""
    if family == "rf":
        return train_forest(
            features,
            y,
            n_trees=params.get("n_trees", 100),
            seed=seed,
            max_depth=params.get("max_depth"),
            min_leaf=params.get("min_leaf", 1),
            n_classes=n_classes,
            threads=threads,
        )
    if family == "svm":
        return train_svm_multiclass(
            features,
            y,
            C=params.get("C", 1.0),
            kernel=_svm_kernel(params, features),
            tol=params.get("tol", 1e-3),
            max_iter=params.get("max_iter", 2000),
            n_classes=n_classes,
            threads=threads,
        )
    if family == "gbt":
        gbt_params = GbtParams(
            rounds=params.get("rounds", 40),
            learning_rate=params.get("learning_rate", 0.3),
            max_depth=params.get("max_depth", 6),
            gamma=params.get("gamma", 0.0),
            alpha=params.get("alpha", 0.0),
            reg_lambda=params.get("lambda", 1.0),
        )
        return train_gbt(features, y, gbt_params, n_classes=n_classes)
    raise UsageError(f"unknown model family {family!r}")


def _annotate(exc: WlclassError, context: str):
    exc.args = (f"[{context}] {exc}",)
    return exc


def _evaluate_cell_fold(x, y, cell, fold_pair, family, seed, n_classes):
    train_idx, val_idx = fold_pair
    reduction = fit_reduction(cell.reduction, x[train_idx])
    features_train = reduction.transform(x[train_idx])
    features_val = reduction.transform(x[val_idx])
    model = train_family(family, features_train, y[train_idx], cell.params, seed, n_classes)
    accuracy = float((predict(model, features_val) == y[val_idx]).mean())
    return accuracy, reduction.fingerprint()


def grid_search(x, y, spec: GridSpec, threads: int = 1, collect_fingerprints: bool = False):
    """Cross-validate every grid cell, pick the best, refit on the full split.

    x is the raw trials x samples x sensors tensor; all feature fitting
    happens inside the folds. Ties on mean accuracy go to the smallest
    cell index.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 3 or x.shape[0] != len(y):
        raise ShapeMismatchError(f"tensor {x.shape} does not align with {len(y)} labels")
    cells = spec.cells()
    k = spec.effective_folds
    folds = kfold_indices(len(y), k, y, spec.seed)
    n_classes = int(y.max()) + 1

    jobs = [(cell, fold_index) for cell in cells for fold_index in range(k)]

    def run(job):
        cell, fold_index = job
        try:
            return _evaluate_cell_fold(
                x, y, cell, folds[fold_index], spec.model_family, spec.seed, n_classes
            )
        except WlclassError as exc:
            raise _annotate(exc, f"cell {cell.index} ({cell.describe()}) fold {fold_index}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(job) for job in jobs]

    fold_accuracy = np.array([o[0] for o in outcomes]).reshape(len(cells), k)
    fingerprints = [o[1] for o in outcomes]
    mean_accuracy = fold_accuracy.mean(axis=1)
    std_accuracy = fold_accuracy.std(axis=1)
    best_cell = int(np.argmax(mean_accuracy))

    best = cells[best_cell]
    reduction = fit_reduction(best.reduction, x)
    features = reduction.transform(x)
    model = train_family(
        spec.model_family, features, y, best.params, spec.seed, n_classes, threads=threads
    )
    result = CvResult(
        cells=cells,
        mean_accuracy=mean_accuracy,
        std_accuracy=std_accuracy,
        fold_accuracy=fold_accuracy,
        best_cell=best_cell,
        pipeline=GridPipeline(reduction=reduction, model=model, family=spec.model_family),
    )
    if collect_fingerprints:
        return result, fingerprints
    return result


@dataclass
class EvalReport:
    accuracy: float  # percent
    confusion_matrix: np.ndarray  # true x predicted counts
    precision: np.ndarray  # per class, 0 where undefined
    recall: np.ndarray
    class_names: tuple
    dataset_id: str = ""
    model_provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion_matrix": self.confusion_matrix.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "class_names": list(self.class_names),
            "dataset_id": self.dataset_id,
            "model_provenance": self.model_provenance,
        }


def evaluate(predictions, y_test, class_names, dataset_id="", model_provenance=None) -> EvalReport:
    """Score predictions against labels into an accuracy/confusion report."""
    predictions = np.asarray(predictions, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    if predictions.shape != y_test.shape:
        raise ShapeMismatchError(
            f"{predictions.shape} predictions vs {y_test.shape} labels"
        )
    if len(y_test) == 0:
        raise ShapeMismatchError("cannot evaluate on an empty test set")
    n_classes = len(class_names)
    if y_test.min() < 0 or predictions.min() < 0:
        raise ShapeMismatchError("labels must be non-negative")
    if y_test.max() >= n_classes or predictions.max() >= n_classes:
        raise ShapeMismatchError("labels exceed the class-name table")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_test, predictions), 1)
    correct = np.trace(confusion)
    col = confusion.sum(axis=0)
    row = confusion.sum(axis=1)
    diag = np.diag(confusion)
    precision = np.divide(diag, col, out=np.zeros(n_classes), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros(n_classes), where=row > 0)
    return EvalReport(
        accuracy=100.0 * correct / len(y_test),
        confusion_matrix=confusion,
        precision=precision,
        recall=recall,
        class_names=tuple(class_names),
        dataset_id=dataset_id,
        model_provenance=model_provenance or {},
    )


def evaluate_pipeline(pipeline: GridPipeline, x_test, y_test, class_names, dataset_id="") -> EvalReport:
    return evaluate(
        pipeline.predict(x_test),
        y_test,
        class_names,
        dataset_id=dataset_id,
        model_provenance=pipeline.provenance,
    )


def format_report(report: EvalReport, max_rows: int = 40) -> str:
    lines = [f"dataset: {report.dataset_id or '(unnamed)'}"]
    if report.model_provenance:
        pairs = ", ".join(f"{k}={v}" for k, v in sorted(report.model_provenance.items()))
        lines.append(f"model: {pairs}")
    lines.append(f"accuracy: {report.accuracy:.2f}%")
    lines.append("class                     precision  recall   support")
    row_totals = report.confusion_matrix.sum(axis=1)
    for i, name in enumerate(report.class_names[:max_rows]):
        lines.append(
            f"{name:<25s} {report.precision[i]:9.3f} {report.recall[i]:7.3f} {row_totals[i]:9d}"
        )
    if len(report.class_names) > max_rows:
        lines.append(f"... {len(report.class_names) - max_rows} more classes")
    return "\n".join(lines)


#: Grids used by the reproduction protocol, per model family.
BASELINE_GRIDS = {
    "rf": {"n_trees": [50, 100, 250]},
    "svm": {"C": [0.1, 1.0, 10.0]},
    "gbt": {"gamma": [0.0, 1.0], "alpha": [0.0, 1.0], "lambda": [1.0, 10.0]},
}

PCA_GRID_KS = (28, 64, 256, 512)

#: Variant -> (family, reduction kinds) rows of the reproduction table.
TABLE_VARIANTS = {
    "svm-pca": ("svm", "pca"),
    "svm-cov": ("svm", "cov"),
    "rf-pca": ("rf", "pca"),
    "rf-cov": ("rf", "cov"),
    "gbt-cov": ("gbt", "cov"),
}


def _reduction_grid(kind: str, pca_ks, max_k=None) -> tuple:
    if kind == "cov":
        return (ReductionSpec("cov"),)
    ks = [k for k in pca_ks if max_k is None or k <= max_k]
    if not ks:
        ks = [min(pca_ks)]
    return tuple(ReductionSpec("pca", k=k) for k in ks)


def reproduce_table(
    archives: dict,
    families=("svm", "rf"),
    seed: int = 0,
    threads: int = 1,
    folds: int | None = None,
    grids: dict | None = None,
    pca_ks=PCA_GRID_KS,
    loader=None,
    require_all: bool = True,
):
    """Grid-search and score every (variant, dataset) pair of the accuracy table.

    archives maps DATASET_COLUMNS names to archive paths. Returns a dict
    with the column names, one row per variant carrying accuracies and
    reference deltas, and the per-archive provenance. With require_all
    off, absent datasets shrink the table to the columns provided.

    Raises:
        MissingArchiveError: a required dataset name is absent (always,
            when no recognized name is present at all).
    """
    from .dataset_io import read_challenge_archive

    loader = loader or read_challenge_archive
    grids = grids or BASELINE_GRIDS
    columns = [name for name in DATASET_COLUMNS if name in archives]
    if require_all:
        for name in DATASET_COLUMNS:
            if name not in archives:
                raise MissingArchiveError(f"dataset {name!r} missing from the archive manifest")
    if not columns:
        raise MissingArchiveError(
            f"no recognized dataset names among {sorted(archives)}; expected {DATASET_COLUMNS}"
        )

    variants = [v for v, (fam, _) in TABLE_VARIANTS.items() if fam in families]
    rows = []
    provenance = {}
    for variant in variants:
        family, reduction_kind = TABLE_VARIANTS[variant]
        accuracies = {}
        for column in columns:
            dataset = loader(archives[column])
            n, length, sensors = dataset.x_train.shape
            max_k = length * sensors
            spec = GridSpec(
                model_family=family,
                hyperparameter_grid=grids[family],
                reduction_grid=_reduction_grid(reduction_kind, pca_ks, max_k=max_k),
                folds=folds,
                seed=seed,
            )
            result = grid_search(dataset.x_train, dataset.y_train, spec, threads=threads)
            report = evaluate_pipeline(
                result.pipeline,
                dataset.x_test,
                dataset.y_test,
                dataset.model_train,
                dataset_id=column,
            )
            accuracies[column] = report.accuracy
            provenance.setdefault(column, {})[variant] = {
                "best_cell": result.cells[result.best_cell].describe(),
                "cv_mean": result.best_mean,
            }
        reference = REFERENCE_ACCURACY.get(variant)
        deltas = {}
        if reference:
            for column, ref in zip(DATASET_COLUMNS, reference):
                if ref is not None and column in accuracies:
                    deltas[column] = accuracies[column] - ref
        rows.append({"variant": variant, "accuracies": accuracies, "reference_delta": deltas})
    return {"columns": columns, "rows": rows, "provenance": provenance}


def format_table(table: dict) -> str:
    columns = table["columns"]
    width = max(len(c) for c in columns) + 2
    header = "variant".ljust(10) + "".join(c.rjust(width) for c in columns)
    lines = [header]
    for row in table["rows"]:
        cells = "".join(f"{row['accuracies'][c]:{width}.2f}" for c in columns)
        lines.append(row["variant"].ljust(10) + cells)
    return "\n".join(lines)
