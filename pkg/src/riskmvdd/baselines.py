"""Reference classifiers for head-to-head comparison: K-nearest neighbors,
a CART-style decision tree, and a bagging random forest, all trained on
median-imputed dense data.

The decision tree here doubles as the independent oracle for the AND-only
diagram equivalence check, so it deliberately shares no code with the
diagram trainer while using the same split conventions (midpoint thresholds,
lowest-feature/lowest-threshold/lowest-class tie-breaking).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cohort import PatientRecord
from .features import FeatureSet
from .seeding import substream

KNN = "knn"
DECISION_TREE = "dt"
RANDOM_FOREST = "rf"
BASELINE_KINDS = (KNN, DECISION_TREE, RANDOM_FOREST)

SCHEMA_VERSION = 1


class BaselineError(Exception):
    pass


class EmptyFeature(BaselineError):
    pass


class InvalidHyperparam(BaselineError):
    pass


@dataclass
class MedianImpute:
    matrix: np.ndarray
    feature_names: list[str]
    medians: dict[str, float]


def impute_median(records: list[PatientRecord], feature_set: FeatureSet) -> MedianImpute:
    """Dense matrix with absent cells filled by the feature median.

    Even-count medians are the mean of the two central values.  A feature
    with no present value anywhere cannot be imputed and is an error.
    """
    names = list(feature_set.names())
    n = len(records)
    raw = np.full((n, len(names)), np.nan)
    for i, rec in enumerate(records):
        for j, name in enumerate(names):
            v = rec.values.get(name)
            if v is not None:
                raw[i, j] = v
    medians = {}
    for j, name in enumerate(names):
        col = raw[:, j]
        present = ~np.isnan(col)
        if not present.any():
            raise EmptyFeature(f"feature {name} has no present value to impute from")
        med = float(np.median(col[present]))
        col[~present] = med
        medians[name] = med
    return MedianImpute(matrix=raw, feature_names=names, medians=medians)


@dataclass
class TreeNode:
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    class_counts: dict[int, int] | None = None  # leaves only

    @property
    def is_leaf(self) -> bool:
        return self.class_counts is not None


class ReferenceDecisionTree:
    """Plain CART multi-class tree on dense data.

    Leaves keep their class counts so prediction can report per-class
    proportions for ROC scoring.
    """

    def __init__(self, criterion: str = "gini", max_depth: int | None = None, min_samples_leaf: int = 5):
        if criterion not in ("gini", "entropy"):
            raise InvalidHyperparam(f"unknown criterion {criterion!r}")
        if min_samples_leaf < 1:
            raise InvalidHyperparam("min_samples_leaf must be >= 1")
        self.criterion = criterion
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.root: TreeNode | None = None
        self.classes_: np.ndarray | None = None

    def _leaf(self, y: np.ndarray) -> TreeNode:
        counts = {int(c): int((y == c).sum()) for c in self.classes_ if (y == c).sum() > 0}
        return TreeNode(class_counts=counts)

    def _best_split(self, X: np.ndarray, y: np.ndarray, feature_pool: np.ndarray):
        best = None  # (impurity, feature, threshold)
        n = len(y)
        k = len(self.classes_)
        y_idx = np.searchsorted(self.classes_, y)
        for j in feature_pool:
            col = X[:, j]
            order = np.argsort(col, kind="stable")
            v = col[order]
            cuts = np.where(v[:-1] != v[1:])[0]
            if len(cuts) == 0:
                continue
            onehot = np.zeros((n, k), dtype=np.int64)
            onehot[np.arange(n), y_idx[order]] = 1
            cum = np.cumsum(onehot, axis=0)
            left = cum[cuts].astype(float)
            right = cum[-1].astype(float) - left
            n_left = left.sum(axis=1)
            n_right = right.sum(axis=1)
            ok = (n_left >= self.min_samples_leaf) & (n_right >= self.min_samples_leaf)
            if not ok.any():
                continue
            pl = left / n_left[:, None]
            pr = right / n_right[:, None]
            if self.criterion == "gini":
                il = 1.0 - (pl**2).sum(axis=1)
                ir = 1.0 - (pr**2).sum(axis=1)
            else:
                il = -(np.where(pl > 0, pl * np.log2(np.where(pl > 0, pl, 1.0)), 0.0)).sum(axis=1)
                ir = -(np.where(pr > 0, pr * np.log2(np.where(pr > 0, pr, 1.0)), 0.0)).sum(axis=1)
            imp = (n_left * il + n_right * ir) / (n_left + n_right)
            imp = np.where(ok, imp, np.inf)
            b = int(np.argmin(imp))  # first minimum = lowest threshold
            thr = (v[cuts[b]] + v[cuts[b] + 1]) / 2.0
            key = (float(imp[b]), int(j), float(thr))
            if best is None or key < best:
                best = key
        return best

    def _grow(self, X: np.ndarray, y: np.ndarray, depth: int, rng, n_features: int | None) -> TreeNode:
        if (
            len(np.unique(y)) <= 1
            or (self.max_depth is not None and depth >= self.max_depth)
            or len(y) < 2 * self.min_samples_leaf
        ):
            return self._leaf(y)
        pool = np.arange(X.shape[1])
        if n_features is not None and n_features < X.shape[1]:
            pool = np.sort(rng.choice(X.shape[1], size=n_features, replace=False))
        best = self._best_split(X, y, pool)
        if best is None:
            return self._leaf(y)
        _, j, thr = best
        mask = X[:, j] <= thr
        node = TreeNode(feature=j, threshold=thr)
        node.left = self._grow(X[mask], y[mask], depth + 1, rng, n_features)
        node.right = self._grow(X[~mask], y[~mask], depth + 1, rng, n_features)
        return node

    def fit(self, X: np.ndarray, y: np.ndarray, rng=None, n_features: int | None = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        self.classes_ = np.unique(y)
        self.root = self._grow(X, y, 0, rng, n_features)
        return self

    def _locate(self, row: np.ndarray) -> TreeNode:
        node = self.root
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        return node

    def predict_row(self, row: np.ndarray) -> int:
        counts = self._locate(row).class_counts
        best_cls, best_count = None, -1
        for cls in sorted(counts):
            if counts[cls] > best_count:
                best_cls, best_count = cls, counts[cls]
        return best_cls

    def vote_fractions(self, row: np.ndarray) -> dict[int, float]:
        counts = self._locate(row).class_counts
        total = sum(counts.values())
        return {cls: counts.get(cls, 0) / total for cls in map(int, self.classes_)}

    def to_payload(self) -> dict:
        def walk(node: TreeNode):
            if node.is_leaf:
                return {"counts": {str(c): v for c, v in node.class_counts.items()}}
            return {
                "feature": node.feature,
                "threshold": node.threshold,
                "left": walk(node.left),
                "right": walk(node.right),
            }

        return {"tree": walk(self.root), "classes": [int(c) for c in self.classes_]}

    @classmethod
    def from_payload(cls, payload: dict, criterion: str, max_depth, min_samples_leaf) -> "ReferenceDecisionTree":
        tree = cls(criterion=criterion, max_depth=max_depth, min_samples_leaf=min_samples_leaf)
        tree.classes_ = np.array(payload["classes"])

        def walk(data) -> TreeNode:
            if "counts" in data:
                return TreeNode(class_counts={int(c): v for c, v in data["counts"].items()})
            return TreeNode(
                feature=data["feature"],
                threshold=data["threshold"],
                left=walk(data["left"]),
                right=walk(data["right"]),
            )

        tree.root = walk(payload["tree"])
        return tree


@dataclass
class BaselineModel:
    kind: str
    hyperparams: dict
    feature_names: list[str]
    medians: dict[str, float]
    k: int
    feature_set: str = ""
    outcome: str = ""
    # fitted state, kind-specific
    trees: list[ReferenceDecisionTree] = field(default_factory=list)
    train_matrix: np.ndarray | None = None
    train_labels: np.ndarray | None = None
    scaler_mean: np.ndarray | None = None
    scaler_std: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def _densify(self, record: PatientRecord | dict) -> np.ndarray:
        values = record.values if isinstance(record, PatientRecord) else record
        return np.array(
            [values.get(name, self.medians[name]) for name in self.feature_names], dtype=float
        )

    def predict(self, record: PatientRecord | dict) -> tuple[int, dict[int, float]]:
        """(risk class, per-class vote fractions); absent features take the
        medians stored at fit time."""
        row = self._densify(record)
        if self.kind == DECISION_TREE:
            tree = self.trees[0]
            return tree.predict_row(row), tree.vote_fractions(row)
        if self.kind == RANDOM_FOREST:
            classes = sorted({int(c) for t in self.trees for c in t.classes_})
            votes = {c: 0 for c in classes}
            for tree in self.trees:
                votes[tree.predict_row(row)] += 1
            total = len(self.trees)
            fractions = {c: votes[c] / total for c in classes}
            best = min((-(votes[c]), c) for c in classes)[1]
            return best, fractions
        # knn: majority vote over the nearest training rows in z-scored space
        z = (row - self.scaler_mean) / self.scaler_std
        zx = (self.train_matrix - self.scaler_mean) / self.scaler_std
        d2 = ((zx - z) ** 2).sum(axis=1)
        k_neighbors = min(self.hyperparams["k_neighbors"], len(d2))
        order = np.argsort(d2, kind="stable")[:k_neighbors]
        neighbor_labels = self.train_labels[order]
        classes = sorted(int(c) for c in np.unique(self.train_labels))
        fractions = {c: float((neighbor_labels == c).sum()) / k_neighbors for c in classes}
        best = min(((-fractions[c], c) for c in classes))[1]
        return best, fractions


_DEFAULT_HYPERPARAMS = {
    KNN: {"k_neighbors": 5},
    DECISION_TREE: {"criterion": "gini", "max_depth": None, "min_samples_leaf": 5},
    RANDOM_FOREST: {
        "criterion": "gini",
        "max_depth": None,
        "min_samples_leaf": 5,
        "n_trees": 100,
        "features_per_split": None,  # ceil(sqrt(D)) when None
        "bootstrap": True,
    },
}


def fit(
    kind: str,
    matrix: np.ndarray,
    labels,
    hyperparams: dict | None = None,
    seed: int = 0,
    feature_names: list[str] | None = None,
    medians: dict[str, float] | None = None,
    k: int | None = None,
) -> BaselineModel:
    """Fit a baseline on a dense (already imputed) matrix."""
    if kind not in BASELINE_KINDS:
        raise InvalidHyperparam(f"unknown baseline kind {kind!r}")
    X = np.asarray(matrix, dtype=float)
    y = np.asarray(labels, dtype=int)
    params = dict(_DEFAULT_HYPERPARAMS[kind])
    for key, value in (hyperparams or {}).items():
        if key not in params:
            raise InvalidHyperparam(f"{kind}: unknown hyperparameter {key!r}")
        params[key] = value
    feature_names = feature_names or [f"f{j}" for j in range(X.shape[1])]
    medians = medians or {name: float(np.median(X[:, j])) for j, name in enumerate(feature_names)}
    model = BaselineModel(
        kind=kind,
        hyperparams=params,
        feature_names=list(feature_names),
        medians=medians,
        k=int(k if k is not None else y.max()),
        metadata={"seed": seed},
    )
    if kind == KNN:
        if params["k_neighbors"] < 1:
            raise InvalidHyperparam("k_neighbors must be >= 1")
        model.train_matrix = X.copy()
        model.train_labels = y.copy()
        model.scaler_mean = X.mean(axis=0)
        std = X.std(axis=0)
        model.scaler_std = np.where(std > 0, std, 1.0)
        return model
    if kind == DECISION_TREE:
        tree = ReferenceDecisionTree(
            criterion=params["criterion"],
            max_depth=params["max_depth"],
            min_samples_leaf=params["min_samples_leaf"],
        )
        tree.fit(X, y)
        model.trees = [tree]
        return model
    n_trees = params["n_trees"]
    if n_trees < 1:
        raise InvalidHyperparam("n_trees must be >= 1")
    per_split = params["features_per_split"]
    if per_split is None:
        per_split = math.ceil(math.sqrt(X.shape[1]))
    trees = []
    for t in range(n_trees):
        rng = substream(seed, f"rf-tree-{t}")
        if params["bootstrap"]:
            rows = rng.integers(0, len(X), size=len(X))
        else:
            rows = np.arange(len(X))
        tree = ReferenceDecisionTree(
            criterion=params["criterion"],
            max_depth=params["max_depth"],
            min_samples_leaf=params["min_samples_leaf"],
        )
        tree.fit(X[rows], y[rows], rng=rng, n_features=per_split)
        trees.append(tree)
    model.trees = trees
    return model


def fit_baseline(
    kind: str,
    records: list[PatientRecord],
    labels,
    feature_set: FeatureSet,
    hyperparams: dict | None = None,
    seed: int = 0,
    k: int | None = None,
    outcome: str = "",
) -> BaselineModel:
    """Impute medians from the records, then fit; the same medians apply at
    prediction time."""
    imputed = impute_median(records, feature_set)
    model = fit(
        kind,
        imputed.matrix,
        labels,
        hyperparams=hyperparams,
        seed=seed,
        feature_names=imputed.feature_names,
        medians=imputed.medians,
        k=k,
    )
    model.feature_set = feature_set.name
    model.outcome = outcome
    return model


def serialize_baseline(model: BaselineModel) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "k": model.k,
        "feature_set": model.feature_set,
        "outcome": model.outcome,
        "hyperparams": model.hyperparams,
        "feature_names": model.feature_names,
        "medians": model.medians,
        "metadata": model.metadata,
    }
    if model.kind == KNN:
        doc["train_matrix"] = [[float(x) for x in row] for row in model.train_matrix]
        doc["train_labels"] = [int(x) for x in model.train_labels]
    else:
        doc["trees"] = [t.to_payload() for t in model.trees]
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def deserialize_baseline(text: str) -> BaselineModel:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise BaselineError(f"unsupported schema version {doc.get('schema_version')!r}")
    kind = doc["kind"]
    model = BaselineModel(
        kind=kind,
        hyperparams=doc["hyperparams"],
        feature_names=doc["feature_names"],
        medians=doc["medians"],
        k=doc["k"],
        feature_set=doc.get("feature_set", ""),
        outcome=doc.get("outcome", ""),
        metadata=doc.get("metadata", {}),
    )
    if kind == KNN:
        model.train_matrix = np.array(doc["train_matrix"], dtype=float)
        model.train_labels = np.array(doc["train_labels"], dtype=int)
        model.scaler_mean = model.train_matrix.mean(axis=0)
        std = model.train_matrix.std(axis=0)
        model.scaler_std = np.where(std > 0, std, 1.0)
    else:
        params = model.hyperparams
        model.trees = [
            ReferenceDecisionTree.from_payload(
                payload,
                criterion=params.get("criterion", "gini"),
                max_depth=params.get("max_depth"),
                min_samples_leaf=params.get("min_samples_leaf", 5),
            )
            for payload in doc["trees"]
        ]
    return model
