"""Learning diagrams from labeled records.

The growth loop is a recursive multi-class splitter in the ID3 family: each
expansion picks the (feature, threshold) pair with the lowest size-weighted
child impurity (gini or entropy), then decides the edge operator.  When a
runner-up feature splits the present records almost identically to the winner
(concordance and impurity both within ``or_gain_threshold``), the two are
emitted as an OR pair so either can carry the prediction at inference time;
otherwise the edge is a plain AND.

Training runs on the original sparse records: a record missing the split
feature is routed to both children with fractional weight proportional to
child sizes, never imputed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cohort import PatientRecord
from .features import CATEGORICAL, FeatureSet
from .metrics import EvalReport
from .mvdd import AND, GT, LE, OR, Mvdd, MvddBuilder, canonicalize, serialize
from .seeding import substream

GINI = "gini"
ENTROPY = "entropy"

_CONVERGENCE_DELTA = 1e-3


class TrainError(Exception):
    pass


class EmptyLabelSet(TrainError):
    pass


class InsufficientData(TrainError):
    pass


@dataclass
class TrainParams:
    criterion: str = GINI
    max_depth: int | None = None
    min_samples_leaf: int = 5
    or_gain_threshold: float = 0.05
    folds: int = 5
    seed: int = 0
    stratify: bool = False

    def __post_init__(self) -> None:
        if self.criterion not in (GINI, ENTROPY):
            raise TrainError(f"unknown criterion {self.criterion!r}")
        if self.folds < 2:
            raise TrainError("folds must be >= 2")
        if self.min_samples_leaf < 1:
            raise TrainError("min_samples_leaf must be >= 1")
        if self.or_gain_threshold < 0:
            raise TrainError("or_gain_threshold must be >= 0")


def impurity(labels, criterion: str = GINI, weights=None) -> float:
    """gini = 1 - sum p_i^2; entropy = -sum p_i log2 p_i (0 log 0 = 0)."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptyLabelSet("impurity of an empty label set is undefined")
    if weights is None:
        weights = np.ones(len(labels))
    weights = np.asarray(weights, dtype=float)
    total = float(weights.sum())
    if total <= 0:
        raise EmptyLabelSet("impurity needs positive total weight")
    classes = np.unique(labels)
    props = np.array([float(weights[labels == c].sum()) / total for c in classes])
    return _impurity_from_props(props, criterion)


def _impurity_from_props(props: np.ndarray, criterion: str) -> float:
    if criterion == GINI:
        return float(1.0 - (props**2).sum())
    nz = props[props > 0]
    return float(-(nz * np.log2(nz)).sum())


def _impurity_from_counts(counts: np.ndarray, totals: np.ndarray, criterion: str) -> np.ndarray:
    """Vectorized impurity per row of class-count matrix ``counts`` (rows sum to totals)."""
    props = counts / totals[:, None]
    if criterion == GINI:
        return 1.0 - (props**2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(props > 0, np.log2(np.where(props > 0, props, 1.0)), 0.0)
    return -(props * logs).sum(axis=1)


@dataclass
class SplitCandidate:
    threshold: float
    impurity: float  # size-weighted child impurity over present records
    left_weight: float
    right_weight: float


def _scan_split(
    values: np.ndarray,
    y_idx: np.ndarray,
    weights: np.ndarray | None,
    n_classes: int,
    criterion: str,
    min_child: float = 0.0,
) -> SplitCandidate | None:
    """Exhaustive scan over midpoints of consecutive distinct sorted values.

    With unit weights the cumulative class counts stay integral, so the result
    is bit-identical to a direct per-midpoint recount.
    """
    m = len(values)
    if m < 2:
        return None
    order = np.argsort(values, kind="stable")
    v = values[order]
    yy = y_idx[order]
    cuts = np.where(v[:-1] != v[1:])[0]
    if len(cuts) == 0:
        return None
    if weights is None:
        onehot = np.zeros((m, n_classes), dtype=np.int64)
        onehot[np.arange(m), yy] = 1
    else:
        onehot = np.zeros((m, n_classes))
        onehot[np.arange(m), yy] = weights[order]
    cum = np.cumsum(onehot, axis=0)
    left = cum[cuts].astype(float)
    total = cum[-1].astype(float)
    right = total - left
    wl = left.sum(axis=1)
    wr = right.sum(axis=1)
    if min_child > 0.0:
        valid = (wl >= min_child) & (wr >= min_child)
        if not valid.any():
            return None
    else:
        valid = np.ones(len(cuts), dtype=bool)
    child = (wl * _impurity_from_counts(left, wl, criterion)
             + wr * _impurity_from_counts(right, wr, criterion)) / (wl + wr)
    child = np.where(valid, child, np.inf)
    best = int(np.argmin(child))  # first minimum = lowest threshold
    thr = (v[cuts[best]] + v[cuts[best] + 1]) / 2.0
    return SplitCandidate(
        threshold=float(thr),
        impurity=float(child[best]),
        left_weight=float(wl[best]),
        right_weight=float(wr[best]),
    )


def best_split(
    records: list[PatientRecord], labels, feature: str, criterion: str = GINI
) -> SplitCandidate | None:
    """Best threshold for one feature over records where it is present.

    Candidate thresholds are midpoints between consecutive distinct sorted
    present values; records missing the feature do not vote.  Returns None
    when no valid split exists.
    """
    labels = np.asarray(labels)
    pairs = [(rec.values[feature], labels[i]) for i, rec in enumerate(records) if feature in rec.values]
    if len(pairs) < 2:
        return None
    values = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs])
    classes = np.unique(y)
    y_idx = np.searchsorted(classes, y)
    return _scan_split(values, y_idx, None, len(classes), criterion)


@dataclass
class _FeatureScan:
    index: int
    candidate: SplitCandidate


class _Grower:
    def __init__(self, X, y, feature_set: FeatureSet, params: TrainParams, k: int):
        self.X = X
        self.classes = np.arange(1, k + 1)
        self.y_idx = np.searchsorted(self.classes, y)
        self.params = params
        self.feature_set = feature_set
        self.specs = list(feature_set.features)
        self.builder = MvddBuilder(k=k)
        self.present = ~np.isnan(X)

    def impurity_of(self, idx: np.ndarray, w: np.ndarray) -> float:
        counts = np.zeros(len(self.classes))
        np.add.at(counts, self.y_idx[idx], w)
        total = counts.sum()
        return _impurity_from_props(counts[counts > 0] / total, self.params.criterion)

    def majority_class(self, idx: np.ndarray, w: np.ndarray) -> int:
        counts = np.zeros(len(self.classes))
        np.add.at(counts, self.y_idx[idx], w)
        best = int(np.argmax(counts))  # first maximum = lowest class on ties
        return int(self.classes[best])

    def grow(self, idx: np.ndarray, w: np.ndarray, depth: int) -> str:
        params = self.params
        total_w = float(w.sum())
        counts = np.zeros(len(self.classes))
        np.add.at(counts, self.y_idx[idx], w)
        pure = (counts > 0).sum() <= 1
        if (
            pure
            or (params.max_depth is not None and depth >= params.max_depth)
            or total_w < 2 * params.min_samples_leaf
        ):
            return self.builder.terminal(self.majority_class(idx, w))

        scans: list[_FeatureScan] = []
        unit_weights = bool(np.all(w == 1.0))
        for j in range(len(self.specs)):
            mask = self.present[idx, j]
            if int(mask.sum()) < 2:
                continue
            sub_idx = idx[mask]
            values = self.X[sub_idx, j]
            present_w = float(w[mask].sum())
            # Child size limits apply to routed mass; the missing share scales
            # both children equally, so translate the limit to present mass.
            min_child = params.min_samples_leaf * present_w / total_w
            cand = _scan_split(
                values,
                self.y_idx[sub_idx],
                None if unit_weights else w[mask],
                len(self.classes),
                params.criterion,
                min_child=min_child,
            )
            if cand is not None:
                scans.append(_FeatureScan(index=j, candidate=cand))
        if not scans:
            return self.builder.terminal(self.majority_class(idx, w))

        scans.sort(key=lambda s: (s.candidate.impurity, s.index, s.candidate.threshold))
        winner = scans[0]
        partner = self._pick_partner(idx, winner, scans)

        j = winner.index
        thr = winner.candidate.threshold
        mask_present = self.present[idx, j]
        col = self.X[idx, j]
        go_left = mask_present & (col <= thr)
        go_right = mask_present & (col > thr)
        wl = float(w[go_left].sum())
        wr = float(w[go_right].sum())
        f_left = wl / (wl + wr)
        missing = ~mask_present

        left_idx = np.concatenate([idx[go_left], idx[missing]])
        left_w = np.concatenate([w[go_left], w[missing] * f_left])
        right_idx = np.concatenate([idx[go_right], idx[missing]])
        right_w = np.concatenate([w[go_right], w[missing] * (1.0 - f_left)])

        parent_imp = self.impurity_of(idx, w)
        lw_total = float(left_w.sum())
        rw_total = float(right_w.sum())
        routed_imp = (
            lw_total * self.impurity_of(left_idx, left_w)
            + rw_total * self.impurity_of(right_idx, right_w)
        ) / (lw_total + rw_total)
        assert routed_imp <= parent_imp + 1e-9, "split must not increase impurity"

        left_node = self.grow(left_idx, left_w, depth + 1)
        right_node = self.grow(right_idx, right_w, depth + 1)
        return self._emit(winner, partner, left_node, right_node)

    def _pick_partner(self, idx, winner: _FeatureScan, scans: list[_FeatureScan]):
        """Runner-up feature eligible for an OR pair, with its arm alignment."""
        threshold = self.params.or_gain_threshold
        for scan in scans[1:]:
            if scan.index == winner.index:
                continue
            if scan.candidate.impurity - winner.candidate.impurity > threshold:
                break  # sorted by impurity; nothing further qualifies
            both = self.present[idx, winner.index] & self.present[idx, scan.index]
            if not both.any():
                continue
            bw = self.X[idx[both], winner.index] > winner.candidate.threshold
            br = self.X[idx[both], scan.index] > scan.candidate.threshold
            agree = float((bw == br).mean())
            aligned = agree >= 0.5
            concordance = agree if aligned else 1.0 - agree
            if concordance >= 1.0 - threshold:
                return scan, aligned
        return None

    def _arms_for(self, j: int, thr: float):
        """(left-arm payload, right-arm payload) for feature j split at thr."""
        spec = self.specs[j]
        if spec.kind == CATEGORICAL:
            left_codes = tuple(c for c in spec.codes if c <= thr)
            right_codes = tuple(c for c in spec.codes if c > thr)
            left_labels = tuple(spec.label_for(c) for c in left_codes)
            right_labels = tuple(spec.label_for(c) for c in right_codes)
            return ("categorical", (left_codes, left_labels), (right_codes, right_labels))
        return ("continuous", LE, GT)

    def _emit(self, winner, partner, left_node: str, right_node: str) -> str:
        if partner is None:
            return self._emit_plain(winner, left_node, right_node, AND, None)
        scan, aligned = partner
        sub_spec = self.specs[scan.index]
        kind, left_payload, right_payload = self._arms_for(scan.index, scan.candidate.threshold)
        if aligned:
            pair = [(left_payload, AND, left_node), (right_payload, AND, right_node)]
        else:
            pair = [(right_payload, AND, left_node), (left_payload, AND, right_node)]
        if kind == "categorical":
            sub_id = self.builder.categorical(
                sub_spec.name, [(codes, labels, op, t) for (codes, labels), op, t in pair]
            )
        else:
            sub_id = self.builder.continuous(
                sub_spec.name, scan.candidate.threshold, [(cmp, op, t) for cmp, op, t in pair]
            )
        return self._emit_plain(winner, sub_id, sub_id, OR, None)

    def _emit_plain(self, winner, left_target: str, right_target: str, op: str, _):
        spec = self.specs[winner.index]
        kind, left_payload, right_payload = self._arms_for(winner.index, winner.candidate.threshold)
        if kind == "categorical":
            (lc, ll), (rc, rl) = left_payload, right_payload
            return self.builder.categorical(
                spec.name, [(lc, ll, op, left_target), (rc, rl, op, right_target)]
            )
        return self.builder.continuous(
            spec.name,
            winner.candidate.threshold,
            [(LE, op, left_target), (GT, op, right_target)],
        )


def _to_matrix(records: list[PatientRecord], feature_set: FeatureSet) -> np.ndarray:
    names = feature_set.names()
    X = np.full((len(records), len(names)), np.nan)
    for i, rec in enumerate(records):
        for j, name in enumerate(names):
            v = rec.values.get(name)
            if v is not None:
                X[i, j] = v
    return X


def grow_mvdd(
    records: list[PatientRecord],
    labels,
    feature_set: FeatureSet,
    params: TrainParams,
    k: int | None = None,
    outcome: str = "",
    fold: int | None = None,
) -> Mvdd:
    labels = np.asarray(labels, dtype=int)
    if len(records) != len(labels):
        raise TrainError("records and labels must align")
    if len(records) < params.min_samples_leaf:
        raise InsufficientData(
            f"need at least min_samples_leaf={params.min_samples_leaf} records, got {len(records)}"
        )
    k = int(k if k is not None else labels.max())
    if labels.min() < 1 or labels.max() > k:
        raise TrainError(f"labels must lie in [1, {k}]")
    X = _to_matrix(records, feature_set)
    grower = _Grower(X, labels, feature_set, params, k)
    idx = np.arange(len(records))
    root = grower.grow(idx, np.ones(len(records)), depth=0)
    mvdd = grower.builder.build(root, check=False)
    mvdd.feature_set = feature_set.name
    mvdd.outcome = outcome
    mvdd.metadata = {
        "criterion": params.criterion,
        "seed": params.seed,
        "fold": fold,
        "max_depth": params.max_depth,
        "min_samples_leaf": params.min_samples_leaf,
        "or_gain_threshold": params.or_gain_threshold,
    }
    return canonicalize(mvdd)


@dataclass
class FoldResult:
    fold: int
    model: Mvdd
    depth: int
    val_weighted_auc: float
    val_report: EvalReport
    val_size: int


@dataclass
class CvResult:
    folds: list[FoldResult]
    selected: Mvdd
    selected_fold: int


def _fold_assignment(n: int, params: TrainParams, labels: np.ndarray) -> np.ndarray:
    rng = substream(params.seed, "folds")
    fold_of = np.empty(n, dtype=int)
    if params.stratify:
        for cls in np.unique(labels):
            members = np.where(labels == cls)[0]
            members = members[rng.permutation(len(members))]
            fold_of[members] = np.arange(len(members)) % params.folds
    else:
        perm = rng.permutation(n)
        fold_of[perm] = np.arange(n) % params.folds
    return fold_of


def cross_validate(
    records: list[PatientRecord],
    labels,
    feature_set: FeatureSet,
    params: TrainParams,
    k: int | None = None,
    outcome: str = "",
) -> CvResult:
    """Seeded shuffled folds; per fold the depth is relaxed until the
    held-out weighted AUC stops improving by more than 0.001, and the model
    with the best fold validation AUC is selected (ties: lowest fold)."""
    from .scoring import evaluation_report  # local import; scoring uses this module's types

    labels = np.asarray(labels, dtype=int)
    n = len(records)
    if n < params.folds:
        raise InsufficientData(f"{n} records cannot fill {params.folds} folds")
    k = int(k if k is not None else labels.max())
    fold_of = _fold_assignment(n, params, labels)
    results: list[FoldResult] = []
    for f in range(params.folds):
        val_mask = fold_of == f
        train_idx = np.where(~val_mask)[0]
        val_idx = np.where(val_mask)[0]
        if len(train_idx) < params.min_samples_leaf:
            raise InsufficientData(f"fold {f}: training slice smaller than min_samples_leaf")
        train_records = [records[i] for i in train_idx]
        train_labels = labels[train_idx]
        val_records = [records[i] for i in val_idx]
        val_labels = labels[val_idx]

        best: tuple[float, int, Mvdd, EvalReport] | None = None
        prev_auc = -math.inf
        prev_doc = None
        depth = 1
        while True:
            fold_params = TrainParams(
                criterion=params.criterion,
                max_depth=depth,
                min_samples_leaf=params.min_samples_leaf,
                or_gain_threshold=params.or_gain_threshold,
                folds=params.folds,
                seed=params.seed,
                stratify=params.stratify,
            )
            model = grow_mvdd(
                train_records, train_labels, feature_set, fold_params, k=k, outcome=outcome, fold=f
            )
            report = evaluation_report(model, val_records, val_labels)
            auc = report.averaged_auc.value if report.averaged_auc.value is not None else 0.0
            if best is None or auc > best[0]:
                best = (auc, depth, model, report)
            doc = serialize(model)
            grew = doc != prev_doc
            improved = auc - prev_auc > _CONVERGENCE_DELTA
            prev_auc = auc
            prev_doc = doc
            at_cap = params.max_depth is not None and depth >= params.max_depth
            if not grew or at_cap or (depth > 1 and not improved):
                break
            depth += 1
        auc, depth, model, report = best
        results.append(
            FoldResult(
                fold=f,
                model=model,
                depth=depth,
                val_weighted_auc=auc,
                val_report=report,
                val_size=len(val_idx),
            )
        )
    selected = max(results, key=lambda r: (r.val_weighted_auc, -r.fold))
    return CvResult(folds=results, selected=selected.model, selected_fold=selected.fold)


def fold_report_csv(result: CvResult) -> str:
    lines = ["fold,depth,val_size,val_weighted_auc,val_accuracy,selected"]
    for fr in result.folds:
        acc = fr.val_report.accuracy.value
        lines.append(
            f"{fr.fold},{fr.depth},{fr.val_size},"
            f"{'' if fr.val_weighted_auc is None else repr(fr.val_weighted_auc)},"
            f"{'' if acc is None else repr(acc)},"
            f"{int(fr.fold == result.selected_fold)}"
        )
    return "\n".join(lines) + "\n"
