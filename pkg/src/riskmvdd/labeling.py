"""Risk-class label generation: mean imputation, 2-component PCA, bottom-up
clustering with selectable linkage, elbow-based k selection, C-index cluster
quality, and per-cluster outcome-rate derivation.

Mean imputation is used only here; model training downstream consumes the
original sparse records.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import PatientRecord
from .features import CONTINUOUS, FeatureSet

WARD = "ward"
AVERAGE = "average"
COMPLETE = "complete"
LINKAGES = (WARD, AVERAGE, COMPLETE)

# Probability bands for the five-class stratification: <10%, 10-20%, 20-30%,
# 30-40%, >40%.  Other k get equal-width bands with an open top band.
FIVE_CLASS_BANDS = {
    1: (0.0, 0.10),
    2: (0.10, 0.20),
    3: (0.20, 0.30),
    4: (0.30, 0.40),
    5: (0.40, 1.0),
}

OVERALL = "overall"


class LabelingError(Exception):
    pass


class EmptyCohort(LabelingError):
    pass


class DegenerateMatrix(LabelingError):
    pass


class KTooLarge(LabelingError):
    pass


class EmptyCluster(LabelingError):
    pass


@dataclass
class ImputeResult:
    matrix: np.ndarray
    feature_names: list[str]
    column_means: dict[str, float]
    dropped_features: list[str]
    record_ids: list[str]


def impute_mean(records: list[PatientRecord], feature_set: FeatureSet) -> ImputeResult:
    """Dense matrix with absent cells replaced by the feature mean.

    Features with no present value anywhere are dropped (reported in
    ``dropped_features``) rather than invented.
    """
    if not records:
        raise EmptyCohort("no records to impute")
    names = list(feature_set.names())
    n = len(records)
    raw = np.full((n, len(names)), np.nan)
    for i, rec in enumerate(records):
        for j, name in enumerate(names):
            v = rec.values.get(name)
            if v is not None:
                raw[i, j] = v
    keep, dropped, means = [], [], {}
    for j, name in enumerate(names):
        col = raw[:, j]
        present = ~np.isnan(col)
        if not present.any():
            dropped.append(name)
            continue
        mean = float(col[present].mean())
        col[~present] = mean
        means[name] = mean
        keep.append(j)
    if not keep:
        raise EmptyCohort("every feature column is entirely absent")
    return ImputeResult(
        matrix=raw[:, keep],
        feature_names=[names[j] for j in keep],
        column_means=means,
        dropped_features=dropped,
        record_ids=[rec.record_id for rec in records],
    )


@dataclass
class PcaResult:
    coords: np.ndarray  # (n, n_components) projections
    explained_variance: tuple[float, ...]
    components: np.ndarray  # (n_components, d) right singular vectors
    center: np.ndarray
    scale: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """Back-project to the centered (and scaled) feature space."""
        return self.coords @ self.components

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return ((matrix - self.center) / self.scale) @ self.components.T


def pca_project(matrix: np.ndarray, n_components: int = 2, standardize: bool = True) -> PcaResult:
    """Top principal-component projection via singular value decomposition.

    Columns are centered, and scaled to unit variance unless ``standardize``
    is disabled; feature scales here differ by orders of magnitude, so
    unstandardized projections would be dominated by a single feature.
    """
    matrix = np.asarray(matrix, dtype=float)
    n, d = matrix.shape
    if n < 2 or d < 2:
        raise DegenerateMatrix(f"need at least a 2x2 matrix, got {n}x{d}")
    center = matrix.mean(axis=0)
    centered = matrix - center
    scale = np.ones(d)
    if standardize:
        std = centered.std(axis=0)
        scale = np.where(std > 0, std, 1.0)
        centered = centered / scale
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    total = float((singular**2).sum())
    if total == 0.0:
        raise DegenerateMatrix("matrix has zero total variance")
    components = vt[:n_components]
    coords = centered @ components.T
    fractions = tuple(float(s * s / total) for s in singular[:n_components])
    return PcaResult(
        coords=coords,
        explained_variance=fractions,
        components=components,
        center=center,
        scale=scale,
    )


@dataclass
class Embedding:
    record_ids: list[str]
    coords: np.ndarray
    explained_variance: tuple[float, ...] = ()

    @classmethod
    def from_coords(cls, coords: np.ndarray) -> "Embedding":
        coords = np.asarray(coords, dtype=float)
        return cls(record_ids=[f"p{i}" for i in range(len(coords))], coords=coords)

    def __len__(self) -> int:
        return len(self.record_ids)


def embed(records: list[PatientRecord], feature_set: FeatureSet, standardize: bool = True):
    """Convenience: impute then project; returns (Embedding, ImputeResult, PcaResult)."""
    imputed = impute_mean(records, feature_set)
    pca = pca_project(imputed.matrix, n_components=2, standardize=standardize)
    embedding = Embedding(
        record_ids=imputed.record_ids,
        coords=pca.coords,
        explained_variance=pca.explained_variance,
    )
    return embedding, imputed, pca


def _pairwise_sq(coords: np.ndarray) -> np.ndarray:
    sq = (coords**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * coords @ coords.T
    np.maximum(d2, 0.0, out=d2)
    return d2


def linkage_merge_history(coords: np.ndarray, linkage: str = WARD) -> list[tuple[int, int, float]]:
    """Full bottom-up merge history (n-1 merges).

    Follows the usual linkage-matrix convention: original points are clusters
    0..n-1 and the cluster created by merge ``i`` has id ``n + i``.  Ties break
    on the lowest index pair, so the history is deterministic.
    """
    if linkage not in LINKAGES:
        raise LabelingError(f"unknown linkage {linkage!r}")
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    if n == 0:
        raise EmptyCohort("no points to cluster")
    if n == 1:
        return []
    # Ward updates run on squared distances; average/complete on plain ones.
    dist = _pairwise_sq(coords)
    if linkage != WARD:
        np.sqrt(dist, out=dist)
    np.fill_diagonal(dist, np.inf)
    size = np.ones(n)
    cluster_id = np.arange(n)
    active = np.ones(n, dtype=bool)
    # Cached per-row nearest neighbour (index of the smallest entry).
    nn_idx = np.argmin(dist, axis=1)
    nn_val = dist[np.arange(n), nn_idx]

    history: list[tuple[int, int, float]] = []
    for step in range(n - 1):
        masked = np.where(active, nn_val, np.inf)
        i = int(np.argmin(masked))
        j = int(nn_idx[i])
        if j < i:
            i, j = j, i
        d_ij = float(dist[i, j])
        merged = min(cluster_id[i], cluster_id[j]), max(cluster_id[i], cluster_id[j])
        history.append((int(merged[0]), int(merged[1]), math.sqrt(d_ij) if linkage == WARD else d_ij))

        mask = active.copy()
        mask[i] = mask[j] = False
        if linkage == WARD:
            si, sj, sk = size[i], size[j], size[mask]
            new = ((si + sk) * dist[i, mask] + (sj + sk) * dist[j, mask] - sk * d_ij) / (si + sj + sk)
        elif linkage == AVERAGE:
            new = (size[i] * dist[i, mask] + size[j] * dist[j, mask]) / (size[i] + size[j])
        else:
            new = np.maximum(dist[i, mask], dist[j, mask])
        dist[i, mask] = new
        dist[mask, i] = new
        dist[i, j] = dist[j, i] = np.inf
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        active[j] = False
        size[i] = size[i] + size[j]
        cluster_id[i] = n + step

        nn_idx[i] = int(np.argmin(dist[i]))
        nn_val[i] = dist[i, nn_idx[i]]
        act = np.where(active)[0]
        act = act[act != i]
        if len(act):
            stale = act[(nn_idx[act] == i) | (nn_idx[act] == j)]
            for r in stale:
                nn_idx[r] = int(np.argmin(dist[r]))
                nn_val[r] = dist[r, nn_idx[r]]
            di = dist[act, i]
            # Ties keep the lowest column index, matching a fresh argmin.
            better = act[(di < nn_val[act]) | ((di == nn_val[act]) & (i < nn_idx[act]))]
            nn_idx[better] = i
            nn_val[better] = dist[better, i]
    return history


def cut_merge_history(history: list[tuple[int, int, float]], n: int, k: int) -> np.ndarray:
    """Labels in 0..k-1 from replaying the first n-k merges.

    Cluster indices are assigned by order of first member appearance, which
    keeps cuts deterministic for any k without recomputing the hierarchy.
    """
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} points")
    if k < 1:
        raise LabelingError("k must be >= 1")
    parent = list(range(n + len(history)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step in range(n - k):
        a, b, _ = history[step]
        new = n + step
        parent[find(a)] = new
        parent[find(b)] = new
    labels = np.empty(n, dtype=int)
    index_of: dict[int, int] = {}
    for i in range(n):
        root = find(i)
        if root not in index_of:
            index_of[root] = len(index_of)
        labels[i] = index_of[root]
    return labels


@dataclass
class ClusterModel:
    k: int
    linkage: str
    assignments: dict[str, int]
    merge_history: list[tuple[int, int, float]]
    record_ids: list[str]
    coords: np.ndarray | None = None

    def labels(self) -> np.ndarray:
        return np.array([self.assignments[r] for r in self.record_ids])


def agglomerative_cluster(embedding: Embedding, k: int, linkage: str = WARD) -> ClusterModel:
    n = len(embedding)
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} points")
    history = linkage_merge_history(embedding.coords, linkage)
    labels = cut_merge_history(history, n, k)
    assignments = {rid: int(labels[i]) for i, rid in enumerate(embedding.record_ids)}
    return ClusterModel(
        k=k,
        linkage=linkage,
        assignments=assignments,
        merge_history=history,
        record_ids=list(embedding.record_ids),
        coords=embedding.coords,
    )


def within_cluster_ss(coords: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for c in np.unique(labels):
        members = coords[labels == c]
        centroid = members.mean(axis=0)
        total += float(((members - centroid) ** 2).sum())
    return total


@dataclass
class ElbowResult:
    recommended_k: int
    curve: list[tuple[int, float]]
    strength: float
    low_confidence: bool


def elbow_select_k(
    embedding: Embedding,
    k_max: int,
    linkage: str = WARD,
    history: list[tuple[int, int, float]] | None = None,
) -> ElbowResult:
    """Within-cluster sum-of-squares curve plus an automated elbow.

    The elbow is the k (2..k_max) whose point on the normalized curve lies
    farthest from the chord joining (1, WSS_1) and (k_max, WSS_kmax).  The
    recommendation is flagged low-confidence when the cut at the elbow still
    leaves more than 20% of the k=1 dispersion unexplained (smooth decay, no
    dominant elbow); the caller may always override k.
    """
    n = len(embedding)
    if not 2 <= k_max <= n:
        raise LabelingError(f"k_max must be in [2, {n}], got {k_max}")
    coords = embedding.coords
    if history is None:
        history = linkage_merge_history(coords, linkage)
    curve = []
    for k in range(1, k_max + 1):
        labels = cut_merge_history(history, n, k)
        curve.append((k, within_cluster_ss(coords, labels)))
    wss = np.array([w for _, w in curve])
    ks = np.array([float(k) for k, _ in curve])
    k_span = ks[-1] - ks[0]
    w_span = wss[0] - wss[-1]
    if w_span <= 0:
        return ElbowResult(recommended_k=2, curve=curve, strength=0.0, low_confidence=True)
    x = (ks - ks[0]) / k_span
    y = (wss - wss[-1]) / w_span
    # Perpendicular distance to the chord from (0, 1) to (1, 0): |x + y - 1| / sqrt(2).
    dist = np.abs(x + y - 1.0) / math.sqrt(2.0)
    candidates = range(1, k_max)  # curve indices for k = 2..k_max
    best_idx = max(candidates, key=lambda i: (dist[i], -i))
    strength = float(dist[best_idx])
    residual = wss[best_idx] / wss[0] if wss[0] > 0 else 0.0
    return ElbowResult(
        recommended_k=int(ks[best_idx]),
        curve=curve,
        strength=strength,
        low_confidence=bool(residual > 0.2),
    )


def c_index(coords: np.ndarray, labels: np.ndarray) -> float:
    """Normalized within-cluster distance sum in [0, 1]; lower is better.

    C = (S - S_min) / (S_max - S_min) with S the sum of within-cluster
    pairwise distances and S_min/S_max the sums of the P smallest/largest
    distances over all pairs, P being the number of within-cluster pairs.
    """
    coords = np.asarray(coords, dtype=float)
    labels = np.asarray(labels)
    n = len(coords)
    if len(np.unique(labels)) < 2:
        raise LabelingError("c_index needs at least 2 clusters")
    iu = np.triu_indices(n, k=1)
    d = np.sqrt(_pairwise_sq(coords))[iu]
    within = (labels[iu[0]] == labels[iu[1]])
    p = int(within.sum())
    if p == 0:
        raise LabelingError("c_index needs at least one within-cluster pair")
    s = float(d[within].sum())
    d_sorted = np.sort(d)
    s_min = float(d_sorted[:p].sum())
    s_max = float(d_sorted[-p:].sum())
    if s_max == s_min:
        return 0.0
    return (s - s_min) / (s_max - s_min)


def risk_bands(k: int) -> dict[int, tuple[float, float]]:
    """Probability band per class: the fixed table for k=5, equal widths otherwise."""
    if k == 5:
        return dict(FIVE_CLASS_BANDS)
    return {c: ((c - 1) / k, c / k if c < k else 1.0) for c in range(1, k + 1)}


def band_label(cls: int, bands: dict[int, tuple[float, float]]) -> str:
    """Render a band the way the summary tables print it: <10%, 10 - 20%, >40%."""
    lo, hi = bands[cls]
    k = len(bands)

    def pct(x: float) -> str:
        v = x * 100.0
        return str(int(v)) if float(v).is_integer() else f"{v:g}"

    if cls == 1:
        return f"<{pct(hi)}%"
    if cls == k:
        return f">{pct(lo)}%"
    return f"{pct(lo)} - {pct(hi)}%"


@dataclass
class RiskLabeling:
    outcome: str
    feature_set: str
    k: int
    class_of: dict[str, int]
    ranges: dict[int, tuple[float, float]]
    cluster_means: dict[tuple[int, str], float]
    excluded_records: list[str] = field(default_factory=list)

    def overall_mean(self, cls: int) -> float:
        return self.cluster_means[(cls, OVERALL)]

    def to_table_csv(self, records: dict[str, PatientRecord] | None = None) -> str:
        lines = ["record_id,cohort_id,risk_class,outcome"]
        for rid in sorted(self.class_of):
            cohort = records[rid].cohort_id if records and rid in records else ""
            out = ""
            if records and rid in records:
                o = records[rid].outcomes.get(self.outcome)
                out = "" if o is None else ("1" if o else "0")
            lines.append(f"{rid},{cohort},{self.class_of[rid]},{out}")
        return "\n".join(lines) + "\n"


def derive_risk_classes(
    model: ClusterModel,
    records: list[PatientRecord],
    outcome: str,
    feature_set_name: str = "",
) -> RiskLabeling:
    """Renumber clusters 1..k by ascending event rate and derive band means.

    Records whose outcome is unknown are excluded (and reported); a cluster
    emptied by that exclusion is an error because its rate is undefined.
    """
    by_id = {rec.record_id: rec for rec in records}
    cluster_records: dict[int, list[PatientRecord]] = {c: [] for c in range(model.k)}
    excluded = []
    for rid, cluster in model.assignments.items():
        rec = by_id.get(rid)
        if rec is None:
            continue
        if rec.outcomes.get(outcome) is None:
            excluded.append(rid)
            continue
        cluster_records[cluster].append(rec)
    rates = {}
    for cluster, members in cluster_records.items():
        if not members:
            raise EmptyCluster(f"cluster {cluster} has no records with a known {outcome} outcome")
        rates[cluster] = sum(1 for r in members if r.outcomes[outcome]) / len(members)
    order = sorted(rates, key=lambda c: (rates[c], c))
    class_for_cluster = {cluster: i + 1 for i, cluster in enumerate(order)}

    excluded_set = set(excluded)
    class_of = {
        rid: class_for_cluster[cluster]
        for rid, cluster in model.assignments.items()
        if rid in by_id and rid not in excluded_set
    }
    cluster_means: dict[tuple[int, str], float] = {}
    for cluster, members in cluster_records.items():
        cls = class_for_cluster[cluster]
        cluster_means[(cls, OVERALL)] = rates[cluster]
        cohorts = sorted({r.cohort_id for r in members})
        for cohort in cohorts:
            subset = [r for r in members if r.cohort_id == cohort]
            cluster_means[(cls, cohort)] = sum(1 for r in subset if r.outcomes[outcome]) / len(subset)
    return RiskLabeling(
        outcome=outcome,
        feature_set=feature_set_name,
        k=model.k,
        class_of=class_of,
        ranges=risk_bands(model.k),
        cluster_means=cluster_means,
        excluded_records=sorted(excluded),
    )


def render_labeling_summary(labeling: RiskLabeling, cohort_ids: list[str]) -> str:
    """Summary table: per class the band, overall mean, and per-cohort means."""
    header = ["Risk Score", "Probability", "Overall", *cohort_ids]
    rows = [header]
    for cls in range(1, labeling.k + 1):
        row = [str(cls), band_label(cls, labeling.ranges)]
        row.append(f"{labeling.cluster_means[(cls, OVERALL)]:.3f}")
        for cohort in cohort_ids:
            mean = labeling.cluster_means.get((cls, cohort))
            row.append("N/A" if mean is None else f"{mean:.3f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def merge_history_csv(history: list[tuple[int, int, float]], n: int) -> str:
    """Linkage triples (plus merged size) for external dendrogram plotters."""
    sizes: dict[int, int] = {}

    def size_of(cid: int) -> int:
        return sizes.get(cid, 1)

    lines = ["cluster_a,cluster_b,distance,size"]
    for step, (a, b, dist) in enumerate(history):
        merged = size_of(a) + size_of(b)
        sizes[n + step] = merged
        lines.append(f"{a},{b},{repr(dist)},{merged}")
    return "\n".join(lines) + "\n"


@dataclass
class LabelingPipeline:
    """Serve-time assigner for records that were not in the pooled clustering.

    Stores the imputation means, standardization, principal components, and
    the embedded-space centroid per risk class; new records are assigned to
    the nearest centroid.
    """

    feature_names: list[str]
    column_means: dict[str, float]
    center: list[float]
    scale: list[float]
    components: list[list[float]]
    centroids: dict[int, list[float]]
    ranges: dict[int, tuple[float, float]]
    outcome: str
    feature_set: str

    def assign(self, record: PatientRecord) -> int:
        row = np.array(
            [record.values.get(name, self.column_means[name]) for name in self.feature_names]
        )
        coords = ((row - np.array(self.center)) / np.array(self.scale)) @ np.array(self.components).T
        best_cls, best_d = None, math.inf
        for cls in sorted(self.centroids):
            d = float(((coords - np.array(self.centroids[cls])) ** 2).sum())
            if d < best_d:
                best_cls, best_d = cls, d
        return best_cls

    def to_json(self) -> str:
        payload = {
            "schema_version": 1,
            "kind": "labeling-pipeline",
            "outcome": self.outcome,
            "feature_set": self.feature_set,
            "feature_names": self.feature_names,
            "column_means": self.column_means,
            "center": self.center,
            "scale": self.scale,
            "components": self.components,
            "centroids": {str(c): v for c, v in self.centroids.items()},
            "ranges": {str(c): list(v) for c, v in self.ranges.items()},
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LabelingPipeline":
        data = json.loads(text)
        return cls(
            feature_names=data["feature_names"],
            column_means=data["column_means"],
            center=data["center"],
            scale=data["scale"],
            components=data["components"],
            centroids={int(c): v for c, v in data["centroids"].items()},
            ranges={int(c): tuple(v) for c, v in data["ranges"].items()},
            outcome=data["outcome"],
            feature_set=data["feature_set"],
        )


def build_pipeline(
    imputed: ImputeResult,
    pca: PcaResult,
    model: ClusterModel,
    labeling: RiskLabeling,
) -> LabelingPipeline:
    coords = model.coords if model.coords is not None else pca.coords
    row_of = {rid: i for i, rid in enumerate(imputed.record_ids)}
    centroids = {}
    for cls in range(1, labeling.k + 1):
        idx = [row_of[rid] for rid, c in labeling.class_of.items() if c == cls]
        centroids[cls] = [float(x) for x in coords[idx].mean(axis=0)]
    return LabelingPipeline(
        feature_names=imputed.feature_names,
        column_means=imputed.column_means,
        center=[float(x) for x in pca.center],
        scale=[float(x) for x in pca.scale],
        components=[[float(x) for x in row] for row in pca.components],
        centroids=centroids,
        ranges=labeling.ranges,
        outcome=labeling.outcome,
        feature_set=labeling.feature_set,
    )
