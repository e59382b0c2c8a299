"""Prediction metrics for ordinal risk classes.

Per-class one-vs-rest ROC curves and AUCs, support-weighted summary metrics
with confidence intervals, calibration tables over ten fixed probability
bins, and paired DeLong AUC comparison tests.

AUC is the Mann-Whitney statistic computed from midranks (ties count one
half), which matches brute-force concordant-pair counting bit for bit; the
ROC point list is built separately for plotting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Z_95 = 1.96


class MetricsError(Exception):
    pass


class DegenerateOutcomes(MetricsError):
    """Outcome vector holds a single class; AUC comparison is undefined."""


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based average ranks; tied values share the mean of their positions."""
    order = np.argsort(x, kind="stable")
    z = x[order]
    n = len(x)
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j < n and z[j] == z[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def auc_score(scores, positives) -> float:
    """Mann-Whitney AUC with ties counted 1/2."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    m = int(positives.sum())
    n_neg = len(scores) - m
    if m == 0 or n_neg == 0:
        raise DegenerateOutcomes("AUC needs at least one positive and one negative")
    ranks = _midranks(scores)
    pos_rank_sum = float(ranks[positives].sum())
    return (pos_rank_sum - m * (m + 1) / 2.0) / (m * n_neg)


def roc_points(scores, positives) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) sweep from (0,0) to (1,1), one step per distinct score."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    m = int(positives.sum())
    n_neg = len(scores) - m
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = positives[order]
    points = [(0.0, 0.0, math.inf)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += (j - i) - int(y[i:j].sum())
        points.append((fp / n_neg if n_neg else 0.0, tp / m if m else 0.0, float(s[i])))
        i = j
    return points


def _placements(scores: np.ndarray, positives: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """(auc, v10 per positive, v01 per negative) structural components."""
    pos = scores[positives]
    neg = scores[~positives]
    m, n_neg = len(pos), len(neg)
    tx = _midranks(pos)
    ty = _midranks(neg)
    tz = _midranks(scores)
    v10 = (tz[positives] - tx) / n_neg
    v01 = 1.0 - (tz[~positives] - ty) / m
    auc = (float(tz[positives].sum()) / m - (m + 1) / 2.0) / n_neg
    return auc, v10, v01


def auc_variance(scores, positives) -> float:
    """DeLong variance of a single AUC from placement values."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    m = int(positives.sum())
    n_neg = len(scores) - m
    if m == 0 or n_neg == 0:
        raise DegenerateOutcomes("variance needs both outcome classes")
    _, v10, v01 = _placements(scores, positives)
    var = 0.0
    if m > 1:
        var += float(np.var(v10, ddof=1)) / m
    if n_neg > 1:
        var += float(np.var(v01, ddof=1)) / n_neg
    return var


@dataclass
class DeLongResult:
    auc_a: float
    auc_b: float
    delta: float  # auc_a - auc_b (first model minus second)
    variance: float
    z: float
    p_value: float


def delong_test(scores_a, scores_b, outcomes) -> DeLongResult:
    """Paired DeLong comparison of two correlated AUCs on the same records."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    y = np.asarray(outcomes, dtype=bool)
    if len(a) != len(b) or len(a) != len(y):
        raise MetricsError("score vectors and outcomes must align")
    m = int(y.sum())
    n_neg = len(y) - m
    if m == 0 or n_neg == 0:
        raise DegenerateOutcomes("DeLong test needs both outcome classes")
    auc_a, v10_a, v01_a = _placements(a, y)
    auc_b, v10_b, v01_b = _placements(b, y)
    var = 0.0
    if m > 1:
        s10 = np.cov(np.vstack([v10_a, v10_b]), ddof=1)
        var += (s10[0, 0] + s10[1, 1] - 2.0 * s10[0, 1]) / m
    if n_neg > 1:
        s01 = np.cov(np.vstack([v01_a, v01_b]), ddof=1)
        var += (s01[0, 0] + s01[1, 1] - 2.0 * s01[0, 1]) / n_neg
    delta = auc_a - auc_b
    if var <= 0.0:
        z = 0.0 if delta == 0.0 else math.copysign(math.inf, delta)
        p = 1.0 if delta == 0.0 else 0.0
    else:
        z = delta / math.sqrt(var)
        p = math.erfc(abs(z) / math.sqrt(2.0))  # two-sided normal
    return DeLongResult(auc_a=auc_a, auc_b=auc_b, delta=delta, variance=max(var, 0.0), z=z, p_value=p)


def confidence_interval(value: float, n: int, kind: str = "proportion", variance: float | None = None) -> float:
    """95% half-width: normal approximation for proportions, DeLong variance for AUC."""
    if kind == "proportion":
        if n < 1:
            raise MetricsError("n must be >= 1")
        return Z_95 * math.sqrt(value * (1.0 - value) / n)
    if kind == "auc":
        if variance is None:
            raise MetricsError("AUC intervals need the DeLong variance")
        return Z_95 * math.sqrt(max(variance, 0.0))
    raise MetricsError(f"unknown interval kind {kind!r}")


@dataclass
class ClassRoc:
    risk_class: int
    points: list[tuple[float, float, float]]
    auc: float | None
    support: int
    auc_variance: float | None = None


@dataclass
class ClassSummary:
    risk_class: int
    support: int
    accuracy: float
    sensitivity: float | None
    specificity: float | None


@dataclass
class MetricValue:
    value: float | None
    ci_half_width: float | None

    def render(self) -> str:
        if self.value is None:
            return "N/A"
        return f"{self.value:.3f}±{self.ci_half_width:.3f}"


@dataclass
class EvalReport:
    per_class: list[ClassRoc]
    per_class_summary: list[ClassSummary]
    averaged_auc: MetricValue
    accuracy: MetricValue
    sensitivity: MetricValue
    specificity: MetricValue
    n: int
    indeterminate_count: int = 0


def per_class_roc(true_classes, class_scores: dict[int, list[float]]) -> list[ClassRoc]:
    """One-vs-rest ROC per class: positives are records whose true class is c,
    scored by the model's confidence for c.  Classes without both positives
    and negatives are reported absent (auc None)."""
    true = np.asarray(true_classes)
    out = []
    for cls in sorted(class_scores):
        scores = np.asarray(class_scores[cls], dtype=float)
        if len(scores) != len(true):
            raise MetricsError(f"class {cls}: need one score per record")
        positives = true == cls
        support = int(positives.sum())
        if support == 0 or support == len(true):
            out.append(ClassRoc(risk_class=cls, points=[], auc=None, support=support))
            continue
        out.append(
            ClassRoc(
                risk_class=cls,
                points=roc_points(scores, positives),
                auc=auc_score(scores, positives),
                support=support,
                auc_variance=auc_variance(scores, positives),
            )
        )
    return out


def weighted_summary(per_class: list[ClassRoc], predictions, true_classes) -> EvalReport:
    """Support-weighted means of the per-class one-vs-rest metrics."""
    if not per_class:
        raise MetricsError("per_class must be non-empty")
    true = np.asarray(true_classes)
    pred = np.asarray(predictions)
    n = len(true)
    summaries = []
    for roc in per_class:
        cls = roc.risk_class
        tp = int(((pred == cls) & (true == cls)).sum())
        fp = int(((pred == cls) & (true != cls)).sum())
        fn = int(((pred != cls) & (true == cls)).sum())
        tn = n - tp - fp - fn
        pos = tp + fn
        neg = tn + fp
        summaries.append(
            ClassSummary(
                risk_class=cls,
                support=pos,
                accuracy=(tp + tn) / n,
                sensitivity=tp / pos if pos else None,
                specificity=tn / neg if neg else None,
            )
        )

    def weighted(pairs: list[tuple[int, float | None]]) -> float | None:
        defined = [(w, v) for w, v in pairs if v is not None and w > 0]
        total = sum(w for w, _ in defined)
        if total == 0:
            return None
        return sum(w * v for w, v in defined) / total

    acc = weighted([(s.support, s.accuracy) for s in summaries])
    sens = weighted([(s.support, s.sensitivity) for s in summaries])
    spec = weighted([(s.support, s.specificity) for s in summaries])
    auc = weighted([(r.support, r.auc) for r in per_class])

    # Variance of the weighted AUC, treating per-class AUCs as independent.
    auc_ci = None
    if auc is not None:
        total_w = sum(r.support for r in per_class if r.auc is not None)
        var = sum(
            (r.support / total_w) ** 2 * r.auc_variance
            for r in per_class
            if r.auc is not None and r.auc_variance is not None
        )
        auc_ci = confidence_interval(auc, n, kind="auc", variance=var)

    def proportion_metric(value: float | None) -> MetricValue:
        if value is None:
            return MetricValue(None, None)
        return MetricValue(value, confidence_interval(value, n, "proportion"))

    return EvalReport(
        per_class=per_class,
        per_class_summary=summaries,
        averaged_auc=MetricValue(auc, auc_ci),
        accuracy=proportion_metric(acc),
        sensitivity=proportion_metric(sens),
        specificity=proportion_metric(spec),
        n=n,
    )


@dataclass
class CalibrationBin:
    lower: float
    upper: float
    mean_predicted: float | None
    fraction_positive: float | None
    count: int

    @property
    def empty(self) -> bool:
        return self.count == 0


@dataclass
class CalibrationTable:
    bins: list[CalibrationBin]
    n: int

    @property
    def has_empty_bins(self) -> bool:
        return any(b.empty for b in self.bins)


def calibration(predicted_probabilities, outcomes) -> CalibrationTable:
    """Ten fixed bins [0,0.1) .. [0.9,1.0]; per bin the mean prediction and
    observed positive fraction.  Empty bins are kept and flagged."""
    p = np.asarray(predicted_probabilities, dtype=float)
    y = np.asarray(outcomes, dtype=bool)
    if len(p) != len(y):
        raise MetricsError("probabilities and outcomes must align")
    if len(p) and (p.min() < 0.0 or p.max() > 1.0):
        raise MetricsError("probabilities must lie in [0, 1]")
    idx = np.minimum((p * 10).astype(int), 9)
    bins = []
    for b in range(10):
        mask = idx == b
        count = int(mask.sum())
        bins.append(
            CalibrationBin(
                lower=b / 10.0,
                upper=(b + 1) / 10.0,
                mean_predicted=float(p[mask].mean()) if count else None,
                fraction_positive=float(y[mask].mean()) if count else None,
                count=count,
            )
        )
    return CalibrationTable(bins=bins, n=len(p))


def class_probability(cls: int, bands: dict[int, tuple[float, float]]) -> float:
    """Predicted outcome probability for a class: the midpoint of its band."""
    lo, hi = bands[cls]
    return 0.5 * (lo + hi)


def format_p_value(p: float) -> str:
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def render_summary_table(rows: list[tuple[str, EvalReport]], title: str = "") -> str:
    """Rows of ``label  accuracy  averaged AUC  sensitivity  specificity``."""
    header = ["Model", "Accuracy", "Averaged AUC", "Sensitivity", "Specificity", "N"]
    table = [header]
    for label, report in rows:
        table.append(
            [
                label,
                report.accuracy.render(),
                report.averaged_auc.render(),
                report.sensitivity.render(),
                report.specificity.render(),
                str(report.n),
            ]
        )
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    if title:
        lines.append(title)
    lines.extend(
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in table
    )
    return "\n".join(lines) + "\n"


def render_delong_table(rows: list[tuple[str, DeLongResult]]) -> str:
    """Comparison rows rendered as delta AUC and p-value (raw p kept in exports)."""
    header = ["Comparison", "AUC A", "AUC B", "Delta AUC", "p-value"]
    table = [header]
    for label, r in rows:
        table.append([label, f"{r.auc_a:.3f}", f"{r.auc_b:.3f}", f"{r.delta:+.3f}", format_p_value(r.p_value)])
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in table]
    return "\n".join(lines) + "\n"


def roc_points_csv(per_class: list[ClassRoc]) -> str:
    lines = ["risk_class,fpr,tpr,threshold"]
    for roc in per_class:
        for fpr, tpr, thr in roc.points:
            thr_text = "inf" if math.isinf(thr) else repr(thr)
            lines.append(f"{roc.risk_class},{repr(fpr)},{repr(tpr)},{thr_text}")
    return "\n".join(lines) + "\n"


def calibration_csv(table: CalibrationTable) -> str:
    lines = ["bin_lower,bin_upper,mean_predicted,fraction_positive,count"]
    for b in table.bins:
        mean_p = "" if b.mean_predicted is None else repr(b.mean_predicted)
        frac = "" if b.fraction_positive is None else repr(b.fraction_positive)
        lines.append(f"{b.lower},{b.upper},{mean_p},{frac},{b.count}")
    return "\n".join(lines) + "\n"
