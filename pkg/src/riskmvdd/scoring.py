"""Applying trained models to records and turning predictions into reports.

Diagram predictions are hard classes, so their ROC scores are 0/1 indicators
(one curve step per class); baselines expose per-class vote fractions and get
smooth curves.  Records a diagram cannot score (indeterminate) are excluded
from metrics and counted separately.
"""

from __future__ import annotations

from dataclasses import dataclass

from .baselines import BaselineModel
from .cohort import PatientRecord
from .labeling import risk_bands
from .metrics import EvalReport, class_probability, per_class_roc, weighted_summary
from .mvdd import IndeterminatePrediction, Mvdd, evaluate

Model = Mvdd | BaselineModel


@dataclass
class ScoredRecords:
    record_ids: list[str]
    predictions: list[int]
    class_scores: dict[int, list[float]]
    indeterminate_ids: list[str]


def model_k(model: Model) -> int:
    return model.k


def model_bands(model: Model) -> dict[int, tuple[float, float]]:
    """Probability band per class, from training metadata when present."""
    meta_bands = (model.metadata or {}).get("bands") if hasattr(model, "metadata") else None
    if meta_bands:
        return {int(c): (float(lo), float(hi)) for c, (lo, hi) in meta_bands.items()}
    return risk_bands(model.k)


def predict_record(model: Model, record: PatientRecord | dict) -> tuple[int, dict[int, float]]:
    """(predicted class, per-class scores).  Raises IndeterminatePrediction
    for diagrams that cannot route the record."""
    if isinstance(model, Mvdd):
        cls, _ = evaluate(model, record)
        return cls, {c: 1.0 if c == cls else 0.0 for c in range(1, model.k + 1)}
    return model.predict(record)


def score_records(model: Model, records: list[PatientRecord]) -> ScoredRecords:
    classes = list(range(1, model_k(model) + 1))
    scored_ids: list[str] = []
    predictions: list[int] = []
    class_scores: dict[int, list[float]] = {c: [] for c in classes}
    indeterminate: list[str] = []
    for rec in records:
        try:
            cls, scores = predict_record(model, rec)
        except IndeterminatePrediction:
            indeterminate.append(rec.record_id)
            continue
        scored_ids.append(rec.record_id)
        predictions.append(cls)
        for c in classes:
            class_scores[c].append(scores.get(c, 0.0))
    return ScoredRecords(
        record_ids=scored_ids,
        predictions=predictions,
        class_scores=class_scores,
        indeterminate_ids=indeterminate,
    )


def evaluation_report(model: Model, records: list[PatientRecord], true_classes) -> EvalReport:
    """Per-class ROC plus the weighted summary against known classes.

    ``true_classes`` aligns with ``records``; records the model cannot score
    are dropped from the metrics and surface in ``indeterminate_count``.
    """
    true_by_id = {rec.record_id: cls for rec, cls in zip(records, true_classes)}
    scored = score_records(model, records)
    truths = [true_by_id[rid] for rid in scored.record_ids]
    if not truths:
        raise ValueError("no scoreable records to evaluate")
    rocs = per_class_roc(truths, scored.class_scores)
    report = weighted_summary(rocs, scored.predictions, truths)
    report.indeterminate_count = len(scored.indeterminate_ids)
    return report


def outcome_probability_scores(
    model: Model, records: list[PatientRecord]
) -> tuple[list[str], list[float]]:
    """Per-record predicted outcome probability: the midpoint of the predicted
    class's band.  Used for calibration and for DeLong outcome comparisons."""
    bands = model_bands(model)
    ids: list[str] = []
    probs: list[float] = []
    for rec in records:
        try:
            cls, _ = predict_record(model, rec)
        except IndeterminatePrediction:
            continue
        ids.append(rec.record_id)
        probs.append(class_probability(cls, bands))
    return ids, probs
