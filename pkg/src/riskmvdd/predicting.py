"""Single prediction payloads shared by the CLI and the HTTP service, so the
two surfaces render byte-identical phenotype text."""

from __future__ import annotations

from typing import Any

from .features import FeatureSet
from .labeling import band_label
from .mvdd import Clause, Mvdd, evaluate, render_phenotype
from .scoring import model_bands

SCHEMA_VERSION = 1


def _clause_payload(clause: Clause) -> dict[str, Any]:
    payload: dict[str, Any] = {
        "feature": clause.feature,
        "comparator": clause.comparator,
        "connective": clause.connective,
    }
    if clause.threshold is not None:
        payload["threshold"] = clause.threshold
    if clause.codes is not None:
        payload["codes"] = list(clause.codes)
        payload["labels"] = list(clause.labels or ())
    return payload


def range_warnings(values: dict[str, float], feature_set: FeatureSet | None) -> list[str]:
    """Out-of-range inputs warn but never reject; extreme values may be real."""
    if feature_set is None:
        return []
    warnings = []
    for name, value in values.items():
        spec = feature_set.get(name)
        if spec is None:
            warnings.append(f"{name} is not in feature set {feature_set.name}")
        elif not spec.in_range(value):
            if spec.kind == "categorical":
                warnings.append(f"{name}={value:g} is not a declared code")
            else:
                lo, hi = spec.valid_range
                warnings.append(f"{name}={value:g} outside valid range [{lo:g}, {hi:g}]")
    return warnings


def predict_payload(
    mvdd: Mvdd,
    values: dict[str, float],
    feature_set: FeatureSet | None = None,
) -> dict[str, Any]:
    """Evaluate and assemble the wire payload.

    Raises IndeterminatePrediction; callers map it to exit code 5 or HTTP 409.
    """
    cls, phenotype = evaluate(mvdd, values)
    bands = model_bands(mvdd)
    lo, hi = bands[cls]
    return {
        "schema_version": SCHEMA_VERSION,
        "feature_set": mvdd.feature_set,
        "outcome": mvdd.outcome,
        "risk_class": cls,
        "k": mvdd.k,
        "probability_range": [lo, hi],
        "probability_label": band_label(cls, bands),
        "phenotype_text": render_phenotype(phenotype),
        "phenotype_clauses": [_clause_payload(c) for c in phenotype.clauses],
        "substitutions": [
            {"missing": missing, "used": used} for missing, used in phenotype.used_substitution
        ],
        "warnings": range_warnings(values, feature_set),
    }
