import numpy as np
import pytest

from riskmvdd.demo import build_demo_model
from riskmvdd.features import CategoryValue, FeatureSet, FeatureSpec, builtin_feature_set
from riskmvdd.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def hemo_set():
    return builtin_feature_set("invasive-hemodynamics")


@pytest.fixture(scope="session")
def all_set():
    return builtin_feature_set("all-features")


@pytest.fixture(scope="session")
def demo_model():
    return build_demo_model()


@pytest.fixture
def tiny_set():
    """Five simple features for hand-built cohorts."""
    return FeatureSet(
        name="tiny",
        features=(
            FeatureSpec(name="A", kind="continuous", unit="u", valid_range=(0.0, 100.0)),
            FeatureSpec(name="B", kind="continuous", unit="u", valid_range=(0.0, 200.0)),
            FeatureSpec(name="C", kind="continuous", unit="u", valid_range=(0.0, 100.0)),
            FeatureSpec(name="D", kind="continuous", unit="u", valid_range=(0.0, 100.0)),
            FeatureSpec(
                name="Sex",
                kind="categorical",
                category_values=(CategoryValue(0, "Female"), CategoryValue(1, "Male")),
            ),
        ),
    )


# The Fig-path record values used across mvdd/cli/service tests.
PATH_RECORD = {"Sex": 1, "BPSYS": 110.0, "CPI": 0.7, "PAS": 80.0}
PATH_PHENOTYPE = "Sex = Male ∧ BPSYS > 103.5 ∧ CPI > 0.621 ∧ (PAS > 74.5 ∨ PCWP ≤ 33)"


@pytest.fixture(scope="session")
def pipeline_fixture():
    """The acceptance-scale synthetic cohort: n=2000, 5 strata, 10% missing,
    one correlated pair, seed 42."""
    feature_set = builtin_feature_set("invasive-hemodynamics")
    spec = SynthSpec(
        n_records=2000,
        feature_set=feature_set,
        outcome_rates=(0.05, 0.15, 0.25, 0.35, 0.6),
        missing_rate=0.1,
        correlated_pairs=(("PAS", "PCWP", -40.0),),
        seed=42,
    )
    return spec, generate(spec)


def make_records(values_rows, feature_names, outcomes=None, cohort_id="c0"):
    """Build PatientRecords from a dense/NaN matrix-like list of rows."""
    from riskmvdd.cohort import PatientRecord

    records = []
    for i, row in enumerate(values_rows):
        values = {
            name: float(v)
            for name, v in zip(feature_names, row)
            if v is not None and not (isinstance(v, float) and np.isnan(v))
        }
        outcome_map = {"DeLvTx": None, "Rehospitalization": None}
        if outcomes is not None:
            outcome_map["DeLvTx"] = outcomes[i]
        records.append(
            PatientRecord(
                record_id=f"r{i:04d}",
                cohort_id=cohort_id,
                timepoint="baseline",
                values=values,
                outcomes=outcome_map,
            )
        )
    return records
