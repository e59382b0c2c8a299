"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL verdict line (run with ``pytest tests/test_acceptance.py -s`` to see
them inline)."""

import hashlib
import itertools
import json
import math
import os
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from riskmvdd.baselines import fit_baseline
from riskmvdd.cli import main as cli_main
from riskmvdd.cohort import PatientRecord
from riskmvdd.demo import build_demo_model
from riskmvdd.features import builtin_feature_set
from riskmvdd.labeling import (
    agglomerative_cluster,
    band_label,
    derive_risk_classes,
    embed,
    risk_bands,
)
from riskmvdd.metrics import auc_score, delong_test, per_class_roc, weighted_summary
from riskmvdd.modeldoc import save_model
from riskmvdd.mvdd import (
    IndeterminatePrediction,
    deserialize,
    evaluate,
    export_dot,
    render_conditions,
    serialize,
)
from riskmvdd.synth import SynthSpec, generate
from riskmvdd.train import TrainParams, best_split, cross_validate, grow_mvdd, impurity

from conftest import PATH_PHENOTYPE, PATH_RECORD, make_records
from test_labeling import brute_force_c_index
from test_metrics import brute_force_auc
from test_mvdd import check_dot_grammar, random_mvdd, random_record
from test_train import exhaustive_best_split, histogram_impurity


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE FAIL: {name}")
        raise
    print(f"\nACCEPTANCE PASS: {name}")


def run_cli(args):
    result = CliRunner().invoke(cli_main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def tree_hash(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


HEMO = builtin_feature_set("invasive-hemodynamics")


@pytest.fixture(scope="module")
def fixture_cohort(tmp_path_factory):
    """n=2000, 5 strata, missing_rate 0.1, one correlated pair, seed 42;
    written through the CLI so later criteria reuse the same file."""
    out = tmp_path_factory.mktemp("fixture")
    run_cli(
        [
            "generate", "--out", str(out), "--n", "2000", "--seed", "42",
            "--missing-rate", "0.1", "--pair", "PAS,PCWP,-40",
            "--cohort-id", "synthetic",
        ]
    )
    return out / "synthetic.csv"


@pytest.fixture(scope="module")
def fixture_labeling(fixture_cohort, tmp_path_factory):
    """Risk classes for the fixture derived through the pipeline API."""
    spec = SynthSpec(
        n_records=2000,
        feature_set=HEMO,
        outcome_rates=(0.05, 0.15, 0.25, 0.35, 0.6),
        missing_rate=0.1,
        correlated_pairs=(("PAS", "PCWP", -40.0),),
        seed=42,
    )
    result = generate(spec)
    records = result.cohort.records
    embedding, _, _ = embed(records, HEMO)
    model = agglomerative_cluster(embedding, k=5)
    labeling = derive_risk_classes(model, records, "DeLvTx", HEMO.name)
    return records, labeling


def test_criterion_end_to_end_pipeline(fixture_cohort, tmp_path):
    """cmd_label on the fixture: elbow recovers k=5, event rates strictly
    increase, C-index < 0.15, runtime < 60 s."""
    with criterion("end-to-end pipeline (elbow k=5, increasing rates, C-index, <60s)"):
        out = tmp_path / "labels"
        start = time.perf_counter()
        run_cli(
            [
                "label", "--data", str(fixture_cohort),
                "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
                "--seed", "42", "--out", str(out),
            ]
        )
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"cmd_label took {elapsed:.1f}s"

        summary = (out / "invasive-hemodynamics__DeLvTx.summary.txt").read_text()
        assert "k = 5 (elbow recommendation 5)" in summary

        c_index_line = next(l for l in summary.splitlines() if l.startswith("C-index"))
        c_index_value = float(c_index_line.split("=")[1])
        assert c_index_value < 0.15, f"C-index {c_index_value}"

        labels_csv = (out / "invasive-hemodynamics__DeLvTx.labels.csv").read_text()
        per_class: dict[int, list[int]] = {}
        for line in labels_csv.strip().splitlines()[1:]:
            _, _, cls, outcome = line.split(",")
            per_class.setdefault(int(cls), []).append(int(outcome))
        rates = [sum(v) / len(v) for _, v in sorted(per_class.items())]
        assert len(rates) == 5
        assert all(b > a for a, b in zip(rates, rates[1:])), f"rates {rates}"


def test_criterion_mvdd_predictive_power(fixture_labeling):
    """5-fold selected model: held-out weighted AUC >= 0.85 and every
    supported class beats the constant-predictor AUC of 0.5."""
    with criterion("predictive power (held-out weighted AUC >= 0.85, per-class > 0.5)"):
        records, labeling = fixture_labeling
        labeled = [r for r in records if r.record_id in labeling.class_of]
        labels = [labeling.class_of[r.record_id] for r in labeled]
        params = TrainParams(seed=42, folds=5)
        cv = cross_validate(labeled, labels, HEMO, params, k=5, outcome="DeLvTx")
        best = cv.folds[cv.selected_fold]
        assert best.val_weighted_auc >= 0.85, best.val_weighted_auc
        for roc in best.val_report.per_class:
            if roc.support > 0 and roc.auc is not None:
                assert roc.auc > 0.5, f"class {roc.risk_class} auc {roc.auc}"


def _adversarial_fixture():
    """Dense cohort where one correlated pair is uniquely informative at the
    top split and the imputation median lands on the wrong side of it."""
    other = tuple(
        n for n in HEMO.names() if n not in ("PAS", "PCWP", "HR", "CO", "Sex", "NYHA")
    )
    spec = SynthSpec(
        n_records=1200,
        feature_set=HEMO,
        outcome_rates=(0.05, 0.15, 0.25, 0.35, 0.6),
        missing_rate=0.0,
        correlated_pairs=(("PAS", "PCWP", -40.0),),
        seed=99,
        feature_profiles={
            "PAS": (45.0, 45.0, 85.0, 85.0, 85.0),
            "HR": (60.0, 180.0, 120.0, 120.0, 120.0),
            "CO": (6.0, 6.0, 3.0, 6.0, 9.0),
        },
        uninformative=other,
    )
    result = generate(spec)
    records = result.cohort.records
    labels = [result.strata[r.record_id] + 1 for r in records]
    return records[:800], labels[:800], records[800:], labels[800:]


def _mask(records, feature):
    return [
        PatientRecord(
            r.record_id,
            r.cohort_id,
            r.timepoint,
            {k: v for k, v in r.values.items() if k != feature},
            r.outcomes,
        )
        for r in records
    ]


def test_criterion_missing_data_advantage():
    """Masking the correlated-pair feature in every test record costs the
    diagram <= 0.05 accuracy while the median-imputed tree loses >= 0.10."""
    with criterion("missing-data advantage (MVDD drop <= 0.05, DT drop >= 0.10)"):
        train_recs, train_labels, test_recs, test_labels = _adversarial_fixture()
        params = TrainParams(criterion="entropy", min_samples_leaf=5, max_depth=4, seed=0)
        mvdd = grow_mvdd(train_recs, train_labels, HEMO, params, k=5)

        def mvdd_accuracy(recs):
            hits = 0
            for rec, label in zip(recs, test_labels):
                try:
                    hits += evaluate(mvdd, rec)[0] == label
                except IndeterminatePrediction:
                    pass
            return hits / len(recs)

        tree = fit_baseline(
            "dt", train_recs, train_labels, HEMO,
            hyperparams={"criterion": "entropy", "max_depth": 4}, k=5,
        )

        def tree_accuracy(recs):
            return sum(
                tree.predict(rec)[0] == label for rec, label in zip(recs, test_labels)
            ) / len(recs)

        masked = _mask(test_recs, "PAS")
        mvdd_drop = mvdd_accuracy(test_recs) - mvdd_accuracy(masked)
        tree_drop = tree_accuracy(test_recs) - tree_accuracy(masked)
        assert mvdd_drop <= 0.05, f"MVDD drop {mvdd_drop:.3f}"
        assert tree_drop >= 0.10, f"DT drop {tree_drop:.3f}"


def test_criterion_oracle_equivalences(tiny_set):
    """Exact agreement with the independent oracles: AND-only diagram vs
    reference tree, impurity vs histogram, best_split vs exhaustive scan,
    AUC vs pair counting (n<=30), C-index vs enumeration (N<=10)."""
    from riskmvdd.baselines import ReferenceDecisionTree

    with criterion("oracle equivalences (tree, impurity, split, AUC, C-index)"):
        rng = np.random.default_rng(12345)

        # AND-only diagram equals the reference decision tree on all records.
        for trial in range(3):
            n = 80
            X = np.column_stack(
                [
                    rng.uniform(0, 100, size=n),
                    rng.uniform(0, 200, size=n),
                    rng.uniform(0, 100, size=n),
                    rng.uniform(0, 100, size=n),
                ]
            )
            labels = (X[:, 0] > 50).astype(int) + (X[:, 1] > 100).astype(int) + 1
            records = make_records([[*row, None] for row in X], tiny_set.names())
            params = TrainParams(min_samples_leaf=3, max_depth=4, or_gain_threshold=0.0)
            mvdd = grow_mvdd(records, list(labels), tiny_set, params, k=3)
            tree = ReferenceDecisionTree(criterion="gini", max_depth=4, min_samples_leaf=3)
            tree.fit(X, labels)
            for i, rec in enumerate(records):
                assert evaluate(mvdd, rec)[0] == tree.predict_row(X[i])

        # impurity vs brute-force histogram (within 1e-12).
        for _ in range(200):
            labels = list(rng.integers(1, 6, size=int(rng.integers(1, 40))))
            for crit in ("gini", "entropy"):
                assert abs(impurity(labels, crit) - histogram_impurity(labels, crit)) <= 1e-12

        # best_split vs exhaustive midpoint scan (exact).
        names = tiny_set.names()
        for _ in range(100):
            m = int(rng.integers(2, 40))
            values = [float(v) for v in rng.integers(0, 25, size=m)]
            labels = list(rng.integers(1, 4, size=m))
            rows = [[v, None, None, None, None] for v in values]
            records = make_records(rows, names)
            for crit in ("gini", "entropy"):
                ours = best_split(records, labels, "A", crit)
                oracle = exhaustive_best_split(values, labels, crit)
                if oracle is None:
                    assert ours is None
                else:
                    assert (ours.impurity, ours.threshold) == oracle

        # AUC vs brute-force concordant-pair counting for n <= 30 (exact).
        checked = 0
        while checked < 100:
            n = int(rng.integers(4, 31))
            scores = np.round(rng.uniform(0, 1, size=n), 1)
            positives = rng.random(n) < 0.5
            if positives.all() or not positives.any():
                continue
            assert auc_score(scores, positives) == brute_force_auc(scores, positives)
            checked += 1

        # C-index vs brute force for N <= 10 (exact within 1e-12).
        checked = 0
        while checked < 50:
            n = int(rng.integers(4, 11))
            coords = rng.normal(size=(n, 2))
            labels = rng.integers(0, 2, size=n)
            if len(set(labels)) < 2:
                continue
            if not any(
                labels[i] == labels[j] for i, j in itertools.combinations(range(n), 2)
            ):
                continue
            assert abs(c_index_of(coords, labels) - brute_force_c_index(coords, labels)) <= 1e-12
            checked += 1


def c_index_of(coords, labels):
    from riskmvdd.labeling import c_index

    return c_index(coords, labels)


def _fast_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Rank AUC for tie-free scores (oracle helper)."""
    n = len(scores)
    ranks = np.empty(n)
    ranks[np.argsort(scores, kind="stable")] = np.arange(1, n + 1)
    m = int(positives.sum())
    return (float(ranks[positives].sum()) - m * (m + 1) / 2.0) / (m * (n - m))


def _permutation_p(a, b, y, n_resamples, seed):
    rng = np.random.default_rng(seed)
    observed = abs(_fast_auc(a, y) - _fast_auc(b, y))
    hits = 0
    n = len(a)
    for _ in range(n_resamples):
        flip = rng.random(n) < 0.5
        pa = np.where(flip, b, a)
        pb = np.where(flip, a, b)
        if abs(_fast_auc(pa, y) - _fast_auc(pb, y)) >= observed - 1e-12:
            hits += 1
    return hits / n_resamples


def test_criterion_delong_correctness():
    """p within +-0.02 of a 10,000-resample permutation oracle on 20 seeded
    score pairs (n=50); antisymmetry exact; self-comparison gives (0, 1)."""
    with criterion("DeLong correctness (permutation oracle, antisymmetry, self)"):
        rng = np.random.default_rng(2)
        for trial in range(20):
            n = 50
            y = np.concatenate([np.ones(25, bool), np.zeros(25, bool)])
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            result = delong_test(a, b, y)
            assert result.p_value == pytest.approx(_fast_auc_check_p(a, b, y, result), abs=0)
            oracle = _permutation_p(a, b, y, n_resamples=10000, seed=2000 + trial)
            assert abs(result.p_value - oracle) <= 0.02, (trial, result.p_value, oracle)
            reverse = delong_test(b, a, y)
            assert reverse.delta == -result.delta
            assert reverse.p_value == pytest.approx(result.p_value, abs=1e-12)
            self_cmp = delong_test(a, a, y)
            assert self_cmp.delta == 0.0
            assert self_cmp.p_value == 1.0


def _fast_auc_check_p(a, b, y, result):
    # sanity: the DeLong AUCs agree with the independent rank computation
    assert result.auc_a == pytest.approx(_fast_auc(np.asarray(a), y), abs=1e-12)
    assert result.auc_b == pytest.approx(_fast_auc(np.asarray(b), y), abs=1e-12)
    return result.p_value


def test_criterion_path_fixture(demo_model):
    """The hand-built diagram reproduces Score 5 and the exact phenotype for
    the present-PAS and substituted-PCWP cases, and refuses when both are
    absent."""
    with criterion("hand-built path fixture (exact phenotype, substitution, refusal)"):
        cls, phenotype = evaluate(demo_model, PATH_RECORD)
        assert cls == 5
        assert render_conditions(phenotype) == PATH_PHENOTYPE
        assert phenotype.used_substitution == []

        substituted = {"Sex": 1, "BPSYS": 110.0, "CPI": 0.7, "PCWP": 30.0}
        cls, phenotype = evaluate(demo_model, substituted)
        assert cls == 5
        assert render_conditions(phenotype) == PATH_PHENOTYPE
        assert phenotype.used_substitution == [("PAS", "PCWP")]

        with pytest.raises(IndeterminatePrediction) as exc:
            evaluate(demo_model, {"Sex": 1, "BPSYS": 110.0, "CPI": 0.7})
        assert set(exc.value.missing_features) == {"PAS", "PCWP"}


def test_criterion_determinism(tmp_path):
    """Every CLI command rerun with identical inputs/seed produces
    hash-identical outputs; BLAS/OMP thread count does not change bytes."""
    with criterion("determinism (rerun hash-identity, thread-count invariance)"):
        base_args = {
            "generate": ["generate", "--n", "300", "--seed", "5", "--pair", "PAS,PCWP,-40"],
        }
        runs = {}
        for attempt in ("a", "b"):
            root = tmp_path / attempt
            data = root / "data"
            run_cli(base_args["generate"] + ["--out", str(data)])
            labels = root / "labels"
            run_cli(
                [
                    "label", "--data", str(data / "synthetic.csv"),
                    "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
                    "--k", "5", "--seed", "5", "--out", str(labels),
                ]
            )
            models = root / "models"
            run_cli(
                [
                    "train", "--data", str(data / "synthetic.csv"),
                    "--labels", str(labels / "invasive-hemodynamics__DeLvTx.labels.csv"),
                    "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
                    "--seed", "5", "--out", str(models),
                ]
            )
            evaluation = root / "eval"
            run_cli(
                [
                    "evaluate",
                    "--model", str(models / "invasive-hemodynamics__DeLvTx.model.json"),
                    "--data", str(data / "synthetic.csv"),
                    "--labels", str(labels / "invasive-hemodynamics__DeLvTx.labels.csv"),
                    "--feature-set", "invasive-hemodynamics", "--out", str(evaluation),
                ]
            )
            compare = root / "cmp"
            run_cli(
                [
                    "compare",
                    "--model-a", str(models / "invasive-hemodynamics__DeLvTx.model.json"),
                    "--model-b", str(models / "invasive-hemodynamics__DeLvTx.model.json"),
                    "--data", str(data / "synthetic.csv"),
                    "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
                    "--out", str(compare),
                ]
            )
            run_cli(
                [
                    "export-dot",
                    "--model", str(models / "invasive-hemodynamics__DeLvTx.model.json"),
                    "--out", str(root / "model.dot"),
                ]
            )
            predict_args = [
                "predict",
                "--model", str(models / "invasive-hemodynamics__DeLvTx.model.json"),
                "--json",
            ]
            for name in HEMO.names():
                spec = HEMO.spec(name)
                value = spec.codes[0] if spec.kind == "categorical" else 50.0
                predict_args += ["--value", f"{name}={value}"]
            predict = CliRunner().invoke(cli_main, predict_args, catch_exceptions=False)
            runs[attempt] = (tree_hash(root), predict.exit_code, predict.output)
        assert runs["a"] == runs["b"]

        # Thread-count invariance: the same small pipeline under different
        # BLAS/OMP thread settings yields byte-identical labelings.
        digests = []
        for threads in ("1", "4"):
            env = dict(os.environ)
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                env[var] = threads
            out_dir = tmp_path / f"threads{threads}"
            cmd = [
                sys.executable, "-m", "riskmvdd.cli",
                "label", "--data", str(tmp_path / "a" / "data" / "synthetic.csv"),
                "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
                "--k", "5", "--seed", "5", "--out", str(out_dir),
            ]
            subprocess.run(cmd, check=True, env=env, capture_output=True)
            digests.append(tree_hash(out_dir))
        assert digests[0] == digests[1]


def test_criterion_serialization_fuzz():
    """100 random models x 100 random records round-trip with identical
    predictions; DOT export parses under the independent grammar check."""
    with criterion("serialization fuzz (100x100 round-trip, DOT grammar)"):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            mvdd = random_mvdd(rng)
            restored = deserialize(serialize(mvdd))
            nodes, _ = check_dot_grammar(export_dot(mvdd))
            assert nodes == len(mvdd.nodes)
            for _ in range(100):
                record = random_record(rng)
                try:
                    expected = evaluate(mvdd, record)[0]
                except IndeterminatePrediction as exc:
                    expected = ("indeterminate", tuple(exc.missing_features))
                try:
                    observed = evaluate(restored, record)[0]
                except IndeterminatePrediction as exc:
                    observed = ("indeterminate", tuple(exc.missing_features))
                assert observed == expected


def test_criterion_reporting_parity():
    """Weighted summary of supports {3,1} with AUCs {1.0, 0.5} prints 0.875;
    the k=5 probability bands render exactly as published."""
    with criterion("reporting parity (weighted 0.875, exact band labels)"):
        true = [1, 1, 1, 2]
        scores = {1: [0.9, 0.8, 0.7, 0.1], 2: [0.5, 0.5, 0.5, 0.5]}
        rocs = per_class_roc(true, scores)
        by_class = {r.risk_class: r for r in rocs}
        assert by_class[1].auc == 1.0 and by_class[1].support == 3
        assert by_class[2].auc == 0.5 and by_class[2].support == 1
        report = weighted_summary(rocs, predictions=[1, 1, 1, 2], true_classes=true)
        assert report.averaged_auc.value == 0.875
        assert f"{report.averaged_auc.value:.3f}" == "0.875"

        bands = risk_bands(5)
        labels = [band_label(c, bands) for c in range(1, 6)]
        assert labels == ["<10%", "10 - 20%", "20 - 30%", "30 - 40%", ">40%"]
