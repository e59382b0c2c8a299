"""Command-line front door: generate -> label -> train -> evaluate -> compare
-> predict -> export -> serve.

Exit codes are a stable contract: 0 success, 2 configuration error, 3 data
error, 4 feature-set/model compatibility error, 5 indeterminate prediction.
Every command is rerunnable: identical inputs and seed produce identical
output bytes.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .baselines import BaselineError, fit_baseline
from .cohort import (
    CohortError,
    OUTCOME_NAMES,
    PatientRecord,
    SchemaOptions,
    derive_noninvasive_hemodynamics,
    load_cohort_with_report,
    remove_outliers,
)
from .features import BUILTIN_FEATURE_SETS, FeatureSetError, resolve_feature_set
from .labeling import (
    LabelingError,
    agglomerative_cluster,
    build_pipeline,
    c_index,
    derive_risk_classes,
    elbow_select_k,
    embed,
    linkage_merge_history,
    merge_history_csv,
    render_labeling_summary,
    risk_bands,
)
from .metrics import (
    DegenerateOutcomes,
    calibration,
    calibration_csv,
    delong_test,
    format_p_value,
    render_delong_table,
    render_summary_table,
    roc_points_csv,
)
from .modeldoc import load_model, save_model
from .mvdd import IndeterminatePrediction, Mvdd, export_dot
from .predicting import predict_payload
from .scoring import evaluation_report, outcome_probability_scores
from .synth import InvalidSpec, SynthSpec, generate, write_fixture
from .train import InsufficientData, TrainError, TrainParams, cross_validate, fold_report_csv

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_COMPAT = 4
EXIT_INDETERMINATE = 5

DATA_ERRORS = (CohortError, LabelingError, TrainError, BaselineError, InvalidSpec, DegenerateOutcomes, OSError)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _config_value(config: dict, key: str, flag_value, default):
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}")


def _load_cohorts(paths, feature_set, derive: bool, outlier_rule: str | None):
    records: list[PatientRecord] = []
    reports = []
    for path in paths:
        cohort, report = load_cohort_with_report(path, feature_set)
        if outlier_rule:
            cohort, _ = remove_outliers(cohort, rule=outlier_rule, report=report)
        recs = cohort.records
        if derive:
            recs = [derive_noninvasive_hemodynamics(r) for r in recs]
        records.extend(recs)
        reports.append(report)
    return records, reports


def _read_labels_csv(path: Path) -> dict[str, int]:
    labels = {}
    lines = path.read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        if not line.strip():
            continue
        rec_id, _, cls, _ = (line.split(",") + ["", "", ""])[:4]
        labels[rec_id] = int(cls)
    return labels


@click.group()
@click.version_option(version=__version__)
def main():
    """Risk stratification and phenotyping with multi-valued decision diagrams."""


@main.command()
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--n", default=2000, show_default=True, help="Number of records.")
@click.option("--feature-set", "feature_set_name", default="invasive-hemodynamics", show_default=True)
@click.option("--missing-rate", default=0.1, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--separation", default=6.0, show_default=True)
@click.option(
    "--outcome-rates",
    default="0.05,0.15,0.25,0.35,0.6",
    show_default=True,
    help="Comma-separated per-stratum outcome rates (strictly increasing).",
)
@click.option(
    "--pair",
    "pairs",
    multiple=True,
    help="Correlated pair FEATURE_A,FEATURE_B,OFFSET (repeatable).",
)
@click.option("--cohort-id", default="synthetic", show_default=True)
def generate_cmd(out, n, feature_set_name, missing_rate, seed, separation, outcome_rates, pairs, cohort_id):
    """Generate a synthetic cohort fixture with latent risk strata."""
    try:
        feature_set = resolve_feature_set(feature_set_name)
    except FeatureSetError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        rates = tuple(float(x) for x in outcome_rates.split(","))
        parsed_pairs = []
        for pair in pairs:
            a, b, offset = pair.split(",")
            parsed_pairs.append((a.strip(), b.strip(), float(offset)))
        spec = SynthSpec(
            n_records=n,
            feature_set=feature_set,
            outcome_rates=rates,
            missing_rate=missing_rate,
            correlated_pairs=tuple(parsed_pairs),
            seed=seed,
            separation=separation,
            cohort_id=cohort_id,
        )
        result = generate(spec)
        cohort_path, strata_path = write_fixture(result, out)
    except (InvalidSpec, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    click.echo(f"wrote {cohort_path} and {strata_path}")


main.add_command(generate_cmd, name="generate")


@main.command("label")
@click.option("--data", "data_paths", multiple=True, required=True, type=click.Path())
@click.option("--feature-set", "feature_set_names", multiple=True, help="Defaults to both builtins.")
@click.option("--outcome", "outcomes", multiple=True, help="Defaults to both outcomes.")
@click.option("--k", type=int, default=None, help="Override the elbow-selected number of classes.")
@click.option("--k-max", default=10, show_default=True)
@click.option("--linkage", default="ward", show_default=True, type=click.Choice(["ward", "average", "complete"]))
@click.option("--no-standardize", is_flag=True, help="Skip unit-variance scaling before the projection.")
@click.option("--derive/--no-derive", default=True, show_default=True, help="Add derived hemodynamics first.")
@click.option("--outlier-rule", default="range", show_default=True, type=click.Choice(["range", "zscore", "none"]))
@click.option("--seed", default=42, show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def label_cmd(
    data_paths, feature_set_names, outcomes, k, k_max, linkage, no_standardize, derive,
    outlier_rule, seed, config_path, out,
):
    """Derive risk-class labels per (outcome, feature set) pair."""
    config = _load_config(config_path)
    k = _config_value(config, "k", k, None)
    feature_set_names = feature_set_names or tuple(config.get("feature_sets", BUILTIN_FEATURE_SETS))
    outcomes = outcomes or tuple(config.get("outcomes", OUTCOME_NAMES))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rule = None if outlier_rule == "none" else outlier_rule
    try:
        for fs_name in feature_set_names:
            feature_set = resolve_feature_set(fs_name)
            records, reports = _load_cohorts(data_paths, feature_set, derive, rule)
            embedding, imputed, pca = embed(records, feature_set, standardize=not no_standardize)
            history = linkage_merge_history(embedding.coords, linkage)
            elbow = elbow_select_k(embedding, k_max=min(k_max, len(records)), linkage=linkage, history=history)
            chosen_k = int(k) if k is not None else elbow.recommended_k
            model = agglomerative_cluster(embedding, chosen_k, linkage)
            quality = c_index(embedding.coords, model.labels())
            by_id = {r.record_id: r for r in records}
            cohort_ids = sorted({r.cohort_id for r in records})
            for outcome in outcomes:
                labeling = derive_risk_classes(model, records, outcome, feature_set_name=feature_set.name)
                stem = f"{feature_set.name}__{outcome}"
                (out_dir / f"{stem}.labels.csv").write_text(
                    labeling.to_table_csv(by_id), encoding="utf-8"
                )
                summary = render_labeling_summary(labeling, cohort_ids)
                summary += (
                    f"\nk = {chosen_k} (elbow recommendation {elbow.recommended_k}"
                    f"{', low confidence' if elbow.low_confidence else ''})\n"
                    f"C-index = {quality:.3f}\n"
                    f"records excluded for unknown outcome: {len(labeling.excluded_records)}\n"
                )
                (out_dir / f"{stem}.summary.txt").write_text(summary, encoding="utf-8")
                pipeline = build_pipeline(imputed, pca, model, labeling)
                (out_dir / f"{stem}.pipeline.json").write_text(pipeline.to_json(), encoding="utf-8")
            (out_dir / f"{feature_set.name}.merges.csv").write_text(
                merge_history_csv(history, len(records)), encoding="utf-8"
            )
            elbow_lines = ["k,wss"] + [f"{kk},{repr(wss)}" for kk, wss in elbow.curve]
            (out_dir / f"{feature_set.name}.elbow.csv").write_text(
                "\n".join(elbow_lines) + "\n", encoding="utf-8"
            )
            ingest_text = "\n".join(r.to_text() for r in reports)
            (out_dir / f"{feature_set.name}.ingest.txt").write_text(ingest_text, encoding="utf-8")
    except FeatureSetError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    click.echo(f"labelings written to {out_dir}")


@main.command("train")
@click.option("--data", "data_paths", multiple=True, required=True, type=click.Path())
@click.option("--labels", "labels_path", required=True, type=click.Path())
@click.option("--feature-set", "feature_set_name", required=True)
@click.option("--outcome", default="DeLvTx", show_default=True)
@click.option("--criterion", default=None, type=click.Choice(["gini", "entropy"]))
@click.option("--folds", default=None, type=int)
@click.option("--max-depth", default=None, type=int)
@click.option("--min-leaf", default=None, type=int)
@click.option("--or-threshold", default=None, type=float)
@click.option("--stratify", is_flag=True)
@click.option("--derive/--no-derive", default=True, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def train_cmd(
    data_paths, labels_path, feature_set_name, outcome, criterion, folds, max_depth,
    min_leaf, or_threshold, stratify, derive, seed, config_path, out,
):
    """Train a diagram on labeled records under k-fold cross-validation."""
    config = _load_config(config_path)
    try:
        params = TrainParams(
            criterion=_config_value(config, "criterion", criterion, "gini"),
            max_depth=_config_value(config, "max_depth", max_depth, None),
            min_samples_leaf=_config_value(config, "min_samples_leaf", min_leaf, 5),
            or_gain_threshold=_config_value(config, "or_gain_threshold", or_threshold, 0.05),
            folds=_config_value(config, "folds", folds, 5),
            seed=_config_value(config, "seed", seed, 42),
            stratify=bool(_config_value(config, "stratify", stratify or None, False)),
        )
    except TrainError as exc:
        raise click.UsageError(str(exc))
    try:
        feature_set = resolve_feature_set(feature_set_name)
    except FeatureSetError as exc:
        _fail(EXIT_CONFIG, str(exc))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        records, _ = _load_cohorts(data_paths, feature_set, derive, None)
        label_map = _read_labels_csv(Path(labels_path))
        train_records = [r for r in records if r.record_id in label_map]
        if not train_records:
            raise InsufficientData("no records match the labeling file")
        labels = [label_map[r.record_id] for r in train_records]
        k = max(label_map.values())
        result = cross_validate(train_records, labels, feature_set, params, k=k, outcome=outcome)
        model = result.selected
        model.metadata["bands"] = {str(c): list(v) for c, v in risk_bands(k).items()}
        model.metadata["selected_fold"] = result.selected_fold
        model_path = out_dir / f"{feature_set.name}__{outcome}.model.json"
        save_model(model, model_path)
        (out_dir / f"{feature_set.name}__{outcome}.folds.csv").write_text(
            fold_report_csv(result), encoding="utf-8"
        )
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    click.echo(f"model written to {model_path}")


@main.command("train-baseline")
@click.option("--data", "data_paths", multiple=True, required=True, type=click.Path())
@click.option("--labels", "labels_path", required=True, type=click.Path())
@click.option("--feature-set", "feature_set_name", required=True)
@click.option("--kind", required=True, type=click.Choice(["knn", "dt", "rf"]))
@click.option("--outcome", default="DeLvTx", show_default=True)
@click.option("--hyperparams", "hyperparams_json", default=None, help="JSON object of overrides.")
@click.option("--derive/--no-derive", default=True, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", required=True, type=click.Path())
def train_baseline_cmd(
    data_paths, labels_path, feature_set_name, kind, outcome, hyperparams_json, derive, seed, out
):
    """Train a median-imputed baseline (knn, dt, or rf) for comparison."""
    try:
        feature_set = resolve_feature_set(feature_set_name)
        hyperparams = json.loads(hyperparams_json) if hyperparams_json else None
    except (FeatureSetError, json.JSONDecodeError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        records, _ = _load_cohorts(data_paths, feature_set, derive, None)
        label_map = _read_labels_csv(Path(labels_path))
        train_records = [r for r in records if r.record_id in label_map]
        if not train_records:
            raise BaselineError("no records match the labeling file")
        labels = [label_map[r.record_id] for r in train_records]
        model = fit_baseline(
            kind, train_records, labels, feature_set,
            hyperparams=hyperparams, seed=seed, k=max(label_map.values()), outcome=outcome,
        )
        model_path = out_dir / f"{feature_set.name}__{outcome}.{kind}.model.json"
        save_model(model, model_path)
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    click.echo(f"model written to {model_path}")


def _check_model_compat(model, feature_set_name: str):
    if model.feature_set and feature_set_name and model.feature_set != feature_set_name:
        _fail(
            EXIT_COMPAT,
            f"model was trained on feature set {model.feature_set!r}, data uses {feature_set_name!r}",
        )


@main.command("evaluate")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--data", "data_paths", multiple=True, required=True, type=click.Path())
@click.option("--labels", "labels_path", required=True, type=click.Path())
@click.option("--feature-set", "feature_set_name", required=True)
@click.option("--outcome", default=None, help="Outcome for the calibration table (model default).")
@click.option("--derive/--no-derive", default=True, show_default=True)
@click.option("--out", required=True, type=click.Path())
def evaluate_cmd(model_path, data_paths, labels_path, feature_set_name, outcome, derive, out):
    """Evaluate a model against known risk classes: report, ROC points, calibration."""
    try:
        feature_set = resolve_feature_set(feature_set_name)
        model = load_model(model_path)
    except FeatureSetError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    _check_model_compat(model, feature_set.name)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        records, _ = _load_cohorts(data_paths, feature_set, derive, None)
        label_map = _read_labels_csv(Path(labels_path))
        eval_records = [r for r in records if r.record_id in label_map]
        if not eval_records:
            raise CohortError("no records match the labeling file")
        truths = [label_map[r.record_id] for r in eval_records]
        report = evaluation_report(model, eval_records, truths)
        name = Path(model_path).stem
        summary = render_summary_table([(name, report)])
        summary += f"\nindeterminate predictions excluded: {report.indeterminate_count}\n"
        absent = [str(r.risk_class) for r in report.per_class if r.auc is None]
        if absent:
            summary += f"classes with no data (reported absent): {', '.join(absent)}\n"
        (out_dir / "report.txt").write_text(summary, encoding="utf-8")
        (out_dir / "roc_points.csv").write_text(roc_points_csv(report.per_class), encoding="utf-8")
        outcome_name = outcome or model.outcome or "DeLvTx"
        ids, probs = outcome_probability_scores(model, eval_records)
        outcomes_by_id = {r.record_id: r.outcomes.get(outcome_name) for r in eval_records}
        pairs = [(p, outcomes_by_id[i]) for i, p in zip(ids, probs) if outcomes_by_id[i] is not None]
        if pairs:
            table = calibration([p for p, _ in pairs], [o for _, o in pairs])
            (out_dir / "calibration.csv").write_text(calibration_csv(table), encoding="utf-8")
        per_class_lines = ["risk_class,support,auc,accuracy,sensitivity,specificity"]
        for roc, summ in zip(report.per_class, report.per_class_summary):
            per_class_lines.append(
                f"{roc.risk_class},{roc.support},"
                f"{'' if roc.auc is None else repr(roc.auc)},"
                f"{repr(summ.accuracy)},"
                f"{'' if summ.sensitivity is None else repr(summ.sensitivity)},"
                f"{'' if summ.specificity is None else repr(summ.specificity)}"
            )
        (out_dir / "per_class.csv").write_text("\n".join(per_class_lines) + "\n", encoding="utf-8")
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    except ValueError as exc:
        _fail(EXIT_DATA, str(exc))
    click.echo(f"evaluation written to {out_dir}")


@main.command("compare")
@click.option("--model-a", "model_a_path", required=True, type=click.Path())
@click.option("--model-b", "model_b_path", required=True, type=click.Path())
@click.option("--data", "data_paths", multiple=True, required=True, type=click.Path())
@click.option("--feature-set", "feature_set_name", required=True)
@click.option("--outcome", "outcomes", multiple=True, help="Defaults to both outcomes.")
@click.option("--derive/--no-derive", default=True, show_default=True)
@click.option("--out", required=True, type=click.Path())
def compare_cmd(model_a_path, model_b_path, data_paths, feature_set_name, outcomes, derive, out):
    """DeLong AUC comparison of two models on the same cohort (delta = A minus B)."""
    try:
        feature_set = resolve_feature_set(feature_set_name)
        model_a = load_model(model_a_path)
        model_b = load_model(model_b_path)
    except FeatureSetError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    _check_model_compat(model_a, feature_set.name)
    _check_model_compat(model_b, feature_set.name)
    outcomes = outcomes or OUTCOME_NAMES
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        records, _ = _load_cohorts(data_paths, feature_set, derive, None)
        ids_a, probs_a = outcome_probability_scores(model_a, records)
        ids_b, probs_b = outcome_probability_scores(model_b, records)
        a_by_id = dict(zip(ids_a, probs_a))
        b_by_id = dict(zip(ids_b, probs_b))
        rows = []
        csv_lines = ["outcome,auc_a,auc_b,delta,variance,z,p_value"]
        for outcome in outcomes:
            triples = [
                (a_by_id[r.record_id], b_by_id[r.record_id], r.outcomes[outcome])
                for r in records
                if r.record_id in a_by_id
                and r.record_id in b_by_id
                and r.outcomes.get(outcome) is not None
            ]
            if not triples:
                continue
            result = delong_test(
                [t[0] for t in triples], [t[1] for t in triples], [t[2] for t in triples]
            )
            rows.append((outcome, result))
            csv_lines.append(
                f"{outcome},{repr(result.auc_a)},{repr(result.auc_b)},{repr(result.delta)},"
                f"{repr(result.variance)},{repr(result.z)},{repr(result.p_value)}"
            )
        if not rows:
            raise DegenerateOutcomes("no outcome overlap between the models and the cohort")
        label_a = Path(model_a_path).stem
        label_b = Path(model_b_path).stem
        table = f"A = {label_a}\nB = {label_b}\n\n" + render_delong_table(rows)
        (out_dir / "delong.txt").write_text(table, encoding="utf-8")
        (out_dir / "delong.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    click.echo(f"comparison written to {out_dir}")


@main.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--value", "values", multiple=True, help="FEATURE=VALUE (repeatable).")
@click.option("--record-file", default=None, type=click.Path(), help="JSON object of feature values.")
@click.option("--feature-set", "feature_set_name", default=None, help="For range warnings.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def predict_cmd(model_path, values, record_file, feature_set_name, as_json):
    """Score one record and print the class, probability band, and phenotype."""
    try:
        model = load_model(model_path)
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    if not isinstance(model, Mvdd):
        _fail(EXIT_COMPAT, "predict explains diagram models only; use evaluate for baselines")
    record: dict[str, float] = {}
    if record_file:
        try:
            record.update(json.loads(Path(record_file).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            _fail(EXIT_DATA, f"cannot read record file: {exc}")
    for pair in values:
        name, _, raw = pair.partition("=")
        if not _ or not name:
            raise click.UsageError(f"--value needs FEATURE=VALUE, got {pair!r}")
        try:
            record[name.strip()] = float(raw)
        except ValueError:
            raise click.UsageError(f"--value {pair!r}: {raw!r} is not numeric")
    feature_set = None
    if feature_set_name or model.feature_set in BUILTIN_FEATURE_SETS:
        try:
            feature_set = resolve_feature_set(feature_set_name or model.feature_set)
        except FeatureSetError as exc:
            _fail(EXIT_CONFIG, str(exc))
    try:
        payload = predict_payload(model, record, feature_set)
    except IndeterminatePrediction as exc:
        if as_json:
            click.echo(json.dumps({"error": "indeterminate_prediction", "missing_features": exc.missing_features}))
        else:
            click.echo(f"indeterminate: missing feature(s) {', '.join(exc.missing_features)}", err=True)
        sys.exit(EXIT_INDETERMINATE)
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
        return
    click.echo(f"risk class: {payload['risk_class']} ({payload['probability_label']})")
    click.echo(f"phenotype: {payload['phenotype_text']}")
    if payload["substitutions"]:
        for sub in payload["substitutions"]:
            click.echo(f"substitution: {sub['used']} used in place of {sub['missing']}")
    for warning in payload["warnings"]:
        click.echo(f"warning: {warning}", err=True)


@main.command("export-dot")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def export_dot_cmd(model_path, out):
    """Write the diagram in DOT format (dashed = OR, solid = AND)."""
    try:
        model = load_model(model_path)
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    if not isinstance(model, Mvdd):
        _fail(EXIT_COMPAT, "only diagram models export to DOT")
    Path(out).write_text(export_dot(model), encoding="utf-8")
    click.echo(f"wrote {out}")


@main.command("serve")
@click.option("--model-dir", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--ui-dir", default=None, type=click.Path(), help="Static assets to serve at /.")
def serve_cmd(model_dir, host, port, ui_dir):
    """Serve loaded models over HTTP for live scoring and what-if use."""
    import uvicorn

    from .service import create_app

    try:
        app = create_app(Path(model_dir), ui_dir=Path(ui_dir) if ui_dir else None)
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, str(exc))
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
