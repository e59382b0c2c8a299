import hashlib
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from riskmvdd.cli import main
from riskmvdd.demo import build_demo_model
from riskmvdd.modeldoc import save_model

from conftest import PATH_PHENOTYPE


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


def run(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    return result


def tree_hash(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """generate -> label -> train once; downstream tests read the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    data_dir = root / "data"
    gen = run(
        runner,
        [
            "generate", "--out", str(data_dir), "--n", "400", "--seed", "42",
            "--pair", "PAS,PCWP,-40", "--cohort-id", "synthetic",
        ],
    )
    assert gen.exit_code == 0, gen.output
    label = run(
        runner,
        [
            "label", "--data", str(data_dir / "synthetic.csv"),
            "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
            "--k", "5", "--seed", "42", "--out", str(root / "labels"),
        ],
    )
    assert label.exit_code == 0, label.output
    train = run(
        runner,
        [
            "train", "--data", str(data_dir / "synthetic.csv"),
            "--labels", str(root / "labels" / "invasive-hemodynamics__DeLvTx.labels.csv"),
            "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
            "--seed", "7", "--min-leaf", "5", "--out", str(root / "models"),
        ],
    )
    assert train.exit_code == 0, train.output
    baseline = run(
        runner,
        [
            "train-baseline", "--data", str(data_dir / "synthetic.csv"),
            "--labels", str(root / "labels" / "invasive-hemodynamics__DeLvTx.labels.csv"),
            "--feature-set", "invasive-hemodynamics", "--kind", "knn",
            "--seed", "7", "--out", str(root / "models"),
        ],
    )
    assert baseline.exit_code == 0, baseline.output
    return root


class TestPipelineCommands:
    def test_label_outputs(self, workspace):
        labels_dir = workspace / "labels"
        assert (labels_dir / "invasive-hemodynamics__DeLvTx.labels.csv").exists()
        summary = (labels_dir / "invasive-hemodynamics__DeLvTx.summary.txt").read_text()
        assert "Risk Score" in summary
        assert "<10%" in summary and ">40%" in summary
        assert (labels_dir / "invasive-hemodynamics.merges.csv").exists()
        assert (labels_dir / "invasive-hemodynamics.elbow.csv").exists()

    def test_label_two_by_two_grid(self, workspace, tmp_path):
        out = tmp_path / "grid"
        result = run(
            CliRunner(),
            [
                "label", "--data", str(workspace / "data" / "synthetic.csv"),
                "--k", "5", "--seed", "42", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        label_files = sorted(p.name for p in out.glob("*.labels.csv"))
        assert label_files == [
            "all-features__DeLvTx.labels.csv",
            "all-features__Rehospitalization.labels.csv",
            "invasive-hemodynamics__DeLvTx.labels.csv",
            "invasive-hemodynamics__Rehospitalization.labels.csv",
        ]

    def test_label_missing_file_exits_3(self):
        result = CliRunner().invoke(
            main,
            ["label", "--data", "/nonexistent/file.csv", "--out", "/tmp/never",
             "--feature-set", "invasive-hemodynamics"],
        )
        assert result.exit_code == 3
        assert "file.csv" in result.output

    def test_train_wrote_model_and_folds(self, workspace):
        models = workspace / "models"
        model_path = models / "invasive-hemodynamics__DeLvTx.model.json"
        assert model_path.exists()
        doc = json.loads(model_path.read_text())
        assert doc["kind"] == "mvdd"
        assert doc["schema_version"] == 1
        folds = (models / "invasive-hemodynamics__DeLvTx.folds.csv").read_text()
        assert len(folds.strip().splitlines()) == 6  # header + 5 folds

    def test_train_config_file_with_flag_override(self, workspace, tmp_path):
        # config supplies criterion/folds; the --folds flag wins over the file
        config = tmp_path / "train.json"
        config.write_text(json.dumps({"criterion": "entropy", "folds": 3, "seed": 7}))
        out = tmp_path / "models"
        result = run(
            CliRunner(),
            [
                "train", "--data", str(workspace / "data" / "synthetic.csv"),
                "--labels", str(workspace / "labels" / "invasive-hemodynamics__DeLvTx.labels.csv"),
                "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
                "--config", str(config), "--folds", "4", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        doc = json.loads((out / "invasive-hemodynamics__DeLvTx.model.json").read_text())
        assert doc["metadata"]["criterion"] == "entropy"
        folds = (out / "invasive-hemodynamics__DeLvTx.folds.csv").read_text()
        assert len(folds.strip().splitlines()) == 5  # header + 4 folds (flag wins)

    def test_train_min_leaf_larger_than_data_exits_3(self, workspace):
        result = CliRunner().invoke(
            main,
            [
                "train", "--data", str(workspace / "data" / "synthetic.csv"),
                "--labels", str(workspace / "labels" / "invasive-hemodynamics__DeLvTx.labels.csv"),
                "--feature-set", "invasive-hemodynamics",
                "--min-leaf", "1000", "--out", "/tmp/never2",
            ],
        )
        assert result.exit_code == 3

    def test_evaluate_outputs(self, workspace, tmp_path):
        out = tmp_path / "eval"
        result = run(
            CliRunner(),
            [
                "evaluate",
                "--model", str(workspace / "models" / "invasive-hemodynamics__DeLvTx.model.json"),
                "--data", str(workspace / "data" / "synthetic.csv"),
                "--labels", str(workspace / "labels" / "invasive-hemodynamics__DeLvTx.labels.csv"),
                "--feature-set", "invasive-hemodynamics",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        report = (out / "report.txt").read_text()
        assert "Averaged AUC" in report
        assert (out / "roc_points.csv").exists()
        assert (out / "calibration.csv").exists()
        assert (out / "per_class.csv").exists()

    def test_evaluate_feature_set_mismatch_exits_4(self, workspace, tmp_path):
        result = CliRunner().invoke(
            main,
            [
                "evaluate",
                "--model", str(workspace / "models" / "invasive-hemodynamics__DeLvTx.model.json"),
                "--data", str(workspace / "data" / "synthetic.csv"),
                "--labels", str(workspace / "labels" / "invasive-hemodynamics__DeLvTx.labels.csv"),
                "--feature-set", "all-features",
                "--out", str(tmp_path / "never"),
            ],
        )
        assert result.exit_code == 4

    def test_compare_model_with_itself(self, workspace, tmp_path):
        out = tmp_path / "cmp"
        model = str(workspace / "models" / "invasive-hemodynamics__DeLvTx.model.json")
        result = run(
            CliRunner(),
            [
                "compare", "--model-a", model, "--model-b", model,
                "--data", str(workspace / "data" / "synthetic.csv"),
                "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        csv_text = (out / "delong.csv").read_text().splitlines()
        _, auc_a, auc_b, delta, _, _, p = csv_text[1].split(",")
        assert float(delta) == 0.0
        assert float(p) == 1.0

    def test_compare_against_baseline(self, workspace, tmp_path):
        out = tmp_path / "cmp2"
        result = run(
            CliRunner(),
            [
                "compare",
                "--model-a", str(workspace / "models" / "invasive-hemodynamics__DeLvTx.model.json"),
                "--model-b", str(workspace / "models" / "invasive-hemodynamics__DeLvTx.knn.model.json"),
                "--data", str(workspace / "data" / "synthetic.csv"),
                "--feature-set", "invasive-hemodynamics",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        table = (out / "delong.txt").read_text()
        assert "Delta AUC" in table
        rows = (out / "delong.csv").read_text().strip().splitlines()
        assert len(rows) == 3  # header + both outcomes


class TestDeterminism:
    def test_generate_rerun_identical(self, tmp_path):
        runner = CliRunner()
        args = ["generate", "--n", "100", "--seed", "11", "--pair", "PAS,PCWP,-40"]
        run(runner, args + ["--out", str(tmp_path / "a")])
        run(runner, args + ["--out", str(tmp_path / "b")])
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")

    def test_label_rerun_identical(self, workspace, tmp_path):
        runner = CliRunner()
        args = [
            "label", "--data", str(workspace / "data" / "synthetic.csv"),
            "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
            "--k", "5", "--seed", "42",
        ]
        run(runner, args + ["--out", str(tmp_path / "a")])
        run(runner, args + ["--out", str(tmp_path / "b")])
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")

    def test_train_rerun_identical(self, workspace, tmp_path):
        runner = CliRunner()
        args = [
            "train", "--data", str(workspace / "data" / "synthetic.csv"),
            "--labels", str(workspace / "labels" / "invasive-hemodynamics__DeLvTx.labels.csv"),
            "--feature-set", "invasive-hemodynamics", "--outcome", "DeLvTx",
            "--seed", "7", "--min-leaf", "5",
        ]
        run(runner, args + ["--out", str(tmp_path / "a")])
        run(runner, args + ["--out", str(tmp_path / "b")])
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


@pytest.fixture(scope="module")
def demo_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("demo") / "demo.model.json"
    save_model(build_demo_model(), path)
    return path


class TestPredict:
    def test_path_record_scores_five(self, demo_path):
        result = run(
            CliRunner(),
            [
                "predict", "--model", str(demo_path),
                "--value", "Sex=1", "--value", "BPSYS=110",
                "--value", "CPI=0.7", "--value", "PAS=80",
            ],
        )
        assert result.exit_code == 0, result.output
        assert "risk class: 5 (>40%)" in result.output
        assert PATH_PHENOTYPE in result.output

    def test_substitution_notice(self, demo_path):
        result = run(
            CliRunner(),
            [
                "predict", "--model", str(demo_path),
                "--value", "Sex=1", "--value", "BPSYS=110",
                "--value", "CPI=0.7", "--value", "PCWP=30",
            ],
        )
        assert result.exit_code == 0
        assert "PCWP used in place of PAS" in result.output

    def test_indeterminate_exits_5(self, demo_path):
        result = CliRunner().invoke(
            main,
            [
                "predict", "--model", str(demo_path),
                "--value", "Sex=1", "--value", "BPSYS=110", "--value", "CPI=0.7",
            ],
        )
        assert result.exit_code == 5
        assert "PAS" in result.output and "PCWP" in result.output

    def test_json_output(self, demo_path):
        result = run(
            CliRunner(),
            [
                "predict", "--model", str(demo_path), "--json",
                "--value", "Sex=1", "--value", "BPSYS=110",
                "--value", "CPI=0.7", "--value", "PAS=80",
            ],
        )
        payload = json.loads(result.output)
        assert payload["risk_class"] == 5
        assert payload["phenotype_text"] == PATH_PHENOTYPE + " = Score 5"
        assert payload["probability_range"] == [0.4, 1.0]

    def test_range_warning(self, demo_path):
        result = run(
            CliRunner(),
            [
                "predict", "--model", str(demo_path),
                "--value", "Sex=1", "--value", "BPSYS=9999",
                "--value", "CPI=0.7", "--value", "PAS=80",
            ],
        )
        assert result.exit_code == 0
        assert "outside valid range" in result.output

    def test_bad_value_is_usage_error(self, demo_path):
        result = CliRunner().invoke(
            main, ["predict", "--model", str(demo_path), "--value", "Sex=abc"]
        )
        assert result.exit_code == 2


class TestExportDot:
    def test_export(self, tmp_path):
        model_path = tmp_path / "demo.model.json"
        save_model(build_demo_model(), model_path)
        out = tmp_path / "demo.dot"
        result = run(CliRunner(), ["export-dot", "--model", str(model_path), "--out", str(out)])
        assert result.exit_code == 0
        text = out.read_text()
        assert text.startswith("digraph")
        assert "style=dashed" in text
