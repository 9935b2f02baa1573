"""
Integration tests for the isoalign command line.

Each test runs the click group in-process against files in tmp_path and checks the
exit code, the written artifacts and, for JSON reports, the published schemas.
"""

import csv
import io
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from click.testing import CliRunner

from isoalign.frontend.cli import app, context
from isoalign.frontend.cli.app import cli
from isoalign.store.embeddings import load_embeddings, load_prototypes
from isoalign.theory.sweeps import SweepRecord, SweepReport

SCHEMAS = Path(__file__).resolve().parents[2] / "schemas"

pytestmark = pytest.mark.integration


def _schema(name: str) -> dict:
    return json.loads((SCHEMAS / name).read_text())


def _report(path: Path) -> dict:
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, _schema("report.schema.json"))
    return doc


def _rows(doc: dict, metric: str, **keys) -> list:
    return [
        r for r in doc["rows"]
        if r["metric"] == metric and all(r.get(k) == v for k, v in keys.items())
    ]


@pytest.fixture
def runner(tmp_path: Path, monkeypatch) -> CliRunner:
    monkeypatch.chdir(tmp_path)
    return CliRunner()


@pytest.fixture
def invoke(runner):
    def run(*args: str):
        return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)

    return run


@pytest.fixture
def scenario(tmp_path: Path, invoke) -> Path:
    out = tmp_path / "sc"
    result = invoke("synth", "--out-dir", out, "--d", 6, "--n-img", 60, "--n-txt", 24,
                    "--classes", 4, "--seed", 1)
    assert result.exit_code == 0
    return out


def _four(sc: Path) -> list:
    return [
        "--source-images", sc / "a_images.emb",
        "--source-texts", sc / "a_texts.emb",
        "--target-images", sc / "b_images.emb",
        "--target-texts", sc / "b_texts.emb",
    ]


@pytest.fixture
def fitted(tmp_path: Path, invoke, scenario) -> Path:
    map_path = tmp_path / "ab.map"
    result = invoke("fit", "--source", scenario / "a_images.emb", "--target",
                    scenario / "b_images.emb", "--map", map_path, "--out", tmp_path / "fit.json")
    assert result.exit_code == 0
    return map_path


# ==============================================================================
# Files
# ==============================================================================

class TestFiles:
    def test_synth_writes_scenario(self, scenario):
        """synth writes four EMB1 files and a schema-valid manifest."""
        for name in ("a_images.emb", "a_texts.emb", "b_images.emb", "b_texts.emb"):
            assert (scenario / name).exists()
            assert (scenario / f"{name}.json").exists()
        doc = json.loads((scenario / "scenario.json").read_text())
        jsonschema.validate(doc, _schema("scenario.schema.json"))
        assert np.asarray(doc["Q_true"]).shape == (6, 6)

    def test_import_csv(self, tmp_path: Path, invoke):
        """A labeled CSV becomes a normalized EMB1 file."""
        src = tmp_path / "rows.csv"
        src.write_text("0,3,0,4\n1,0,2,0\n")
        out = tmp_path / "rows.emb"
        result = invoke("import-csv", src, "--out", out, "--normalize", "--model-id", "m")
        assert result.exit_code == 0
        es = load_embeddings(out)
        assert es.labels.tolist() == [0, 1]
        assert np.allclose(es.data, [[0.6, 0.0, 0.8], [0.0, 1.0, 0.0]], atol=1e-7)
        assert es.model_id == "m"

    def test_import_csv_bad_rows(self, tmp_path: Path, invoke):
        """A ragged CSV is a format error."""
        src = tmp_path / "bad.csv"
        src.write_text("0,1,2\n1,2\n")
        result = invoke("import-csv", src, "--out", tmp_path / "bad.emb")
        assert result.exit_code == 3

    def test_prototypes(self, tmp_path: Path, invoke, scenario):
        """One unit prototype per class."""
        out = tmp_path / "protos.emb"
        result = invoke("prototypes", "--texts", scenario / "a_texts.emb", "--out", out)
        assert result.exit_code == 0
        protos = load_prototypes(out)
        assert protos.class_ids.tolist() == [0, 1, 2, 3]
        assert np.allclose(np.linalg.norm(protos.data, axis=1), 1.0)


# ==============================================================================
# Fit, Apply and Evaluate
# ==============================================================================

class TestAlignment:
    def test_fit_report(self, tmp_path: Path, fitted):
        """fit writes a MAP1 file and a schema-valid report."""
        assert fitted.exists()
        doc = _report(tmp_path / "fit.json")
        assert doc["kind"] == "fit"
        assert doc["meta"]["method"] == "orthogonal"
        assert set(doc["meta"]["inputs"]) == {"source", "target"}
        assert doc["stats"]["residual"] < 1e-8

    def test_apply_reproduces_target(self, tmp_path: Path, invoke, scenario, fitted):
        """Mapping model A's images lands on model B's images."""
        out = tmp_path / "mapped.emb"
        result = invoke("apply", "--map", fitted, "--input", scenario / "a_images.emb",
                        "--out", out)
        assert result.exit_code == 0
        mapped = load_embeddings(out)
        target = load_embeddings(scenario / "b_images.emb")
        assert np.abs(mapped.data - target.data).max() < 1e-9
        assert mapped.model_id == target.model_id

    def test_eval(self, tmp_path: Path, invoke, scenario, fitted):
        """Exact alignment scores perfect cosine and accuracy after mapping."""
        out = tmp_path / "eval.json"
        protos = tmp_path / "protos.emb"
        invoke("prototypes", "--texts", scenario / "b_texts.emb", "--out", protos)
        result = invoke("eval", "--map", fitted, *_four(scenario),
                        "--target-prototypes", protos, "--out", out)
        assert result.exit_code == 0
        doc = _report(out)
        after = _rows(doc, "image_cosine.mean_cosine", stage="after")
        assert after and after[0]["value"] == pytest.approx(1.0, abs=1e-9)
        assert _rows(doc, "image_cosine.mean_cosine", stage="before")
        assert _rows(doc, "image_retrieval.top1_accuracy", stage="after")[0]["value"] == 1.0
        assert _rows(doc, "zeroshot_aligned_image.top1_accuracy", stage="after")
        assert "target_prototypes" in doc["meta"]["inputs"]

    def test_eval_csv_to_stdout(self, invoke, scenario, fitted):
        """CSV reports go to stdout when --out is absent."""
        result = invoke("eval", "--map", fitted, *_four(scenario), "--format", "csv",
                        "--recenter")
        assert result.exit_code == 0
        assert "stage,subset,metric,value" in result.stdout.splitlines()

    def test_two_path(self, tmp_path: Path, invoke, scenario, fitted):
        """two-path reports per-query overlap plus a summary."""
        out = tmp_path / "two_path.json"
        result = invoke("two-path", "--map", fitted, *_four(scenario), "--k", 3,
                        "--format", "json", "--out", out)
        assert result.exit_code == 0
        doc = _report(out)
        assert len(_rows(doc, "overlap", subset="query")) == 60
        assert doc["summary"]["k"] == 3

    def test_gap(self, tmp_path: Path, invoke, scenario):
        """gap reports both models' modality gaps and kernel agreement."""
        out = tmp_path / "gap.csv"
        result = invoke("gap", *_four(scenario), "--out", out)
        assert result.exit_code == 0
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        gaps = {r["subset"]: float(r["value"]) for r in rows if r["metric"] == "modality_gap"}
        assert set(gaps) == {"source", "target"}
        assert gaps["source"] == pytest.approx(gaps["target"], abs=1e-9)
        cka = [r for r in rows if r["metric"] == "kernel.cka"]
        assert cka and float(cka[0]["value"]) == pytest.approx(1.0, abs=1e-9)


# ==============================================================================
# Experiments
# ==============================================================================

class TestExperiments:
    def test_seen_unseen_sweep(self, tmp_path: Path, invoke, scenario):
        """Fitting on seen classes still aligns unseen ones in a noise-free world."""
        out = tmp_path / "sweep.json"
        result = invoke("sweep", *_four(scenario), "--n", "2,3", "--n", 1,
                        "--format", "json", "--out", out)
        assert result.exit_code == 0
        doc = _report(out)
        unseen = _rows(doc, "image_cosine.mean_cosine", subset="unseen", stage="after")
        assert sorted(r["N"] for r in unseen) == [1, 2, 3]
        assert all(r["value"] == pytest.approx(1.0, abs=1e-8) for r in unseen)
        texts = _rows(doc, "text_cosine.mean_cosine", subset="unseen", stage="after")
        assert sorted(r["N"] for r in texts) == [1, 2, 3]
        assert all(r["value"] >= 1.0 - 1e-8 for r in texts)

    def test_sweep_count_out_of_range(self, invoke, scenario):
        """Class counts beyond the label set are a contract error."""
        result = invoke("sweep", *_four(scenario), "--n", 9)
        assert result.exit_code == 2

    def test_compare(self, tmp_path: Path, invoke, scenario):
        """compare scores every fitting method on the held-out split."""
        out = tmp_path / "compare.csv"
        result = invoke("compare", *_four(scenario), "--ridge", 1e-6, "--out", out)
        assert result.exit_code == 0
        text = out.read_text()
        assert text.splitlines()[0] == "method,stage,subset,metric,value"
        rows = list(csv.DictReader(io.StringIO(text)))
        methods = {r["method"] for r in rows}
        assert methods == {"orthogonal", "orthogonal-centered", "linear", "linear-centered"}

    def test_cycle(self, tmp_path: Path, invoke, scenario):
        """Round trips and chains through an exact map return to the start."""
        out = tmp_path / "cycle.json"
        result = invoke("cycle", "--a-images", scenario / "a_images.emb",
                        "--b-images", scenario / "b_images.emb",
                        "--c-images", scenario / "b_images.emb", "--out", out)
        assert result.exit_code == 0
        doc = _report(out)
        for metric in ("roundtrip_frobenius", "roundtrip_pointwise", "composition_frobenius"):
            assert all(r["value"] < 1e-8 for r in _rows(doc, metric))
        assert _rows(doc, "roundtrip_pointwise", subset="inverse")

    def test_theory(self, tmp_path: Path, invoke):
        """A short theorem sweep passes and reports a summary per check."""
        out = tmp_path / "theory.json"
        result = invoke("theory", "--instances", 2, "--seed", 5, "--out", out)
        assert result.exit_code == 0
        doc = _report(out)
        assert doc["violations"] == []
        assert doc["summary"]["margin"]["instances"] == 2


# ==============================================================================
# Exit Codes
# ==============================================================================

class TestExitCodes:
    def test_violation_exits_one(self, tmp_path: Path, invoke, mocker):
        """A violated bound still writes the report, then exits 1."""
        bad = SweepRecord(check="text_bound", seed=9, satisfied=False,
                          bound_value=0.1, observed_max=0.3)
        mocker.patch.object(app, "run_theory_sweep", return_value=SweepReport(
            n_instances=1, seed=9, tolerance=1e-9, negative_controls=False, records=[bad]))
        out = tmp_path / "theory.json"
        result = invoke("theory", "--instances", 1, "--seed", 9, "--out", out)
        assert result.exit_code == 1
        assert _report(out)["violations"][0]["seed"] == 9

    def test_pairing_mismatch_exits_two(self, tmp_path: Path, invoke, scenario):
        """Unpaired inputs are a contract error."""
        result = invoke("fit", "--source", scenario / "a_images.emb",
                        "--target", scenario / "b_texts.emb", "--map", tmp_path / "x.map")
        assert result.exit_code == 2
        assert not (tmp_path / "x.map").exists()

    def test_cycle_unequal_dimensions_exits_two(self, tmp_path: Path, invoke, mocker):
        """Round trips between 4- and 6-dimensional models are refused before fitting."""
        sc = tmp_path / "rect"
        assert invoke("synth", "--out-dir", sc, "--d", 4, "--d-tilde", 6, "--n-img", 30,
                      "--n-txt", 8, "--classes", 2, "--seed", 2).exit_code == 0
        printed = mocker.patch.object(context, "err_console")
        fit_spy = mocker.spy(app, "fit")
        out = tmp_path / "cycle.json"
        result = invoke("cycle", "--a-images", sc / "a_images.emb",
                        "--b-images", sc / "b_images.emb", "--out", out)
        assert result.exit_code == 2
        assert not out.exists()
        assert fit_spy.call_count == 0
        message = printed.print.call_args_list[0].args[0]
        assert "equal dimensions" in message and "4 and 6" in message

    def test_usage_error_exits_two(self, invoke):
        """Missing required options are usage errors."""
        assert invoke("fit").exit_code == 2

    def test_invalid_env_exits_two(self, invoke, monkeypatch):
        """Bad settings in the environment stop the run before any command."""
        monkeypatch.setenv("ALIGN_NUM_THREADS", "0")
        result = invoke("theory", "--instances", 1)
        assert result.exit_code == 2

    def test_corrupt_file_exits_three(self, tmp_path: Path, invoke, scenario):
        """A file with a bad magic number is a format error."""
        bad = tmp_path / "bad.emb"
        bad.write_bytes(b"NOPE" + bytes(32))
        result = invoke("fit", "--source", bad, "--target", scenario / "b_images.emb",
                        "--map", tmp_path / "x.map")
        assert result.exit_code == 3

    def test_missing_file_exits_three(self, tmp_path: Path, invoke, scenario):
        """An unreadable input is reported, not raised."""
        result = invoke("fit", "--source", tmp_path / "absent.emb",
                        "--target", scenario / "b_images.emb", "--map", tmp_path / "x.map")
        assert result.exit_code == 3

    def test_bad_map_exits_three(self, tmp_path: Path, invoke, scenario):
        """A truncated MAP1 file is a format error."""
        bad = tmp_path / "bad.map"
        bad.write_bytes(b"MAP1")
        result = invoke("apply", "--map", bad, "--input", scenario / "a_images.emb",
                        "--out", tmp_path / "out.emb")
        assert result.exit_code == 3


class TestSweepSchema:
    def test_sweep_report_schema(self):
        """The library sweep report matches its published schema."""
        from isoalign.theory.sweeps import run_theory_sweep

        doc = json.loads(json.dumps(run_theory_sweep(n_instances=2, seed=1).to_dict()))
        jsonschema.validate(doc, _schema("sweep_report.schema.json"))

    def test_bound_report_schema(self):
        """A bound check report matches its published schema."""
        from isoalign.synth.anchors import make_exact_anchor_world
        from isoalign.theory.bounds import check_linear_bound

        anchors, sc = make_exact_anchor_world(4, 4, seed=2)
        report = check_linear_bound(anchors, sc.fA.data, sc.fB.data)
        doc = json.loads(json.dumps(report.to_dict()))
        jsonschema.validate(doc, _schema("bound_report.schema.json"))
        assert doc["satisfied"]
