import json
import time

import pytest

from ccref.cli import main
from ccref.graph import Provenance, dumps_labels, loads_graph, read_labels
from helpers import analytics_records_with_text, cli_workspace, rec, write_json, write_jsonl


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = cli_workspace(tmp_path_factory.mktemp("ws"))
    for cmd in ("build", "train", "evaluate", "label"):
        assert run(cmd, "--config", cfg) == 0
    return cfg


def test_build_three_certs(tmp_path, capsys):
    recs = [rec("SERTIT-001", "2015-01-01", report="Built on SERTIT-002 hardware."),
            rec("SERTIT-002", "2014-01-01"),
            rec("SERTIT-003", "2016-01-01", report="Previous version SERTIT-001. And SERTIT-777.")]
    corpus = write_jsonl(tmp_path / "c.jsonl", recs)
    assert run("build", "--corpus", corpus, "--snapshot-date", "2023-11-01", "--out", tmp_path / "o") == 0
    g = loads_graph((tmp_path / "o" / "graph.jsonl").read_text())
    assert len(g.edges) == 2
    summary = json.loads((tmp_path / "o" / "build_summary.json").read_text())
    assert (summary["vertices"], summary["edges"], summary["dangling"]) == (3, 2, 1)
    assert (tmp_path / "o" / "dangling.csv").read_text().splitlines()[1] == "SERTIT-003,SERTIT-777"
    manifest = json.loads((tmp_path / "o" / "manifest-build.json").read_text())
    assert manifest["seed"] == 0 and "sha256" in manifest["inputs"]["corpus"]


def test_missing_inputs(tmp_path, capsys):
    assert run("build", "--corpus", tmp_path / "nope.jsonl", "--snapshot-date", "2023-11-01",
               "--out", tmp_path / "o") == 2
    assert "nope.jsonl" in capsys.readouterr().err
    corpus = write_jsonl(tmp_path / "c.jsonl", [rec("SERTIT-001", "2015-01-01")])
    assert run("build", "--corpus", corpus, "--out", tmp_path / "o") == 2
    assert "snapshot_date" in capsys.readouterr().err


def test_duplicate_ids_exit_3(tmp_path):
    corpus = write_jsonl(tmp_path / "c.jsonl", [rec("SERTIT-001", "2015-01-01")] * 2)
    assert run("build", "--corpus", corpus, "--snapshot-date", "2023-11-01", "--out", tmp_path / "o") == 3


def test_unknown_rq_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("analyze", "--rq", "rq9", "--out", tmp_path)
    assert exc.value.code == 2


def test_train_evaluate_label(trained):
    out = trained.parent / "out"
    rep = json.loads((out / "eval_report.json").read_text())
    assert rep["taxonomies"]["binary"]["weighted_f1"] >= 0.95
    for tax in rep["taxonomies"].values():
        assert tax["comparison"]["tfidf"] > tax["comparison"]["random_guess"]
    assert rep["seed"] == 7 and len(rep["config_hash"]) == 64
    g = loads_graph((out / "graph.jsonl").read_text())
    labels = dict(read_labels((out / "labels.csv").read_text()))
    assert set(labels) == set(g.edges)
    manual = dict(read_labels((trained.parent / "annotations.csv").read_text()))
    assert all(labels[k] == v for k, v in manual.items())
    assert (out / "roc.csv").read_text().startswith("x,y,series\n")


def test_label_predicts_unannotated_edges(trained, tmp_path):
    ws = trained.parent
    rows = (ws / "annotations.csv").read_text().splitlines()
    partial = write_json(tmp_path / "cfg.json", {**json.loads(trained.read_text()),
                                                  "corpus": str(ws / "corpus.jsonl"),
                                                  "annotations": str(tmp_path / "ann.csv"),
                                                  "model": str(ws / "out"), "out": str(tmp_path / "o")})
    (tmp_path / "ann.csv").write_text("\n".join(rows[:21]) + "\n")
    assert run("build", "--config", partial) == 0
    assert run("label", "--config", partial) == 0
    labels = dict(read_labels((tmp_path / "o" / "labels.csv").read_text()))
    predicted = [l for l in labels.values() if l.provenance is Provenance.PREDICTED]
    assert len(labels) == 110 and len(predicted) == 90
    assert all(0.5 <= l.confidence <= 1.0 for l in predicted)


def test_annotation_for_unknown_edge(trained, tmp_path, capsys):
    ann = tmp_path / "bad.csv"
    ann.write_text((trained.parent / "annotations.csv").read_text() + "NOPE-1,NOPE-2,Predecessor,,,manual,1.0\n")
    assert run("train", "--config", trained, "--annotations", ann, "--out", trained.parent / "out") == 3
    assert "NOPE-1->NOPE-2" in capsys.readouterr().err


def test_single_class_annotations_exit_3(trained, tmp_path):
    rows = (trained.parent / "annotations.csv").read_text().splitlines()
    keep = [rows[0]] + [r for r in rows[1:] if ",ComponentReuse," in r]
    ann = tmp_path / "one.csv"
    ann.write_text("\n".join(keep) + "\n")
    out = tmp_path / "o"
    assert run("build", "--config", trained, "--out", out) == 0
    assert run("train", "--config", trained, "--annotations", ann, "--out", out) == 3


def test_schema_mismatch_exit_4(trained, tmp_path):
    out = trained.parent / "out"
    model = json.loads((out / "model_binary.json").read_text())
    model["feature_schema"] = model["feature_schema"][:-1]
    bad = tmp_path / "bad_model.json"
    bad.write_text(json.dumps(model))
    ann = tmp_path / "few.csv"
    ann.write_text("\n".join((trained.parent / "annotations.csv").read_text().splitlines()[:5]) + "\n")
    assert run("label", "--config", trained, "--model", bad, "--annotations", ann, "--out", out) == 4


def test_analyze_requires_labels(tmp_path, capsys):
    recs, _ = analytics_records_with_text()
    corpus = write_jsonl(tmp_path / "c.jsonl", recs)
    common = ["--corpus", corpus, "--snapshot-date", "2023-11-01", "--out", tmp_path / "o"]
    assert run("build", *common) == 0
    assert run("analyze", *common) == 3
    assert "ccref label" in capsys.readouterr().err


def test_fixture_full_run_under_budget(tmp_path):
    recs, labels = analytics_records_with_text()
    corpus = write_jsonl(tmp_path / "c.jsonl", recs)
    (tmp_path / "a.csv").write_text(dumps_labels(labels))
    common = ["--corpus", corpus, "--annotations", tmp_path / "a.csv", "--snapshot-date", "2023-11-01",
              "--out", tmp_path / "o"]
    t0 = time.perf_counter()
    for cmd in ("build", "label", "analyze", "report"):
        assert run(cmd, *common) == 0
    assert time.perf_counter() - t0 < 5.0
    o = tmp_path / "o"
    for name in ("rq1_culture.json", "rq1_timeseries.json", "rq2_reach.json", "rq3_ageing.json"):
        doc = json.loads((o / name).read_text())
        assert doc["schema_version"] == 1 and doc["seed"] == 0 and len(doc["config_hash"]) == 64
    for name in ("rq1_timeseries.csv", "rq3_fade.csv", "rq3_policy.csv"):
        assert (o / name).read_text().startswith("x,y,series\n")
    ageing = json.loads((o / "rq3_ageing.json").read_text())
    assert [a["gap_days"] for a in ageing["archived"]] == [152]
    assert ageing["fade"]["samples"][0]["days"] == 366
    assert ageing["policy"]["schemes"]["DE"]["violating_products"] == 1
    assert "Highest reach" in (o / "report.md").read_text()


def test_analyze_single_rq(tmp_path):
    recs, labels = analytics_records_with_text()
    corpus = write_jsonl(tmp_path / "c.jsonl", recs)
    (tmp_path / "a.csv").write_text(dumps_labels(labels))
    common = ["--corpus", corpus, "--annotations", tmp_path / "a.csv", "--snapshot-date", "2023-11-01",
              "--out", tmp_path / "o"]
    for cmd in ("build", "label"):
        assert run(cmd, *common) == 0
    assert run("analyze", "--rq", "rq1", *common) == 0
    names = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert "rq1_culture.json" in names and not any(n.startswith(("rq2", "rq3")) for n in names)
