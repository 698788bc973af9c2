from __future__ import annotations

import csv
import json
import shutil

import pytest

from rockmass import cli
from rockmass.plots import svg_data


def _run(capsys, *argv):
    code = cli.main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def _snapshot(directory):
    """File name -> comparable content (SVGs by their embedded data)."""
    snap = {}
    for p in sorted(directory.iterdir()):
        text = p.read_text(encoding="utf-8")
        snap[p.name] = svg_data(text) if p.suffix == ".svg" else text
    return snap


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--rounds", "300", "--seed", "7", "--out", str(root / "data")]) == 0
    assert cli.main(["aggregate", "--input", str(root / "data"), "--out", str(root / "agg")]) == 0
    return root


def test_synth_aggregate_train_deterministic(workspace, tmp_path, capsys):
    snaps = []
    for _ in range(2):
        out = tmp_path / "run"
        for argv in (
            ["synth", "--rounds", "300", "--seed", "7", "--out", str(out / "data")],
            ["aggregate", "--input", str(out / "data"), "--out", str(out / "agg")],
            ["train", "--model", "knn", "--input", str(out / "agg"), "--out", str(out / "train")],
        ):
            code, _, err = _run(capsys, *argv)
            assert code == 0, err
        snaps.append({d: _snapshot(out / d) for d in ("data", "agg", "train")})
        shutil.rmtree(out)
    assert snaps[0] == snaps[1]
    assert {"drillholes.csv", "rounds.csv", "ground_truth.csv"} <= set(snaps[0]["data"])
    assert "sections.csv" in snaps[0]["agg"]
    assert {"model.json", "eval_report.json", "run_config.json"} <= set(snaps[0]["train"])


def test_replayed_config_reproduces_outputs(workspace, capsys):
    out = workspace / "cv1"
    code, _, err = _run(capsys, "cv", "--input", str(workspace / "agg"), "--model", "decision_tree",
                        "--cv-folds", "3", "--seed", "2", "--out", str(out))
    assert code == 0, err
    first = _snapshot(out)
    shutil.rmtree(out)
    cfg_path = workspace / "cv1.json"
    cfg_path.write_text(first["run_config.json"])
    code, _, err = _run(capsys, "cv", "--config", str(cfg_path))
    assert code == 0, err
    assert _snapshot(out) == first


def test_binary_grouping_gives_two_by_two(workspace, capsys):
    out = workspace / "bin"
    code, _, err = _run(capsys, "train", "--grouping", "ABCD,E", "--model", "knn",
                        "--input", str(workspace / "agg"), "--out", str(out))
    assert code == 0, err
    d = svg_data((out / "confusion.svg").read_text())
    assert d["roster"] == ["ABCD", "E"]
    assert all(len(r) == 2 for r in d["panels"]["counts"]) and len(d["panels"]["counts"]) == 2
    code, _, err = _run(capsys, "report", "--input", str(out), "--out", str(workspace / "bin_report"))
    assert code == 0, err
    assert svg_data((workspace / "bin_report" / "confusion_triptych.svg").read_text())["roster"] == ["ABCD", "E"]
    assert (workspace / "bin_report" / "q_histogram.svg").exists()


def test_regression_report_has_qq_band(workspace, capsys):
    out = workspace / "reg"
    code, _, err = _run(capsys, "train", "--target", "log_q", "--model", "knn",
                        "--input", str(workspace / "agg"), "--out", str(out))
    assert code == 0, err
    code, _, err = _run(capsys, "report", "--input", str(out), "--out", str(out / "report"))
    assert code == 0, err
    svg = (out / "report" / "regression_qq.svg").read_text()
    d = svg_data(svg)
    assert d["band"] == pytest.approx(0.30103, abs=1e-5)
    assert "residual QQ" in svg and 'stroke="#d62728"' in svg
    assert len(d["qq_observed"]) == len(d["y_true"])


def test_predict_ignores_labels(workspace, capsys):
    out = workspace / "pred_model"
    assert _run(capsys, "train", "--model", "knn", "--input", str(workspace / "agg"), "--out", str(out))[0] == 0
    # strip every label column from the sections file
    src = workspace / "agg" / "sections.csv"
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    drop = {"label_q", "label_q_base", "label_class", "zone"}
    keep = [i for i, h in enumerate(rows[0]) if h not in drop]
    unlabeled = workspace / "unlabeled.csv"
    with open(unlabeled, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([[r[i] for i in keep] for r in rows])
    preds = {}
    for name, path in (("labeled", src), ("unlabeled", unlabeled)):
        o = workspace / f"pred_{name}"
        code, _, err = _run(capsys, "predict", "--model-file", str(out / "model.json"), "--input", str(path), "--out", str(o))
        assert code == 0, err
        preds[name] = (o / "predictions.csv").read_text()
    assert preds["labeled"] == preds["unlabeled"]
    header = preds["labeled"].splitlines()[0].split(",")
    assert header[:4] == ["tunnel_id", "round_id", "section_start_m", "label"]
    assert any(h.startswith("p_") for h in header)


def test_tune_outputs(workspace, capsys):
    out = workspace / "tune"
    code, _, err = _run(capsys, "tune", "--model", "knn", "--trials", "4", "--cv-folds", "3",
                        "--input", str(workspace / "agg"), "--out", str(out))
    assert code == 0, err
    rows = list(csv.DictReader(open(out / "trials.csv")))
    assert [r["trial"] for r in rows] == ["0", "1", "2", "3"]
    best = json.loads((out / "best_config.json").read_text())
    assert best["best_value"] == max(float(r["objective"]) for r in rows)
    code, _, err = _run(capsys, "report", "--input", str(out), "--out", str(out / "report"))
    assert code == 0, err
    assert (out / "report" / "parallel_coordinates.svg").exists()


def test_ingest_writes_validation(workspace, capsys):
    out = workspace / "ingest"
    code, _, err = _run(capsys, "ingest", "--input", str(workspace / "data"), "--out", str(out))
    assert code == 0, err
    doc = json.loads((out / "validation.json").read_text())
    assert doc["validation"]["ok"] and doc["n_rounds"] == 300


@pytest.mark.parametrize(
    "argv, code",
    [
        (["train", "--out", "x"], 2),  # missing --input
        (["train", "--input", "x", "--model", "svm"], 2),
        (["train", "--input", "x", "--grouping", "XYZ"], 2),
        (["train", "--input", "x", "--test-fraction", "1.5"], 2),
        (["fly"], 2),
        (["train", "--input", "x", "--model", "{broken"], 2),
        (["predict", "--input", "x"], 2),
    ],
)
def test_config_errors_exit_2(argv, code, capsys, tmp_path):
    rc, _, err = _run(capsys, *argv)
    assert rc == code
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["exit_code"] == code and doc["error"] and "message" in doc


def test_data_errors_exit_3(tmp_path, capsys):
    rc, _, err = _run(capsys, "train", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o"))
    assert rc == 3 and json.loads(err)["exit_code"] == 3
    bad = tmp_path / "sections.csv"
    bad.write_text("tunnel_id,round_id\nT1,R1\n")
    rc, _, err = _run(capsys, "train", "--input", str(bad), "--out", str(tmp_path / "o"))
    assert rc == 3


def test_runtime_errors_exit_4(monkeypatch, tmp_path, capsys):
    def boom(cfg, out):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(cli.HANDLERS, "synth", boom)
    rc, _, err = _run(capsys, "synth", "--rounds", "5", "--out", str(tmp_path))
    assert rc == 4 and json.loads(err)["message"] == "disk on fire"


def test_flags_override_config(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"command": "train", "seed": 3, "model": "knn", "input": "a"}))
    cfg = cli.resolve_config(["train", "--config", str(cfg_file), "--seed", "9"])
    assert cfg.seed == 9 and cfg.model == "knn" and cfg.input == "a"
    cfg_file.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(Exception) as exc:
        cli.resolve_config(["train", "--config", str(cfg_file)])
    assert getattr(exc.value, "exit_code", None) == 2
