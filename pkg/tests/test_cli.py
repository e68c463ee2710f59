"""End-to-end checks of the command-line interface and its exit codes."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

import synth
from cogspeech import wavio
from cogspeech.cli import main
from cogspeech.features import EG_ALL_NAMES, read_feature_csv


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return synth.build_corpus(root, n_subjects=12, seed=0, n_holdout=3)


@pytest.fixture(scope="module")
def preprocessed(corpus, tmp_path_factory):
    outdir = tmp_path_factory.mktemp("pre")
    code = main(["preprocess", "--manifest", str(corpus["manifest"]),
                 "--outdir", str(outdir), "--jobs", "2"])
    assert code == 0
    return outdir


@pytest.fixture(scope="module")
def stream_dir(corpus, preprocessed, tmp_path_factory):
    outdir = tmp_path_factory.mktemp("streams")
    code = main(["streams", "--manifest", str(corpus["manifest"]),
                 "--wav-dir", str(preprocessed),
                 "--rttm-dir", str(corpus["root"] / "rttm"),
                 "--outdir", str(outdir), "--jobs", "2"])
    assert code == 0
    return outdir


@pytest.fixture(scope="module")
def feature_csv(corpus, stream_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("feat") / "features.csv"
    code = main(["features", "--manifest", str(corpus["manifest"]),
                 "--prosody-dir", str(stream_dir),
                 "--concat-dir", str(stream_dir),
                 "--set", "EG_ALL", "--out", str(out), "--jobs", "2"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def cv_json(corpus, feature_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("cv") / "cv_cerad.json"
    code = main(["cv", "--features", str(feature_csv),
                 "--manifest", str(corpus["manifest"]),
                 "--level", "3", "--target", "cerad_total",
                 "--kind", "regression", "--seed", "0", "--out", str(out)])
    assert code == 0
    return out


def session_count(corpus):
    return len(corpus["truth"])


# ---------------------------------------------------------------------------
# qc

def test_qc_clean_corpus_passes(corpus, tmp_path):
    out = tmp_path / "qc.jsonl"
    summary = tmp_path / "qc.csv"
    code = main(["qc", "--manifest", str(corpus["manifest"]),
                 "--out", str(out), "--summary", str(summary)])
    assert code == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(lines) == session_count(corpus)
    assert all(l["overall"] == "pass" for l in lines)
    with open(summary, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "session_id"
    assert len(rows) == session_count(corpus) + 1
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["command"] == "qc"
    assert str(corpus["manifest"]) in manifest["input_hashes"]


def one_row_manifest(corpus, dest: Path, audio_path: Path) -> Path:
    text = corpus["manifest"].read_text().splitlines()
    header_at = 1 if text[0].startswith("#") else 0
    reader = csv.DictReader(text[header_at:])
    row = next(iter(reader))
    row["audio_path"] = str(audio_path)
    with open(dest, "w", newline="") as fh:
        fh.write("# domain_range = 40, 160\n")
        writer = csv.DictWriter(fh, fieldnames=reader.fieldnames)
        writer.writeheader()
        writer.writerow(row)
    return dest


def test_qc_short_recording_exits_gate_code(corpus, tmp_path):
    sid = next(iter(corpus["truth"].values()))["session_id"]
    samples, rate = wavio.read_wav(corpus["root"] / "audio" / f"{sid}.wav")
    short = tmp_path / "short.wav"
    wavio.write_wav(short, samples[:14 * rate], rate)
    manifest = one_row_manifest(corpus, tmp_path / "m.csv", short)
    code = main(["qc", "--manifest", str(manifest),
                 "--out", str(tmp_path / "qc.jsonl")])
    assert code == 2
    line = json.loads((tmp_path / "qc.jsonl").read_text().splitlines()[0])
    assert line["overall"] == "fail"
    assert line["flags"]["duration"] is False  # the gate that tripped


# ---------------------------------------------------------------------------
# preprocess

def test_preprocess_outputs_and_audit(corpus, preprocessed):
    wavs = sorted(preprocessed.glob("*.wav"))
    assert len(wavs) == session_count(corpus)
    entries = [json.loads(l) for l in
               (preprocessed / "audit.jsonl").read_text().splitlines()]
    by_session = {}
    for e in entries:
        by_session.setdefault(e["session_id"], []).append(e["stage"])
    for stages in by_session.values():
        assert stages == ["highpass", "spectral_gate", "loudness_normalize"]
    assert (preprocessed / "run_manifest.json").exists()


def test_preprocess_flag_overrides_config(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"loudness_target_lufs": -26.0}))
    outdir = tmp_path / "pre"
    code = main(["preprocess", "--manifest", str(corpus["manifest"]),
                 "--outdir", str(outdir), "--config", str(cfg),
                 "--loudness-target", "-24.0"])
    assert code == 0
    entries = [json.loads(l) for l in
               (outdir / "audit.jsonl").read_text().splitlines()]
    targets = {e["params"]["target_lufs"] for e in entries
               if e["stage"] == "loudness_normalize"}
    assert targets == {-24.0}


def test_preprocess_unknown_config_key_is_config_error(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus_knob": 1.0}))
    code = main(["preprocess", "--manifest", str(corpus["manifest"]),
                 "--outdir", str(tmp_path / "pre"), "--config", str(cfg)])
    assert code == 3


def test_preprocess_replay_is_byte_identical(corpus, tmp_path):
    manifest = one_row_manifest(
        corpus, tmp_path / "m.csv",
        corpus["root"] / "audio" /
        (next(iter(corpus["truth"].values()))["session_id"] + ".wav"))
    dirs = []
    for name in ("a", "b"):
        outdir = tmp_path / name
        assert main(["preprocess", "--manifest", str(manifest),
                     "--outdir", str(outdir)]) == 0
        dirs.append(outdir)
    wav_a = sorted(dirs[0].glob("*.wav"))[0]
    wav_b = dirs[1] / wav_a.name
    assert wav_a.read_bytes() == wav_b.read_bytes()
    assert (dirs[0] / "audit.jsonl").read_bytes() == \
        (dirs[1] / "audit.jsonl").read_bytes()


# ---------------------------------------------------------------------------
# streams + features

def test_streams_outputs(corpus, stream_dir):
    for info in corpus["truth"].values():
        sid = info["session_id"]
        assert (stream_dir / f"{sid}.prosody.wav").exists()
        assert (stream_dir / f"{sid}.concat.wav").exists()
    lines = [json.loads(l) for l in
             (stream_dir / "transitions.jsonl").read_text().splitlines()]
    per_session = [l for l in lines if "junctions" in l]
    assert len(per_session) == session_count(corpus)


def test_streams_single_session_form(corpus, preprocessed, tmp_path):
    sid = next(iter(corpus["truth"].values()))["session_id"]
    code = main(["streams", "--wav", str(preprocessed / f"{sid}.wav"),
                 "--rttm", str(corpus["root"] / "rttm" / f"{sid}.rttm"),
                 "--outdir", str(tmp_path)])
    assert code == 0
    assert (tmp_path / f"{sid}.prosody.wav").exists()


def test_streams_missing_rttm_is_input_error(corpus, preprocessed, tmp_path):
    sid = next(iter(corpus["truth"].values()))["session_id"]
    code = main(["streams", "--wav", str(preprocessed / f"{sid}.wav"),
                 "--rttm", str(tmp_path / "nope.rttm"),
                 "--outdir", str(tmp_path)])
    assert code == 4


def test_features_table_shape(corpus, feature_csv):
    names, rows = read_feature_csv(feature_csv)
    assert names == list(EG_ALL_NAMES)
    assert len(rows) == session_count(corpus)
    for values in rows.values():
        assert len(values) == len(EG_ALL_NAMES)  # nothing absent


def test_features_unknown_set_is_config_error(corpus, stream_dir, tmp_path):
    code = main(["features", "--manifest", str(corpus["manifest"]),
                 "--prosody-dir", str(stream_dir),
                 "--concat-dir", str(stream_dir),
                 "--set", "EG_EVERYTHING", "--out", str(tmp_path / "f.csv")])
    assert code == 3


# ---------------------------------------------------------------------------
# embed-import and diar-metrics

def test_embed_import_round_trip(tmp_path):
    src = tmp_path / "emb.jsonl"
    src.write_text(
        json.dumps({"session_id": "s1", "dim": 3,
                    "values": [[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]]}) + "\n")
    out = tmp_path / "emb.csv"
    assert main(["embed-import", "--in", str(src), "--dim", "3",
                 "--out", str(out)]) == 0
    names, rows = read_feature_csv(out)
    assert names == ["emb_000", "emb_001", "emb_002"]
    assert rows["s1"] == {"emb_000": 2.0, "emb_001": 3.0, "emb_002": 4.0}


def test_embed_import_dimension_error(tmp_path):
    src = tmp_path / "emb.jsonl"
    src.write_text(json.dumps({"session_id": "s1", "dim": 3,
                               "values": [1.0, 2.0, 3.0]}) + "\n")
    assert main(["embed-import", "--in", str(src), "--dim", "5",
                 "--out", str(tmp_path / "o.csv")]) == 4


def test_diar_metrics_identity(corpus, tmp_path, capsys):
    sid = next(iter(corpus["truth"].values()))["session_id"]
    rttm = corpus["root"] / "rttm" / f"{sid}.rttm"
    out = tmp_path / "scores.json"
    assert main(["diar-metrics", "--ref", str(rttm), "--hyp", str(rttm),
                 "--out", str(out)]) == 0
    scores = json.loads(out.read_text())
    assert scores["der"] == 0.0
    assert scores["jer"] == 0.0
    # without --out the scores go to stdout
    assert main(["diar-metrics", "--ref", str(rttm), "--hyp", str(rttm)]) == 0
    assert json.loads(capsys.readouterr().out)["der"] == 0.0


# ---------------------------------------------------------------------------
# grid-search

def subject_split(corpus):
    subjects = sorted(corpus["truth"])
    return ",".join(subjects[:8]), ",".join(subjects[8:])


def test_grid_search_cli_identity_adapter(corpus, tmp_path, monkeypatch):
    rttm_dir = corpus["root"] / "rttm"
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"gate_alpha": [0.0, 1.0]}))
    work = tmp_path / "scratch"
    monkeypatch.setenv("COGSPEECH_TMPDIR", str(work))
    tuning, validation = subject_split(corpus)
    out = tmp_path / "grid.csv"
    code = main(["grid-search", "--grid", str(grid),
                 "--manifest", str(corpus["manifest"]),
                 "--rttm-dir", str(rttm_dir),
                 "--adapter", f"cp {rttm_dir}/{{session_id}}.rttm {{output}}",
                 "--tuning-subjects", tuning,
                 "--validation-subjects", validation,
                 "--out", str(out), "--jobs", "2"])
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert float(rows[0]["tuning_der"]) == 0.0
    assert rows[0]["validation_der"] != ""
    # temp-dir override is honored: preprocessed cache lives under it
    assert any(work.rglob("*.wav"))


def test_grid_search_all_points_failing_exits_adapter_code(corpus, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"gate_alpha": [1.0]}))
    tuning, validation = subject_split(corpus)
    code = main(["grid-search", "--grid", str(grid),
                 "--manifest", str(corpus["manifest"]),
                 "--rttm-dir", str(corpus["root"] / "rttm"),
                 "--adapter", "false",
                 "--tuning-subjects", tuning,
                 "--validation-subjects", validation,
                 "--workdir", str(tmp_path / "w"),
                 "--out", str(tmp_path / "grid.csv")])
    assert code == 5


# ---------------------------------------------------------------------------
# cv / holdout / importance / report

def test_cv_report_schema(corpus, cv_json):
    payload = json.loads(cv_json.read_text())
    assert payload["target"] == {"level": 3, "name": "cerad_total",
                                 "kind": "regression"}
    assert len(payload["folds"]) == 5
    assert set(payload["summary"]) == {"r", "r2"}
    assert payload["n_sessions"] == 9  # development split only
    assert payload["majority_vote_config"].startswith("ridge")
    assert (cv_json.parent / "run_manifest.json").exists()


def test_cv_custom_grid_file(corpus, feature_csv, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([{"estimator": "ridge", "lam": 1.0}]))
    out = tmp_path / "cv.json"
    code = main(["cv", "--features", str(feature_csv),
                 "--manifest", str(corpus["manifest"]),
                 "--level", "1", "--target", "MMSE", "--kind", "regression",
                 "--grid", str(grid), "--out", str(out)])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["majority_vote_config"] == "ridge(lam=1.0), pca=passthrough"


def test_holdout_uses_voted_config(corpus, feature_csv, cv_json, tmp_path):
    out = tmp_path / "ho.json"
    code = main(["holdout", "--features", str(feature_csv),
                 "--manifest", str(corpus["manifest"]),
                 "--level", "3", "--target", "cerad_total",
                 "--kind", "regression", "--config-from", str(cv_json),
                 "--out", str(out)])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["n_holdout_sessions"] == 3
    assert "r" in payload["metrics"]
    assert payload["config"] == json.loads(
        cv_json.read_text())["majority_vote_config"]


def test_importance_ranking_csv(corpus, feature_csv, tmp_path):
    out = tmp_path / "imp.csv"
    code = main(["importance", "--features", str(feature_csv),
                 "--manifest", str(corpus["manifest"]),
                 "--level", "3", "--target", "mci", "--kind", "classification",
                 "--C", "1.0", "--out", str(out)])
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    mags = [abs(float(r["weight"])) for r in rows]
    assert mags == sorted(mags, reverse=True)
    assert {r["feature"] for r in rows} <= set(EG_ALL_NAMES)


def test_importance_needs_classification(corpus, feature_csv, tmp_path):
    code = main(["importance", "--features", str(feature_csv),
                 "--manifest", str(corpus["manifest"]),
                 "--level", "3", "--target", "cerad_total",
                 "--kind", "regression", "--out", str(tmp_path / "i.csv")])
    assert code == 3


def test_report_table(corpus, feature_csv, cv_json, tmp_path, capsys):
    ho = tmp_path / "ho.json"
    assert main(["holdout", "--features", str(feature_csv),
                 "--manifest", str(corpus["manifest"]),
                 "--level", "3", "--target", "cerad_total",
                 "--kind", "regression", "--config-from", str(cv_json),
                 "--out", str(ho)]) == 0
    outdir = tmp_path / "report"
    assert main(["report", "--cv", str(cv_json), "--holdout", str(ho),
                 "--out-dir", str(outdir)]) == 0
    with open(outdir / "hierarchy_table.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["Level-Target", "Input Test", "Feature", "Metric",
                       "DEV Set", "HO Set"]
    assert rows[1][0] == "L3-cerad_total"
    assert rows[1][5] != ""  # holdout column filled
    assert (outdir / "per_level_lines.csv").exists()
    assert "L3-cerad_total" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# exit-code scheme

def test_bad_flag_and_subcommand_are_config_errors(tmp_path):
    assert main(["qc", "--manifest", "m.csv", "--out", "o", "--nope"]) == 3
    assert main(["frobnicate"]) == 3


def test_missing_manifest_is_input_error(tmp_path):
    assert main(["qc", "--manifest", str(tmp_path / "missing.csv"),
                 "--out", str(tmp_path / "o.jsonl")]) == 4


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
