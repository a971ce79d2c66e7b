import json
import subprocess
import sys
import wave

import numpy as np
import pytest

from lvdsk.cli import main
from lvdsk.features import read_features


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "corp"), "--M", "3", "--N", "3", "--reps", "4",
                 "--dim", "5", "--seed", "7", "--check"]) == 0
    return root


@pytest.fixture(scope="module")
def bank_path(workspace):
    out = workspace / "bank.json"
    assert main(["train", str(workspace / "corp" / "corpus.jsonl"), "--family", "tmm",
                 "--out", str(out), "--seed", "3", "--check"]) == 0
    return out


def _wav(path, n=16000, seed=0):
    pcm = (np.random.default_rng(seed).normal(0, 0.1, n) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(pcm.tobytes())


def test_mfcc_reports_shape_and_is_deterministic(tmp_path, capsys):
    _wav(tmp_path / "a.wav")
    assert main(["mfcc", str(tmp_path / "a.wav"), str(tmp_path / "a.lvf"), "--check"]) == 0
    assert "D=38 T=99" in capsys.readouterr().out
    first = (tmp_path / "a.lvf").read_bytes()
    assert main(["mfcc", str(tmp_path / "a.wav"), str(tmp_path / "a.lvf")]) == 0
    assert (tmp_path / "a.lvf").read_bytes() == first
    sidecar = json.loads((tmp_path / "a.lvf.json").read_text())
    assert sidecar["seed"] == 0 and sidecar["mfcc"]["frame_len"] == 0.02


def test_mfcc_corrupt_header(tmp_path, capsys):
    (tmp_path / "bad.wav").write_bytes(b"RIFF\x10\x00\x00\x00WAVEjunk")
    assert main(["mfcc", str(tmp_path / "bad.wav"), str(tmp_path / "o.lvf")]) != 0
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "o.lvf").exists()


def test_train_defaults(bank_path, workspace):
    bank = json.loads(bank_path.read_text())
    assert bank["family"] == "student_t"
    cells = [c for row in bank["cells"] for c in row]
    assert all(len(c["weights"]) == 8 for c in cells)
    assert all(c["dof"] is not None and len(c["dof"]) == 8 for c in cells)
    assert bank["meta"]["seed"] == 3 and bank["meta"]["train"]["n_components"] == 8
    again = workspace / "bank2.json"
    assert main(["train", str(workspace / "corp" / "corpus.jsonl"), "--family", "tmm",
                 "--out", str(again), "--seed", "3"]) == 0
    assert again.read_text() == bank_path.read_text()


def test_train_gmm_has_no_dof(workspace):
    out = workspace / "gmm.json"
    assert main(["train", str(workspace / "corp" / "corpus.jsonl"), "--family", "gmm",
                 "--components", "2", "--out", str(out)]) == 0
    bank = json.loads(out.read_text())
    assert all(c["dof"] is None and len(c["weights"]) == 2 for row in bank["cells"] for c in row)


def test_train_missing_cell(workspace, tmp_path):
    recs = [json.loads(l) for l in (workspace / "corp" / "corpus.jsonl").read_text().splitlines()]
    recs = [r for r in recs if not (r["speaker"] == "S2" and r["keyword"] == "V3")]
    for r in recs:
        r["path"] = str(workspace / "corp" / r["path"])
    (tmp_path / "m.jsonl").write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert main(["train", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "b.json")]) == 2


def test_infer(workspace, bank_path, capsys):
    mixes = workspace / "mixes"
    assert main(["mix", "--corpus", str(workspace / "corp" / "corpus.jsonl"), "--out", str(mixes),
                 "--check"]) == 0
    recs = [json.loads(l) for l in (mixes / "mixtures.jsonl").read_text().splitlines()]
    rec = recs[0]
    report_path = workspace / "report.json"
    capsys.readouterr()
    assert main(["infer", str(mixes / rec["path"]), "--bank", str(bank_path), "--out", str(report_path),
                 "--oracle-speakers", "S1,S2", "--policy", "known:2", "--check"]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 2
    report = json.loads(report_path.read_text())
    assert {p["speaker"] for p in report["pairs"]} <= {"S1", "S2"}
    assert len(report["pairs"]) == 2
    ll = report["loglik"]
    assert all(b >= a - 1e-8 * abs(a) for a, b in zip(ll, ll[1:]))
    assert set(report) >= {"beta_star", "delta_star", "jpm", "pairs", "loglik"}
    assert report["config"]["seed"] == 0


def test_infer_index_and_keyword_oracle(workspace, bank_path, tmp_path):
    lvf = next((workspace / "corp").glob("*.lvf"))
    out = tmp_path / "r.json"
    assert main(["infer", str(lvf), "--bank", str(bank_path), "--out", str(out),
                 "--oracle-keywords", "2", "--policy", "known:1"]) == 0
    report = json.loads(out.read_text())
    assert [p["keyword"] for p in report["pairs"]] == ["V2"]
    assert main(["infer", str(lvf), "--bank", str(bank_path), "--oracle-speakers", "S9"]) == 2


def test_infer_dimension_mismatch(tmp_path, bank_path):
    _wav(tmp_path / "a.wav", 4000)
    assert main(["infer", str(tmp_path / "a.wav"), "--bank", str(bank_path)]) == 2


def test_mix_full_grid(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "c"), "--M", "10", "--N", "10", "--reps", "1",
                 "--dim", "3", "--components", "1"]) == 0
    assert main(["mix", "--corpus", str(tmp_path / "c" / "corpus.jsonl"), "--out", str(tmp_path / "m"),
                 "--tasks", "all", "--M", "10", "--N", "10"]) == 0
    recs = (tmp_path / "m" / "mixtures.jsonl").read_text().splitlines()
    assert len(recs) == 2475
    r = json.loads(recs[0])
    assert set(r) >= {"path", "pairs", "rpr_db", "overlap", "seed"}
    assert read_features(tmp_path / "m" / r["path"]).dim == 3


def test_waveform_mix_records(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "w"), "--M", "2", "--N", "2", "--reps", "1",
                 "--mode", "waveform"]) == 0
    assert main(["mix", "--corpus", str(tmp_path / "w" / "corpus.jsonl"), "--out", str(tmp_path / "m"),
                 "--check"]) == 0
    recs = [json.loads(l) for l in (tmp_path / "m" / "mixtures.jsonl").read_text().splitlines()]
    assert len(recs) == 3
    assert all(abs(r["rpr_db"]) <= 0.5 and r["overlap"] >= 0.9 for r in recs)
    assert all(r["path"].endswith(".wav") for r in recs)


def test_eval_smoke_and_config_precedence(workspace, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "train": {"n_components": 3, "n_restarts": 1}, "em": {"max_iters": 50}}))
    out = tmp_path / "ev"
    assert main(["eval", "--corpus", str(workspace / "corp" / "corpus.jsonl"), "--out", str(out),
                 "--families", "gmm,tmm", "--config", str(cfg), "--components", "2", "--check"]) == 0
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header.endswith("at_least_one_speaker,both_speakers,at_least_one_keyword,"
                           "both_keywords,at_least_one_pair,both_pairs")
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["seed"] == 5
    assert echoed["train"]["n_components"] == 2
    assert echoed["train"]["n_restarts"] == 1
    assert echoed["em"]["max_iters"] == 50
    assert (out / "results.txt").read_text().startswith("% recognition accuracy")
    rows = (out / "results.csv").read_text().splitlines()[1:]
    assert len(rows) == 2 * 3 * 3


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "lvdsk.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "0.1.0"
