import json
from pathlib import Path

import pytest
import yaml

from adsum.cli import main
from adsum.config import CACHE_ENV, RunConfig, load_config
from adsum.dataset import load_manifest
from adsum.errors import AdsumError

SYNTH_FLAGS = ["--visual-backend", "mean-pixel", "--audio-backend", "rms-bands", "--attention", "row-local"]


@pytest.fixture(scope="module")
def built(fixture_set, tmp_path_factory):
    raw, pairs = fixture_set
    out = tmp_path_factory.mktemp("built")
    assert main(["build-dataset", "--raw", str(raw), "--out", str(out / "manifest.json")]) == 0
    return out / "manifest.json", raw, pairs


def _subset_raw(raw: Path, n: int, dst: Path, drop_file=None) -> Path:
    entries = json.loads(raw.read_text())[:n]
    for e in entries:
        for side in ("long", "short"):
            for key in ("file", "probabilities"):
                e[side][key] = str(raw.parent / e[side][key])
    if drop_file:
        entries[-1]["long"]["file"] = str(dst / "nowhere.avi")
    path = dst / "raw.json"
    path.write_text(json.dumps(entries))
    return path


def test_build_dataset_recovers_construction(built):
    manifest, raw, pairs = built
    loaded = {p.pair_id: p for p in load_manifest(manifest)}
    truth = json.loads((raw.parent / "truth.json").read_text())
    for pid, mapping in truth.items():
        assert loaded[pid].mapping.as_dict() == {int(k): v for k, v in mapping.items()}
    folds = json.loads(manifest.with_name("folds.json").read_text())
    assert sorted(x for f in folds["folds"] for x in f) == sorted(loaded)
    review = json.loads(manifest.with_name("manifest.review.json").read_text())
    assert review["flagged"] == []


def test_sweep_writes_one_manifest_per_threshold(fixture_set, tmp_path):
    raw = _subset_raw(fixture_set[0], 2, tmp_path)
    assert main(["build-dataset", "--raw", str(raw), "--out", str(tmp_path / "m.json"), "--sweep",
                 "--folds", "2"]) == 0
    counts = []
    for t in ("0.1", "0.3", "0.5"):
        pairs = load_manifest(tmp_path / f"m.t{t}.json")
        counts.append(sum(len(p.long.shots) for p in pairs))
    assert counts[0] >= counts[1] >= counts[2]
    assert not (tmp_path / "m.json").exists()


def test_missing_video_writes_nothing(fixture_set, tmp_path, capsys):
    raw = _subset_raw(fixture_set[0], 2, tmp_path, drop_file=True)
    assert main(["build-dataset", "--raw", str(raw), "--out", str(tmp_path / "m.json"), "--folds", "2"]) == 1
    assert "missing video file" in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()
    assert not (tmp_path / "folds.json").exists()


@pytest.fixture(scope="module")
def trained(built, tmp_path_factory):
    manifest = built[0]
    root = tmp_path_factory.mktemp("run")
    common = ["--manifest", str(manifest), "--cache-dir", str(root / "cache"), "--out", str(root / "out"),
              *SYNTH_FLAGS, "--epochs", "20"]
    for cmd in ("extract", "train", "predict", "clip", "evaluate"):
        assert main([cmd, *common]) == 0, cmd
    return root, common


def test_pipeline_outputs(trained):
    root, _ = trained
    out = root / "out"
    cuts = sorted((out / "cuts").glob("*.json"))
    assert len(cuts) == 10
    for c in cuts:
        doc = json.loads(c.read_text())
        assert doc["total_s"] >= 15.0
        starts = [s["start_frame"] for s in doc["segments"]]
        assert starts == sorted(starts)
    report = json.loads((out / "report.json").read_text())
    assert len(report["per_video"]) == 10
    assert report["kendall_variant"] == "tau-b"
    assert json.loads((out / "extract_report.json").read_text())["silent_audio"] == []


def test_predict_is_reproducible(trained):
    root, common = trained
    before = {p.name: p.read_bytes() for p in (root / "out" / "scores").glob("*.json")}
    assert main(["predict", *common]) == 0
    after = {p.name: p.read_bytes() for p in (root / "out" / "scores").glob("*.json")}
    assert before == after and len(before) == 10


def test_fingerprint_mismatch_is_refused(trained, capsys):
    root, common = trained
    assert main(["predict", *common, "--budget", "10"]) == 1
    assert "fingerprint" in capsys.readouterr().err


def test_missing_weights_exit_code(trained, tmp_path, monkeypatch):
    root, common = trained
    monkeypatch.setenv("TORCH_HOME", str(tmp_path))
    args = ["extract", *common, "--visual-backend", "swin3d_b", "--fusion", "visual_only",
            "--cache-dir", str(tmp_path / "c"), "--pairs", "p000"]
    assert main(args) == 2


def test_unknown_pair_id(trained):
    _, common = trained
    assert main(["predict", *common, "--pairs", "nope"]) == 1


def test_cross_validation_command(trained):
    root, common = trained
    assert main(["evaluate", *common, "--cv", "--epochs", "3", "--positional"]) == 0
    rep = json.loads((root / "out" / "cv_report.json").read_text())
    assert sorted(r["pair_id"] for r in rep["per_video"]) == [f"p{i:03d}" for i in range(10)]
    assert "positional" in rep["per_video"][0]


class TestConfig:
    def test_precedence(self, tmp_path):
        (tmp_path / "c.yaml").write_text(yaml.safe_dump({"epochs": 7, "alpha": 0.2, "cache_dir": "cc"}))
        cfg = load_config(tmp_path / "c.yaml", env={})
        assert (cfg.epochs, cfg.alpha, cfg.cache_dir) == (7, 0.2, str(tmp_path / "cc"))
        cfg = load_config(tmp_path / "c.yaml", env={CACHE_ENV: "/env/cache"})
        assert cfg.cache_dir == "/env/cache"
        cfg = load_config(tmp_path / "c.yaml", {"epochs": 9, "cache_dir": "/flag", "alpha": None},
                          env={CACHE_ENV: "/env/cache"})
        assert (cfg.epochs, cfg.alpha, cfg.cache_dir) == (9, 0.2, "/flag")

    def test_json_and_unknown_keys(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"fusion_mode": "late"}))
        assert load_config(tmp_path / "c.json", env={}).fusion_mode == "late"
        (tmp_path / "bad.json").write_text(json.dumps({"epoch": 3}))
        with pytest.raises(AdsumError):
            load_config(tmp_path / "bad.json", env={})

    def test_fingerprint_ignores_locations(self):
        a = RunConfig(cache_dir="/a", output_dir="/x", manifest="m1.json")
        b = RunConfig(cache_dir="/b", output_dir="/y", manifest="m2.json")
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != RunConfig(epochs=51).fingerprint()

    def test_defaults(self):
        cfg = RunConfig()
        assert (cfg.stride, cfg.hws, cfg.fusion_mode, cfg.loss, cfg.epochs, cfg.batch_size,
                cfg.learning_rate, cfg.budget_seconds, cfg.folds) == (12, 3, "early", "bce", 50, 1, 0.001, 15.0, 5)
