import csv
import hashlib
import json

import pytest

from alseg.cli import main
from alseg.config import OptimConfig

from conftest import tiny_config


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(cfg.to_json())
    return str(path)


def _tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("gen")
    cfg = _write(tmp, tiny_config())
    assert main(["generate", "--config", cfg, "--out", str(tmp / "d1")]) == 0
    return tmp, cfg


def test_generate_is_reproducible(generated, tmp_path):
    tmp, cfg = generated
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "d2"), "--workers", "2"]) == 0
    assert _tree_hash(tmp / "d1") == _tree_hash(tmp_path / "d2")
    manifest = json.loads((tmp / "d1" / "manifest.json").read_text())
    assert len(manifest["train_ids"]) == 20 and len(manifest["val_ids"]) == 4


def test_missing_config_is_exit_2(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "nope.json")]) == 2


def test_unknown_key_is_exit_2(tmp_path):
    d = tiny_config().to_dict()
    d["optim"]["learning_rate"] = 0.1
    (tmp_path / "bad.json").write_text(json.dumps(d))
    assert main(["run", "--config", str(tmp_path / "bad.json")]) == 2


def test_invalid_value_is_exit_2(tmp_path):
    d = tiny_config().to_dict()
    d["labeled_fraction"] = 0.0
    (tmp_path / "bad.json").write_text(json.dumps(d))
    assert main(["run", "--config", str(tmp_path / "bad.json")]) == 2


def test_missing_dataset_is_exit_3(tmp_path):
    cfg = _write(tmp_path, tiny_config(data_dir=str(tmp_path / "absent")))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "runs")]) == 3


def test_divergence_is_exit_4(generated, tmp_path):
    tmp, _ = generated
    cfg = _write(tmp_path, tiny_config(mode="supervised", optim=OptimConfig(lr=1e12), iters_per_epoch=10))
    assert main(["run", "--config", cfg, "--data", str(tmp / "d1"), "--out", str(tmp_path / "runs")]) == 4
    assert (tmp_path / "runs" / "tiny" / "cycle0" / "diverged.npz").is_file()


def test_run_seed_sweep_and_report(generated, tmp_path, capsys):
    tmp, _ = generated
    runs = tmp_path / "runs"
    cfg = _write(tmp_path, tiny_config())
    ref = _write(tmp_path, tiny_config(name="ref", mode="supervised", labeled_fraction=1.0), "ref.json")
    assert main(["run", "--config", cfg, "--data", str(tmp / "d1"), "--out", str(runs), "--seeds", "0,1"]) == 0
    assert main(["run", "--config", ref, "--data", str(tmp / "d1"), "--out", str(runs)]) == 0
    for name in ("tiny_s0", "tiny_s1", "ref"):
        meta = json.loads((runs / name / "run.json").read_text())
        assert meta["status"] == "complete"
        assert (runs / name / "config.json").is_file()

    out = tmp_path / "report"
    assert main(["report", str(runs / "tiny_s0"), str(runs / "tiny_s1"), "--out", str(out)]) == 0
    assert (out / "comparison.png").stat().st_size > 0
    with open(out / "comparison.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 6
    assert not (out / "efficiency.csv").exists()

    args = ["report", str(runs / "tiny_s0"), str(runs / "ref"), "--out", str(out), "--reference", str(runs / "ref")]
    assert main(args) == 0
    with open(out / "efficiency.csv", newline="") as fh:
        rows = {r["run"]: r for r in csv.DictReader(fh)}
    assert rows["ref"]["fraction_for_95pct"] == "1.0"
    assert "95% of reference" in capsys.readouterr().out


def test_report_without_runs_is_exit_3(tmp_path):
    assert main(["report", str(tmp_path), "--out", str(tmp_path / "r")]) == 3
