import csv
import json

import pytest

from conftest import write_json
from mvsnet import cli
from mvsnet.errors import NonFiniteLoss


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_params_table(capsys):
    code, out, _ = run(capsys, "params", "--d-view", 2048)
    assert code == 0
    assert "11,186,177" in out
    code, out, _ = run(capsys, "params", "--backbone", "tinyconv", "--d-view", 48)
    assert "15,194" in out
    code, _, err = run(capsys, "params", "--backbone", "lenet")
    assert code == 2 and "lenet" in err
    code, _, _ = run(capsys, "params")
    assert code == 2


def test_synth_validate_folds(tmp_path, capsys):
    spec = write_json(tmp_path / "spec.json", {
        "subjects_per_class": {"control": 5, "stroke": 5, "tia": 5},
        "image_side": 32, "missing_view_rate": 0.5, "seed": 2})
    code, out, _ = run(capsys, "synth", spec, tmp_path / "c")
    assert code == 0 and "15 subjects" in out
    code, out, _ = run(capsys, "validate", tmp_path / "c" / "manifest.json", "--check-files")
    assert code == 0
    assert "<- mirror(" in out and "exclusions: 0" in out
    code, out, _ = run(capsys, "folds", tmp_path / "c" / "manifest.json", "--k", 5, "--out", tmp_path / "f.json")
    assert code == 0
    assert json.loads((tmp_path / "f.json").read_text())["k"] == 5


def test_validate_clinical_shaped(tmp_path, capsys):
    from conftest import clinical_shaped_manifest
    from mvsnet.dataset import write_manifest

    manifest = clinical_shaped_manifest()
    manifest.root = tmp_path
    write_manifest(manifest, tmp_path / "m.json")
    code, out, _ = run(capsys, "validate", tmp_path / "m.json")
    assert code == 0
    lines = out.splitlines()
    assert "Control     121    109    120    110    117" in lines
    assert "Total       220    183    217    191    211" in lines


def test_unwritable_output_is_io_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    spec = write_json(tmp_path / "spec.json", {"subjects_per_class": {"control": 1}, "image_side": 16})
    assert run(capsys, "synth", spec, blocker / "out")[0] == 3


def test_exit_codes_for_bad_inputs(tmp_path, capsys):
    assert run(capsys, "validate", tmp_path / "missing.json")[0] == 3
    bad = write_json(tmp_path / "bad.json", {"schema_version": "1.0", "subjects": [{"id": "a", "label": "x", "views": {}}]})
    code, _, err = run(capsys, "validate", bad)
    assert code == 2 and "subjects/0/label" in err
    assert run(capsys, "synth", write_json(tmp_path / "s.json", {"sides": 3}), tmp_path / "o")[0] == 2
    cfg = write_json(tmp_path / "run.json", {"task": "binary", "backbone": {"name": "nope"}})
    assert run(capsys, "train", cfg)[0] == 2
    cfg = write_json(tmp_path / "run2.json", {"train": {"learning_rat": 1}})
    assert run(capsys, "train", cfg)[0] == 2
    assert run(capsys, "report", tmp_path)[0] == 2


def test_nonfinite_loss_exit_code(tmp_path, capsys, monkeypatch, tiny_cohort):
    root, _ = tiny_cohort

    def boom(*a, **k):
        raise NonFiniteLoss("loss is nan")

    monkeypatch.setattr(cli, "cross_validate", boom)
    cfg = write_json(tmp_path / "run.json", {"dataset": str(root / "manifest.json")})
    code, _, err = run(capsys, "train", cfg)
    assert code == 4 and "nan" in err


def test_seed_resolution(tmp_path, monkeypatch):
    cfg_path = write_json(tmp_path / "run.json", {"seed": 3, "dataset": "m.json", "train": {"max_epochs": 2}})
    cfg, base = cli.load_run_config(cfg_path)
    assert cfg.seed == cfg.train.seed == 3 and base == tmp_path
    monkeypatch.setenv("MVS_SEED", "11")
    cfg, _ = cli.load_run_config(cfg_path)
    assert cfg.train.seed == 11
    flags = cli.build_parser().parse_args(["train", str(cfg_path), "--seed", "5"])
    assert cli.load_run_config(cfg_path, flags)[0].seed == 5
    monkeypatch.setenv("MVS_SEED", "x")
    with pytest.raises(cli.ConfigError):
        cli.load_run_config(cfg_path)
    assert cli.RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_train_and_report(tmp_path, capsys, tiny_cohort):
    root, _ = tiny_cohort
    base = {
        "dataset": str(root / "manifest.json"),
        "backbone": {"name": "tinyconv", "d_view": 8},
        "train": {"batch_size": 8, "learning_rate": 1e-3, "max_epochs": 2, "early_stop_patience": 2,
                  "augment_target_per_class": None},
        "k": 3,
    }
    for variant in ("multi-view", "single-view"):
        cfg = write_json(tmp_path / f"{variant}.json", {**base, "variant": variant, "output": f"runs/{variant}"})
        code, out, _ = run(capsys, "train", cfg, "--seed", 4)
        assert code == 0 and "Sensitivity" in out
    runs = [tmp_path / "runs" / v for v in ("multi-view", "single-view")]
    code, out, _ = run(capsys, "report", *runs, "--out", tmp_path / "cmp")
    assert code == 0
    with open(tmp_path / "cmp" / "radar.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["variant"] for r in rows} == {"multi-view", "single-view"}
    assert (runs[0] / "report.txt").is_file() and (runs[0] / "curves.csv").is_file()
    info = json.loads((runs[0] / "run.json").read_text())
    assert info["config"]["seed"] == 4 and info["train"]["seed"] == 4
