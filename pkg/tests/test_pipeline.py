import csv
import dataclasses
import json
import logging
import shutil

import numpy as np
import pytest

from locksmith.circuits import random_netlist
from locksmith.cli import main
from locksmith.config import parse_config
from locksmith.gnn import ModelParams, load_checkpoint, predict, save_checkpoint
from locksmith.graph import VAL, load_dataset, split_loo
from locksmith.pipeline import (
    Layout,
    cmd_gen_dataset,
    cmd_report,
    instance_plan,
    load_report,
    verification_failed,
)

TINY = {
    "scheme": "ttlock",
    "designs": ["add4", "alu4", "cmp6"],
    "K": [4],
    "locks_per_setting": 2,
    "train": {"hidden": 16, "max_epochs": 30, "patience": 30, "num_roots": 200},
}


def _write(tmp_path, name="exp.json", **changes):
    doc = dict(TINY, **changes)
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg_path = _write(root)
    code = main(["run", "--config", str(cfg_path), "--out", str(root / "out")])
    return root, cfg_path, code


def test_run_produces_the_layout(tiny_run):
    root, _, code = tiny_run
    assert code in (0, 3)
    base = root / "out" / "ttlock"
    for d in TINY["designs"]:
        assert (base / d / "original.bench").is_file()
        insts = sorted(p.name for p in (base / d).iterdir() if p.is_dir())
        assert len(insts) == 2
        for inst in insts:
            assert {p.name for p in (base / d / inst).iterdir()} >= {
                "locked.bench", "labels.csv", "meta.json", "secret.json"}
            att = base / "attack" / d / inst
            assert (att / "predictions.csv").is_file() and (att / "rectification.csv").is_file()
        assert (base / "models" / d / "checkpoint.json.gz").is_file()
    assert (base / "report.json").is_file() and (base / "report.csv").is_file()
    assert json.loads((base / "census.json").read_text())["instances"] == 6


def test_report_accuracy_is_the_confusion_trace(tiny_run):
    root = tiny_run[0]
    report = load_report(root / "out" / "ttlock" / "report.json")
    for d in report["designs"]:
        for stage in ("pre_rectification", "post_rectification"):
            conf = np.array(d[stage]["confusion"])
            assert d[stage]["accuracy"] == pytest.approx(np.trace(conf) / conf.sum())
    s = report["summary"]
    assert s["post_accuracy"] == pytest.approx(
        np.mean([d["post_rectification"]["accuracy"] for d in report["designs"]]))
    assert s["instances"] == 6 and s["designs"] == 3


def test_exit_code_matches_verification(tiny_run):
    root, _, code = tiny_run
    report = load_report(root / "out" / "ttlock" / "report.json")
    assert code == (3 if verification_failed(report) else 0)


def test_history_and_model_selection(tiny_run):
    root, cfg_path, _ = tiny_run
    base = root / "out" / "ttlock"
    cfg = parse_config(cfg_path.read_text())
    ds = load_dataset(base / "dataset")
    for fold in cfg.resolved_folds():
        with open(base / "models" / fold.test / "history.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert 1 <= len(rows) <= TINY["train"]["max_epochs"]
        assert [int(r["epoch"]) for r in rows] == list(range(1, len(rows) + 1))
        model = load_checkpoint(base / "models" / fold.test / "checkpoint.json.gz")
        split = split_loo(ds, fold.test, fold.val)
        hits = total = 0
        for g, s in zip(split.graphs, split.splits):
            if s == VAL:
                cls, _ = predict(model, g)
                hits += int((cls == g.labels).sum())
                total += len(cls)
        saved = hits / total
        assert saved == pytest.approx(max(float(r["val_accuracy"]) for r in rows))
        assert saved >= float(rows[-1]["val_accuracy"])


def test_gen_dataset_is_byte_deterministic(tmp_path):
    cfg = parse_config(json.dumps(TINY))
    a = cmd_gen_dataset(cfg.with_overrides(out=str(tmp_path / "a")))
    b = cmd_gen_dataset(cfg.with_overrides(out=str(tmp_path / "b")))
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    for d in TINY["designs"]:
        for inst in (a.parent / d).iterdir():
            if inst.is_dir():
                other = b.parent / d / inst.name
                for name in ("locked.bench", "labels.csv", "meta.json", "secret.json"):
                    assert (inst / name).read_bytes() == (other / name).read_bytes()


def test_census_skips_too_small_designs():
    designs = {f"d{i}": random_netlist(40, 120, seed=i) for i in range(3)}
    designs["small"] = random_netlist(20, 120, seed=9)
    cfg = parse_config(json.dumps({"scheme": "antisat", "designs": ["add4", "alu4", "cmp6", "c17"],
                                   "K": [8, 16, 32, 64], "locks_per_setting": 2}))
    plan = instance_plan(_named(cfg, list(designs)), designs)
    assert len(plan) == 30
    assert sum(s.design == "small" for s in plan) == 6


def _named(cfg, names):
    # rename the configured designs so the plan walks the synthetic ones
    return dataclasses.replace(cfg, designs=tuple(
        dataclasses.replace(d, name=nm) for d, nm in zip(cfg.designs, names)))


def test_zero_locks_gives_empty_dataset(tmp_path, caplog):
    cfg = parse_config(json.dumps(dict(TINY, locks_per_setting=0)))
    with caplog.at_level(logging.WARNING):
        cmd_gen_dataset(cfg.with_overrides(out=str(tmp_path)))
    assert "empty dataset" in caplog.text
    base = Layout(tmp_path, cfg.scheme).base
    assert json.loads((base / "census.json").read_text())["instances"] == 0


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "scheme": "ttlock",\n  "designs": ["add4", "nope", "cmp6"],\n  "K": [4]\n}')
    assert main(["gen-dataset", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "bad.json:3: unknown built-in design 'nope'" in capsys.readouterr().err


def test_attack_without_checkpoint_exit_code(tmp_path, capsys):
    cfg_path = _write(tmp_path)
    assert main(["gen-dataset", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 0
    assert main(["attack", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
    assert "missing checkpoint" in capsys.readouterr().err
    assert main(["attack", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                 "--design", "zzz"]) == 1


def test_all_design_checkpoint_is_a_negative_control(tiny_run, tmp_path):
    root, cfg_path, _ = tiny_run
    out = tmp_path / "out"
    shutil.copytree(root / "out", out)
    base = out / "ttlock"
    for d in TINY["designs"]:
        ckpt = base / "models" / d / "checkpoint.json.gz"
        model = load_checkpoint(ckpt)
        zero = {k: np.zeros_like(v) for k, v in model.params.as_dict().items()}
        zero["b_out"][model.class_names.index("design")] = 1.0
        model.params = ModelParams.from_dict(zero)
        save_checkpoint(model, ckpt)
    assert main(["attack", "--config", str(cfg_path), "--out", str(out)]) == 3
    report = load_report(base / "report.json")
    assert report["summary"]["removal_success"] == 0.0
    assert all(i["error"] for d in report["designs"] for i in d["instances"])
    for d in TINY["designs"]:
        for inst in (base / "attack" / d).iterdir():
            assert not (inst / "recovered.bench").exists()


def test_report_aggregation(tiny_run, tmp_path, capsys):
    path = tiny_run[0] / "out" / "ttlock" / "report.json"
    one = cmd_report([path])
    summary = load_report(path)["summary"]
    assert one["average"] == pytest.approx({k: float(v) for k, v in summary.items()})
    assert one["reports"][0]["training_seconds"] > 0

    other = json.loads(path.read_text())
    other["summary"] = dict(summary, post_accuracy=0.5, removal_success=0.25)
    second = tmp_path / "report.json"
    second.write_text(json.dumps(other))
    two = cmd_report([path, second])
    assert two["average"]["post_accuracy"] == pytest.approx((summary["post_accuracy"] + 0.5) / 2)
    assert two["average"]["removal_success"] == pytest.approx(
        (summary["removal_success"] + 0.25) / 2)

    dest = tmp_path / "agg.json"
    assert main(["report", str(path), str(second), "--output", str(dest)]) == 0
    assert json.loads(dest.read_text())["average"] == pytest.approx(two["average"])

    with pytest.raises(ValueError):
        cmd_report([])
    other["schema_version"] = 99
    second.write_text(json.dumps(other))
    with pytest.raises(ValueError, match="schema"):
        cmd_report([second])
    assert main(["report", str(second)]) == 1
    capsys.readouterr()
