import json

import pytest

from locksmith.config import ConfigError, ExperimentConfig, Fold, load_config, parse_config
from locksmith.gnn import TrainConfig
from locksmith.locking import Scheme

BASE = {"scheme": "antisat", "designs": ["add4", "alu4", "cmp6"], "K": [4, 8]}


def _text(**changes):
    doc = dict(BASE)
    doc.update(changes)
    return json.dumps(doc, indent=2)


def test_minimal_config_defaults():
    cfg = parse_config(_text())
    assert cfg.scheme is Scheme.ANTISAT
    assert cfg.design_names == ["add4", "alu4", "cmp6"]
    assert cfg.K == (4, 8) and cfg.h == (0,)
    assert cfg.train == TrainConfig()
    assert cfg.train.hidden == 512 and cfg.train.learning_rate == 0.01
    assert cfg.train.dropout == 0.1 and cfg.train.max_epochs == 2000


def test_default_folds_rotate():
    cfg = parse_config(_text())
    assert cfg.resolved_folds() == (Fold("add4", "alu4"), Fold("alu4", "cmp6"), Fold("cmp6", "add4"))


def test_explicit_folds_and_overrides():
    cfg = parse_config(_text(folds=[{"test": "cmp6", "val": "add4"}], train={"seed": 3}))
    assert cfg.resolved_folds() == (Fold("cmp6", "add4"),)
    over = cfg.with_overrides(seed=9, out="/tmp/x", jobs=2)
    assert (over.seed, over.train.seed, over.out, over.jobs) == (9, 9, "/tmp/x", 2)
    assert cfg.seed == 0  # frozen original untouched
    with pytest.raises(ConfigError):
        cfg.with_overrides(jobs=0)


def test_config_echo_round_trips():
    cfg = parse_config(_text(h=[0], locks_per_setting=3))
    again = parse_config(json.dumps(cfg.to_dict()))
    assert again == cfg
    assert "out" not in cfg.to_dict(include_out=False)


@pytest.mark.parametrize("text, line, fragment", [
    ('{\n  "scheme": "antisat",\n  "designs": ["add4", "alu4", "cmp6"],\n  "K": [8, "x"]\n}',
     4, "K/1: 'x' is not of type 'integer'"),
    ('{\n  "scheme": "antisat",\n  "designs": [\n    "add4",\n    "nope",\n    "cmp6"\n  ],\n  "K": [8]\n}',
     5, "unknown built-in design 'nope'"),
    ('{\n  "scheme": "rot13",\n  "designs": ["add4", "alu4", "cmp6"],\n  "K": [8]\n}',
     2, "scheme"),
    ('{\n  "scheme": "antisat",\n  "designs": ["add4", "alu4", "cmp6"],\n  "K": [7]\n}',
     4, "even"),
    ('{\n  "scheme": "ttlock",\n  "designs": ["add4", "alu4", "cmp6"],\n  "K": [8],\n  "h": [2]\n}',
     5, "h = 0"),
    ('{\n  "scheme": "sfll_hd",\n  "designs": ["add4", "alu4", "cmp6"],\n  "K": [4],\n  "h": [6]\n}',
     5, "exceeds"),
    ('{\n  "scheme": "antisat",\n  "designs": ["add4", "alu4"],\n  "K": [8]\n}',
     3, "at least 3"),
    ('{\n  "scheme": "antisat",\n  "designs": ["add4", "alu4", "cmp6"],\n  "K": [8],\n  "colour": 1\n}',
     None, "colour"),
    ('{\n  "scheme": "antisat",\n  "designs": ["add4", "alu4", "cmp6"],\n  "K": [8],\n'
     '  "folds": [{"test": "add4", "val": "add4"}]\n}', 5, "must differ"),
    ('{\n  "scheme": "antisat",\n  "designs": ["add4", "alu4", "cmp6"],\n  "K": [8],\n'
     '  "train": {"hidden": 0}\n}', 5, "train/hidden"),
    ('{\n  "scheme": "antisat",\n  "designs": ["add4", "alu4", "cmp6"]\n  "K": [8]\n}',
     4, "invalid JSON"),
])
def test_errors_point_at_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "exp.json")
    assert fragment in str(info.value)
    assert info.value.line == line
    if line:
        assert str(info.value).startswith(f"exp.json:{line}: ")


def test_bench_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "mine.bench").write_text("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)\n")
    doc = dict(BASE, designs=["add4", "alu4", {"name": "mine", "path": "mine.bench"}])
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(doc))
    cfg = load_config(path)
    assert cfg.designs[2].path == str(tmp_path / "mine.bench")
    doc["designs"][2]["path"] = "missing.bench"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(path)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")


def test_train_config_guards():
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.5)
    assert isinstance(parse_config(_text()), ExperimentConfig)
