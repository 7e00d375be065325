import csv
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from locksmith.circuits import SMALL_DESIGNS, load_design, random_netlist
from locksmith.locking import Label, LockConfig, Scheme, lock
from locksmith.netlist import fanin_cone
from locksmith.postprocess import (
    Prediction,
    RectificationError,
    infer_protected_inputs,
    rectify,
    rectify_antisat,
    rectify_sfll,
    write_rectification_log,
)

SFLL_SCHEMES = st.sampled_from([Scheme.TTLOCK, Scheme.SFLL_HD])


def _locked(scheme, seed, design=None, K=8, h=None):
    n = load_design(design) if design else random_netlist(12, 60, seed=seed)
    if h is None:
        h = 0 if scheme is not Scheme.SFLL_HD else seed % 3
    return lock(n, LockConfig(scheme, K, h=h, seed=seed))


def _oracle(locked):
    return Prediction(locked.info["scheme"], dict(locked.labels))


@given(st.integers(0, 10_000), st.sampled_from(list(Scheme)))
def test_oracle_labels_are_a_fixpoint(seed, scheme):
    locked = _locked(scheme, seed)
    res = rectify(locked.netlist, _oracle(locked))
    assert res.prediction.classes == locked.labels
    assert res.log == []


@given(st.integers(0, 10_000), st.sampled_from(list(Scheme)), st.data())
def test_rectify_is_idempotent(seed, scheme, data):
    locked = _locked(scheme, seed)
    classes = dict(locked.labels)
    choices = sorted({Label.DESIGN, *[c for c in classes.values()]}, key=lambda c: c.value)
    for g in data.draw(st.lists(st.sampled_from(sorted(classes)), max_size=6, unique=True)):
        classes[g] = data.draw(st.sampled_from(choices))
    pred = Prediction(locked.info["scheme"], classes)
    try:
        once = rectify(locked.netlist, pred)
    except RectificationError:
        return  # every RESTORE prediction erased
    twice = rectify(locked.netlist, once.prediction)
    assert twice.prediction.classes == once.prediction.classes
    assert once.iterations <= len(locked.netlist.gates) + 1


def test_antisat_drops_keyless_predictions():
    locked = _locked(Scheme.ANTISAT, 3, design="alu4")
    n = locked.netlist
    splice = n.by_name[locked.info["integration_gates"][0]]
    design_side = next(f for f in splice.fanin if locked.labels[f] is Label.DESIGN)
    victims = [design_side] + [f for f in n.by_name[design_side].fanin if f in n.by_name][:1]
    assert len(victims) == 2
    classes = dict(locked.labels)
    for v in victims:
        classes[v] = Label.ANTISAT
    res = rectify_antisat(n, Prediction(Scheme.ANTISAT, classes))
    assert res.prediction.classes == locked.labels
    assert {row[0] for row in res.log} == set(victims)
    assert {row[3] for row in res.log} == {"antisat_no_key"}


@given(st.integers(0, 10_000))
def test_antisat_and_tree_node_is_reabsorbed(seed):
    locked = _locked(Scheme.ANTISAT, seed)
    n = locked.netlist
    inner = [g.name for g in n.gates if locked.labels[g.name] is Label.ANTISAT
             and g.gtype.value in ("AND", "NOT")]
    victim = random.Random(seed).choice(inner)
    classes = dict(locked.labels)
    classes[victim] = Label.DESIGN
    res = rectify_antisat(n, Prediction(Scheme.ANTISAT, classes))
    assert res.prediction.classes == locked.labels


def test_scheme_mismatch():
    locked = _locked(Scheme.TTLOCK, 0)
    with pytest.raises(RectificationError):
        rectify_antisat(locked.netlist, _oracle(locked))
    anti = _locked(Scheme.ANTISAT, 0)
    with pytest.raises(RectificationError):
        rectify_sfll(anti.netlist, _oracle(anti))


@given(st.integers(0, 10_000), SFLL_SCHEMES)
def test_protected_inputs_match_metadata(seed, scheme):
    locked = _locked(scheme, seed)
    xs = infer_protected_inputs(locked.netlist, _oracle(locked))
    assert xs == set(locked.info["protected_inputs"])


def test_empty_restore_set_is_an_error():
    locked = _locked(Scheme.TTLOCK, 1)
    classes = {g: (Label.DESIGN if c is Label.RESTORE else c) for g, c in locked.labels.items()}
    pred = Prediction(Scheme.TTLOCK, classes)
    with pytest.raises(RectificationError, match="RESTORE"):
        infer_protected_inputs(locked.netlist, pred)
    with pytest.raises(RectificationError):
        rectify_sfll(locked.netlist, pred)


@given(st.integers(0, 10_000), SFLL_SCHEMES)
def test_spurious_restore_only_adds_known_inputs(seed, scheme):
    locked = _locked(scheme, seed)
    base = infer_protected_inputs(locked.netlist, _oracle(locked))
    perturb = sorted(g for g, c in locked.labels.items() if c is Label.PERTURB)
    classes = dict(locked.labels)
    for g in random.Random(seed).sample(perturb, min(3, len(perturb))):
        classes[g] = Label.RESTORE
    grown = infer_protected_inputs(locked.netlist, Prediction(scheme, classes))
    assert grown == base


@given(st.integers(0, 10_000), SFLL_SCHEMES)
def test_design_gates_fed_by_unprotected_inputs_are_dropped(seed, scheme):
    locked = _locked(scheme, seed)
    n = locked.netlist
    xs = set(locked.info["protected_inputs"])
    outside = [g.name for g in n.gates if locked.labels[g.name] is Label.DESIGN
               and fanin_cone(n, g.id)[1] - xs]
    classes = dict(locked.labels)
    for g in random.Random(seed).sample(outside, min(4, len(outside))):
        classes[g] = Label.PERTURB
    res = rectify_sfll(n, Prediction(scheme, classes))
    assert res.prediction.classes == locked.labels
    assert all(row[3] == "P:not_protected_only" for row in res.log)


def test_perturb_gates_mispredicted_design_are_recovered():
    misses = 0
    for seed in range(100):
        scheme = Scheme.TTLOCK if seed % 2 else Scheme.SFLL_HD
        locked = _locked(scheme, seed, K=8, h=0 if seed % 2 else 1 + seed % 3)
        n = locked.netlist
        # popcount / comparator internals: PERTURB gates with PERTURB gate fanins
        inner = [g.name for g in n.gates if locked.labels[g.name] is Label.PERTURB
                 and any(locked.labels.get(f) is Label.PERTURB for f in g.fanin)
                 and g.name not in locked.info["integration_gates"]]
        victim = random.Random(seed).choice(inner)
        classes = dict(locked.labels)
        classes[victim] = Label.DESIGN
        res = rectify_sfll(n, Prediction(scheme, classes))
        misses += res.prediction.classes != locked.labels
    assert misses == 0


def test_single_flip_repair_rate():
    rng = random.Random(0)
    tried = repaired = 0
    for i, design in enumerate(sorted(SMALL_DESIGNS)):
        for scheme in Scheme:
            cfg = LockConfig(scheme, 8, h=1 if scheme is Scheme.SFLL_HD else 0, seed=i)
            n = load_design(design)
            try:
                cfg.check_fits(n)
            except ValueError:
                continue
            locked = lock(n, cfg)
            others = [c for c in {Label.DESIGN, *locked.labels.values()}]
            gates = sorted(locked.labels)
            for g in rng.sample(gates, min(25, len(gates))):
                for wrong in others:
                    if wrong is locked.labels[g]:
                        continue
                    classes = dict(locked.labels)
                    classes[g] = wrong
                    tried += 1
                    try:
                        res = rectify(locked.netlist, Prediction(scheme, classes))
                    except RectificationError:
                        continue
                    repaired += res.prediction.classes == locked.labels
    assert tried > 500
    assert repaired / tried >= 0.95


def test_rectification_log_csv(tmp_path):
    rows = [("g2", "design", "perturb", "D:protected_only"), ("g1", "perturb", "design", "P:x")]
    write_rectification_log(tmp_path / "log.csv", rows)
    with open(tmp_path / "log.csv", newline="") as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["gate", "predicted_class", "rectified_class", "rule_fired"]
    assert [r[0] for r in got[1:]] == ["g1", "g2"]


def test_prediction_validation():
    with pytest.raises(ValueError):
        Prediction(Scheme.ANTISAT, {"g": Label.PERTURB})
    locked = _locked(Scheme.ANTISAT, 0)
    partial = dict(list(locked.labels.items())[:-1])
    with pytest.raises(ValueError, match="misses"):
        rectify(locked.netlist, Prediction(Scheme.ANTISAT, partial))
