import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import all_patterns
from locksmith.circuits import random_netlist
from locksmith.netlist import GateType, NetlistError, parse_bench, simulate, write_bench
from locksmith.redact import Budget, check_equivalence
from locksmith.transforms import (
    REWRITE_RULES,
    constant_propagate,
    remove_dead_logic,
    rewrite_augment,
)

XOR_DP = "INPUT(d)\nINPUT(p)\nOUTPUT(y)\ny = XOR(d, p)"


def test_pin_nothing_is_identity():
    n = random_netlist(5, 20, seed=3)
    assert constant_propagate(n, {}) is n


def test_xor_with_zero_becomes_buffer():
    out = constant_propagate(parse_bench(XOR_DP), {"p": 0})
    assert [(g.name, g.gtype, g.fanin) for g in out.gates] == [("y", GateType.BUF, ("d",))]
    assert out.primary_inputs == ("d",)


def test_xor_with_one_becomes_inverter():
    out = constant_propagate(parse_bench(XOR_DP), {"p": 1})
    assert [(g.gtype, g.fanin) for g in out.gates] == [(GateType.NOT, ("d",))]


def test_genuinely_constant_output_keeps_const():
    n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)")
    out = constant_propagate(n, {"a": 0})
    assert out.gates[0].gtype is GateType.CONST0
    with pytest.raises(NetlistError):
        write_bench(out)


def test_pin_unknown_signal():
    with pytest.raises(NetlistError, match="unknown"):
        constant_propagate(parse_bench(XOR_DP), {"q": 0})


@given(st.integers(0, 10_000), st.data())
def test_propagation_preserves_behaviour(seed, data):
    n = random_netlist(8, 40, seed=seed)
    signals = list(n.primary_inputs) + [g.name for g in n.gates if g.name not in n.po_set]
    chosen = data.draw(st.lists(st.sampled_from(signals), max_size=4, unique=True))
    pins = {s: data.draw(st.integers(0, 1)) for s in chosen}
    out = constant_propagate(n, pins)
    rng = random.Random(seed)
    for _ in range(1000):
        vec = {s: rng.randint(0, 1) for s in n.primary_inputs}
        vec.update({s: v for s, v in pins.items() if s in n.pi_set})
        want = _simulate_forced(n, vec, pins)
        got = simulate(out, vec)
        assert got == want


def _simulate_forced(n, vec, pins):
    vals = dict(vec)
    from locksmith.netlist import eval_gate
    for gid in n.topo:
        g = n.gates[gid]
        vals[g.name] = pins[g.name] if g.name in pins else eval_gate(g.gtype, [vals[f] for f in g.fanin], 1)
    return {o: vals[o] for o in n.primary_outputs}


def test_dead_logic_all_reachable_unchanged():
    n = random_netlist(4, 10, seed=1)
    assert remove_dead_logic(n) is n


def test_dead_chain_deleted_and_inputs_dropped():
    n = parse_bench("INPUT(a)\nINPUT(b)\nINPUT(keyinput0)\nOUTPUT(y)\n"
                    "y = NOT(a)\nu = AND(b, keyinput0)\nv = NOT(u)")
    out = remove_dead_logic(n)
    assert [g.name for g in out.gates] == ["y"]
    assert out.primary_inputs == ("a",) and out.key_inputs == ()
    kept = remove_dead_logic(n, keep_pis=True)
    assert kept.primary_inputs == ("a", "b") and kept.key_inputs == ()


def test_empty_rule_set_is_identity():
    n = random_netlist(5, 20, seed=4)
    assert rewrite_augment(n, rules=[], seed=1) is n


def test_xnor_split():
    n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = XNOR(a, b)")
    out = rewrite_augment(n, ["xnor_split"], seed=0, rate=1.0)
    y = out.by_name["y"]
    assert y.gtype is GateType.NOT
    assert out.by_name[y.fanin[0]].gtype is GateType.XOR
    for p in all_patterns(["a", "b"]):
        assert simulate(out, p) == simulate(n, p)


def test_unknown_rule():
    with pytest.raises(ValueError):
        rewrite_augment(random_netlist(3, 5, seed=0), ["bogus"])


@given(st.integers(0, 10_000), st.integers(2, 16))
def test_rewrite_is_equivalent_exhaustively(seed, width):
    n = random_netlist(width, 60, seed=seed)
    out = rewrite_augment(n, REWRITE_RULES, seed=seed, passes=5)
    assert out.primary_outputs == n.primary_outputs
    assert check_equivalence(n, out, Budget("exhaustive")).equivalent


@given(st.integers(0, 10_000))
def test_rewrite_is_deterministic_and_changes_structure(seed):
    n = random_netlist(8, 60, seed=seed)
    a = rewrite_augment(n, seed=seed, passes=2, rate=0.5)
    assert write_bench(a) == write_bench(rewrite_augment(n, seed=seed, passes=2, rate=0.5))
    assert write_bench(a) != write_bench(n)
