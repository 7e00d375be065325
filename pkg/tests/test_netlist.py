from collections import deque

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import all_patterns, truth_eval
from locksmith.circuits import c17, load_design, random_netlist
from locksmith.netlist import (
    BenchSyntaxError,
    ConeIndex,
    CycleError,
    GateType,
    Netlist,
    NetlistError,
    fanin_cone,
    parse_bench,
    simulate,
    topo_order,
    write_bench,
)

netlists = st.builds(
    random_netlist,
    n_inputs=st.integers(2, 8),
    n_gates=st.integers(1, 40),
    seed=st.integers(0, 10_000),
)


def test_minimal_circuit():
    n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)")
    assert (len(n.gates), len(n.primary_inputs), len(n.key_inputs), len(n.primary_outputs)) == (1, 2, 0, 1)
    assert simulate(n, {"a": 1, "b": 1}) == {"y": 1}


def test_key_inputs_by_prefix():
    n = parse_bench("INPUT(a)\nINPUT(keyinput0)\nOUTPUT(y)\ny = xor(a, keyinput0)")
    assert n.key_inputs == ("keyinput0",)
    assert n.primary_inputs == ("a",)
    assert n.gates[0].gtype is GateType.XOR


def test_comments_whitespace_and_buff():
    text = "# header\n INPUT( a )  # trailing\n\nOUTPUT(y)\ny=BUFF(a)\n"
    n = parse_bench(text)
    assert n.gates[0].gtype is GateType.BUF


def test_fanin_order_preserved():
    n = parse_bench("INPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(y)\ny = NAND(c, a, b)")
    assert n.gates[0].fanin == ("c", "a", "b")


@pytest.mark.parametrize("text, line, fragment", [
    ("INPUT(a)\nOUTPUT(y)\ny = AND(a, zz)", 3, "undefined signal 'zz'"),
    ("INPUT(a)\nOUTPUT(y)\ny = NOT(a)\ny = BUF(a)", 4, "duplicate driver"),
    ("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = MAJ(a, b)", 4, "unsupported gate"),
    ("INPUT(a)\nOUTPUT(y)\ny := NOT(a)", 3, "cannot parse"),
    ("INPUT(a)\nOUTPUT(y)\ny = AND(a)", 3, "cannot take 1 fanins"),
    ("INPUT(a)\nOUTPUT(q)\ny = NOT(a)", 2, "undefined signal 'q'"),
])
def test_parse_errors_are_line_numbered(text, line, fragment):
    with pytest.raises(BenchSyntaxError) as info:
        parse_bench(text)
    assert info.value.line == line
    assert fragment in str(info.value)


def test_cycle_reported_with_members():
    text = "INPUT(a)\nOUTPUT(y)\nx = AND(a, y)\ny = OR(a, x)"
    with pytest.raises(CycleError) as info:
        parse_bench(text)
    assert set(info.value.members) == {"x", "y"}


def test_write_is_deterministic_and_one_line():
    n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)")
    text = write_bench(n)
    assert text == write_bench(n)
    assert text.splitlines().count("y = AND(a, b)") == 1


def test_write_orders_sections():
    n = parse_bench("OUTPUT(y)\nINPUT(keyinput0)\ny = XOR(a, keyinput0)\nINPUT(a)")
    lines = write_bench(n).splitlines()[1:]
    assert lines == ["INPUT(a)", "INPUT(keyinput0)", "OUTPUT(y)", "y = XOR(a, keyinput0)"]


def test_const_gates_cannot_be_written():
    n = Netlist.from_specs("k", ["a"], [], ["z"], [("z", GateType.CONST0, [])])
    with pytest.raises(NetlistError):
        write_bench(n)


@given(netlists)
def test_round_trip(n):
    back = parse_bench(write_bench(n), n.name)
    assert back.structurally_equal(n)
    assert [g.fanin for g in sorted(back.gates, key=lambda g: g.name)] == \
        [g.fanin for g in sorted(n.gates, key=lambda g: g.name)]


def test_c17_truth_table():
    n = c17()
    for p in all_patterns(n.primary_inputs):
        assert simulate(n, p) == truth_eval(n, p)
    # two known rows of the c17 table
    assert simulate(n, dict.fromkeys(n.primary_inputs, 0)) == dict.fromkeys(n.primary_outputs, 0)
    assert simulate(n, dict.fromkeys(n.primary_inputs, 1)) == dict(zip(n.primary_outputs, (1, 0)))


@given(st.integers(0, 10_000))
def test_simulate_matches_reference_on_64_patterns(seed):
    n = random_netlist(6, 18, seed=seed, max_fanin=3)
    for p in all_patterns(n.primary_inputs):
        assert simulate(n, p) == truth_eval(n, p)


def test_simulate_missing_input():
    n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)")
    with pytest.raises(NetlistError, match="missing"):
        simulate(n, {"a": 1})


def _reverse_bfs(n, gid):
    gates, pis, kis = set(), set(), set()
    q = deque(n.gates[gid].fanin)
    while q:
        s = q.popleft()
        if s in n.pi_set:
            pis.add(s)
        elif s in n.ki_set:
            kis.add(s)
        elif n.by_name[s].id not in gates:
            gates.add(n.by_name[s].id)
            q.extend(n.by_name[s].fanin)
    return gates, pis, kis


def test_cone_of_pi_only_gate():
    n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)")
    assert fanin_cone(n, 0) == (set(), {"a", "b"}, set())


def test_cone_unknown_gate():
    with pytest.raises(NetlistError):
        fanin_cone(c17(), 99)


@given(netlists)
def test_cones_match_reverse_bfs(n):
    idx = ConeIndex(n)
    for g in n.gates:
        want = _reverse_bfs(n, g.id)
        assert fanin_cone(n, g.id) == want
        assert {i for i in range(len(n.gates)) if idx.fanin_gates[g.id] >> i & 1} == want[0]
        assert idx.pis_of(g.id) == want[1]
        assert g.id not in want[0]


@given(netlists)
def test_fanout_is_inverse_of_fanin(n):
    idx = ConeIndex(n)
    for a in range(len(n.gates)):
        for b in range(len(n.gates)):
            assert bool(idx.fanout_gates[a] >> b & 1) == bool(idx.fanin_gates[b] >> a & 1)


def test_topo_small_cases():
    assert topo_order(parse_bench("INPUT(i)\nOUTPUT(a)\na = NOT(i)")) == [0]
    n = parse_bench("INPUT(i)\nOUTPUT(c)\nc = NOT(b)\nb = NOT(a)\na = NOT(i)")
    assert [n.gates[i].name for i in topo_order(n)] == ["a", "b", "c"]


@given(netlists)
def test_topo_respects_edges(n):
    pos = {gid: k for k, gid in enumerate(topo_order(n))}
    assert sorted(pos) == list(range(len(n.gates)))
    for g in n.gates:
        for f in g.fanin:
            if f in n.by_name:
                assert pos[n.by_name[f].id] < pos[g.id]


def test_arity_invariant_enforced():
    with pytest.raises(NetlistError):
        Netlist.from_specs("x", ["a", "b"], [], ["y"], [("y", GateType.NOT, ["a", "b"])])


def test_key_prefix_is_configurable():
    n = parse_bench("INPUT(a)\nINPUT(k0)\nOUTPUT(y)\ny = XOR(a, k0)", key_prefix="k")
    assert n.key_inputs == ("k0",)


def test_builtin_designs_load():
    n = load_design("add4")
    assert n.name == "add4" and len(n.primary_inputs) == 9
    with pytest.raises(KeyError):
        load_design("nope")
