"""Small vendored benchmark set plus seeded circuit generators.

Nothing here is copied from a third-party benchmark except ``c17``, which is
six NAND gates and is reproduced in every logic-synthesis textbook.
"""

from __future__ import annotations

import random
from typing import Callable

from .netlist import GateType, Netlist, parse_bench

G = GateType

C17_BENCH = """\
# c17
INPUT(1)
INPUT(2)
INPUT(3)
INPUT(6)
INPUT(7)
OUTPUT(22)
OUTPUT(23)
10 = NAND(1, 3)
11 = NAND(3, 6)
16 = NAND(2, 11)
19 = NAND(11, 7)
22 = NAND(10, 16)
23 = NAND(16, 19)
"""


def c17() -> Netlist:
    return parse_bench(C17_BENCH, name="c17")


class _Builder:
    """Accumulates gate specs with fresh names; used by the generators below."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self.specs: list = []
        self.count = 0

    def add(self, gtype: GateType, *fanin: str, name: str | None = None) -> str:
        if name is None:
            name = f"{self.prefix}{self.count}"
            self.count += 1
        self.specs.append((name, gtype, list(fanin)))
        return name

    def full_adder(self, a: str, b: str, c: str) -> tuple[str, str]:
        t = self.add(G.XOR, a, b)
        s = self.add(G.XOR, t, c)
        carry = self.add(G.OR, self.add(G.AND, a, b), self.add(G.AND, t, c))
        return s, carry


def _finish(name: str, pis, pos_nets: list[str], b: _Builder) -> Netlist:
    # outputs get stable names via trailing buffers only when a net is reused
    return Netlist.from_specs(name, pis, (), pos_nets, b.specs)


def ripple_adder(width: int) -> Netlist:
    a = [f"a{i}" for i in range(width)]
    bb = [f"b{i}" for i in range(width)]
    b = _Builder("n")
    carry = "cin"
    sums = []
    for i in range(width):
        s, carry = b.full_adder(a[i], bb[i], carry)
        sums.append(s)
    return _finish(f"add{width}", a + bb + ["cin"], sums + [carry], b)


def comparator(width: int) -> Netlist:
    """Magnitude comparator producing a>b, a==b, a<b."""
    a = [f"a{i}" for i in range(width)]
    bb = [f"b{i}" for i in range(width)]
    b = _Builder("n")
    eq_bits = [b.add(G.XNOR, a[i], bb[i]) for i in range(width)]
    gt_terms, lt_terms = [], []
    for i in reversed(range(width)):
        higher = eq_bits[i + 1:]
        gt = b.add(G.AND, a[i], b.add(G.NOT, bb[i]))
        lt = b.add(G.AND, b.add(G.NOT, a[i]), bb[i])
        if higher:
            prefix = higher[0] if len(higher) == 1 else b.add(G.AND, *higher)
            gt = b.add(G.AND, gt, prefix)
            lt = b.add(G.AND, lt, prefix)
        gt_terms.append(gt)
        lt_terms.append(lt)
    o_gt = b.add(G.OR, *gt_terms) if len(gt_terms) > 1 else b.add(G.BUF, gt_terms[0])
    o_lt = b.add(G.OR, *lt_terms) if len(lt_terms) > 1 else b.add(G.BUF, lt_terms[0])
    o_eq = b.add(G.AND, *eq_bits) if width > 1 else b.add(G.BUF, eq_bits[0])
    return _finish(f"cmp{width}", a + bb, [o_gt, o_eq, o_lt], b)


def mux_tree(select_bits: int) -> Netlist:
    sel = [f"s{i}" for i in range(select_bits)]
    data = [f"d{i}" for i in range(1 << select_bits)]
    b = _Builder("n")
    nsel = [b.add(G.NOT, s) for s in sel]
    level = data
    for i, s in enumerate(sel):
        nxt = []
        for j in range(0, len(level), 2):
            lo = b.add(G.NAND, level[j], nsel[i])
            hi = b.add(G.NAND, level[j + 1], s)
            nxt.append(b.add(G.NAND, lo, hi))
        level = nxt
    return _finish(f"mux{1 << select_bits}", data + sel, level, b)


def alu(width: int) -> Netlist:
    """Four-function ALU: op selects AND, OR, XOR or ADD of two operands."""
    a = [f"a{i}" for i in range(width)]
    bb = [f"b{i}" for i in range(width)]
    ops = ["op0", "op1"]
    b = _Builder("n")
    nop0, nop1 = b.add(G.NOT, "op0"), b.add(G.NOT, "op1")
    sel = [
        b.add(G.AND, nop0, nop1), b.add(G.AND, "op0", nop1),
        b.add(G.AND, nop0, "op1"), b.add(G.AND, "op0", "op1"),
    ]
    carry = None
    outs = []
    for i in range(width):
        f_and = b.add(G.AND, a[i], bb[i])
        f_or = b.add(G.OR, a[i], bb[i])
        f_xor = b.add(G.XOR, a[i], bb[i])
        if carry is None:
            f_add, carry = f_xor, f_and
        else:
            f_add = b.add(G.XOR, f_xor, carry)
            carry = b.add(G.OR, f_and, b.add(G.AND, f_xor, carry))
        terms = [b.add(G.AND, f, s) for f, s in zip((f_and, f_or, f_xor, f_add), sel)]
        outs.append(b.add(G.OR, *terms))
    outs.append(b.add(G.AND, carry, sel[3]))
    return _finish(f"alu{width}", a + bb + ops, outs, b)


def parity_checker(width: int) -> Netlist:
    """Hamming-style syndrome generator over ``width`` data bits."""
    d = [f"d{i}" for i in range(width)]
    b = _Builder("n")
    outs = []
    bit = 1
    while bit <= width:
        members = [d[i] for i in range(width) if (i + 1) & bit]
        if len(members) == 1:
            outs.append(b.add(G.BUF, members[0]))
        else:
            acc = members[0]
            for m in members[1:]:
                acc = b.add(G.XOR, acc, m)
            outs.append(acc)
        bit <<= 1
    any_set = b.add(G.NOR, *d)
    outs.append(any_set)
    return _finish(f"par{width}", d, outs, b)


def priority_encoder(width: int) -> Netlist:
    r = [f"r{i}" for i in range(width)]
    b = _Builder("n")
    grants = []
    blocked = None
    for i in range(width):
        if blocked is None:
            grants.append(b.add(G.BUF, r[i]))
            blocked = r[i]
        else:
            grants.append(b.add(G.AND, r[i], b.add(G.NOT, blocked)))
            blocked = b.add(G.OR, blocked, r[i])
    code_bits = max(1, (width - 1).bit_length())
    outs = []
    for k in range(code_bits):
        members = [grants[i] for i in range(width) if (i >> k) & 1]
        outs.append(b.add(G.OR, *members) if len(members) > 1 else b.add(G.BUF, members[0]))
    outs.append(b.add(G.BUF, blocked))
    return _finish(f"prio{width}", r, outs, b)


def random_netlist(
    n_inputs: int,
    n_gates: int,
    seed: int,
    max_fanin: int = 3,
    n_outputs: int | None = None,
    name: str | None = None,
    types: tuple[GateType, ...] | None = None,
    locality: int = 24,
) -> Netlist:
    """Seeded random DAG with no dead logic and every input used.

    Fan-in nets are drawn mostly from the last ``locality`` signals so that
    depth grows with size. Gates left without loads become outputs.
    """
    rng = random.Random(seed)
    types = types or (G.AND, G.NAND, G.OR, G.NOR, G.XOR, G.XNOR, G.NOT, G.BUF)
    pis = [f"i{k}" for k in range(n_inputs)]
    signals = list(pis)
    unused = set(pis)
    specs = []
    for k in range(n_gates):
        gtype = rng.choice(types)
        if gtype in (G.NOT, G.BUF) and rng.random() < 0.5:
            gtype = rng.choice((G.AND, G.OR, G.NAND, G.NOR, G.XOR))
        arity = 1 if gtype in (G.NOT, G.BUF) else rng.randint(2, max(2, max_fanin))
        pool = signals[-locality:] if rng.random() < 0.8 else signals
        fanin = []
        pending = sorted(unused & set(pis))
        if pending and rng.random() < 0.5:
            fanin.append(rng.choice(pending))
        while len(fanin) < arity:
            s = rng.choice(pool)
            if s not in fanin or len(set(pool)) < arity:
                fanin.append(s)
        name_k = f"g{k}"
        specs.append((name_k, gtype, fanin))
        unused.difference_update(fanin)
        unused.add(name_k)
        signals.append(name_k)
    # fold unused inputs into the last gates so every PI has a load
    for pi in sorted(unused & set(pis)):
        name_k = f"g{len(specs)}"
        specs.append((name_k, G.XOR, [pi, specs[rng.randrange(len(specs))][0] if specs else pis[0]]))
        if specs[-1][2][0] == specs[-1][2][1]:
            specs[-1] = (name_k, G.BUF, [pi])
        unused.discard(pi)
        unused.add(name_k)
    used = {f for _, _, fi in specs for f in fi}
    outs = [s for s, _, _ in specs if s not in used]
    extra = n_outputs - len(outs) if n_outputs else 0
    candidates = [s for s, _, _ in specs if s not in outs]
    rng.shuffle(candidates)
    outs += sorted(candidates[:max(0, extra)], key=lambda s: int(s[1:]))
    return Netlist.from_specs(name or f"rand{n_inputs}_{n_gates}_{seed}", pis, (), outs, specs)


def _rename(n: Netlist, name: str) -> Netlist:
    return n.replace(name=name)


# Registry of desk designs. Small ones have <= 16 PIs so exhaustive checks are
# possible; the "attack" set has >= 32 PIs so K = 32 fits every scheme.
SMALL_DESIGNS: dict[str, Callable[[], Netlist]] = {
    "c17": c17,
    "add4": lambda: ripple_adder(4),
    "cmp6": lambda: comparator(6),
    "mux8": lambda: mux_tree(3),
    "alu4": lambda: alu(4),
    "par12": lambda: parity_checker(12),
    "prio16": lambda: priority_encoder(16),
    "rnd16a": lambda: random_netlist(16, 80, seed=11, name="rnd16a"),
    "rnd16b": lambda: random_netlist(14, 120, seed=12, name="rnd16b"),
}

ATTACK_DESIGNS: dict[str, Callable[[], Netlist]] = {
    "add16": lambda: ripple_adder(16),
    "cmp16": lambda: comparator(16),
    "alu16": lambda: alu(16),
    "mux32": lambda: mux_tree(5),
    "par32": lambda: parity_checker(32),
    "rnd40a": lambda: random_netlist(40, 300, seed=101, name="rnd40a"),
    "rnd40b": lambda: random_netlist(40, 400, seed=102, name="rnd40b"),
    "rnd48": lambda: random_netlist(48, 500, seed=103, name="rnd48"),
}


def load_design(name: str) -> Netlist:
    for registry in (SMALL_DESIGNS, ATTACK_DESIGNS):
        if name in registry:
            return _rename(registry[name](), name)
    raise KeyError(f"unknown built-in design {name!r}")
