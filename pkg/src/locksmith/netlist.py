"""Combinational gate-level netlist IR, bench I/O, simulation and cone walks.

A :class:`Netlist` is immutable. Multi-fanout is implicit: a net is named by
the gate (or input) that drives it and every reader refers to that name.

>>> n = parse_bench("INPUT(a)\\nINPUT(b)\\nOUTPUT(y)\\ny = AND(a, b)")
>>> simulate(n, {"a": 1, "b": 1})
{'y': 1}
"""

from __future__ import annotations

import enum
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Iterable, Iterator, Mapping, Sequence

KEY_PREFIX = "keyinput"


class NetlistError(ValueError):
    pass


class BenchSyntaxError(NetlistError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CycleError(NetlistError):
    def __init__(self, members: Sequence[str]):
        self.members = list(members)
        super().__init__("combinational cycle through: " + " -> ".join(self.members))


class GateType(str, enum.Enum):
    AND = "AND"
    NAND = "NAND"
    OR = "OR"
    NOR = "NOR"
    XOR = "XOR"
    XNOR = "XNOR"
    NOT = "NOT"
    BUF = "BUF"
    # internal pseudo-gates produced by constant propagation, never serialized
    CONST0 = "CONST0"
    CONST1 = "CONST1"

    @property
    def is_const(self) -> bool:
        return self in (GateType.CONST0, GateType.CONST1)


# Order fixes the neighbourhood-count columns of the feature vector.
BENCH_GATES: tuple[GateType, ...] = (
    GateType.AND, GateType.NAND, GateType.OR, GateType.NOR,
    GateType.XOR, GateType.XNOR, GateType.NOT, GateType.BUF,
)
_KEYWORDS = {g.value: g for g in BENCH_GATES}
_KEYWORDS["BUFF"] = GateType.BUF


@dataclass(frozen=True)
class Gate:
    id: int
    name: str
    gtype: GateType
    fanin: tuple[str, ...]


GateSpec = tuple[str, GateType, Sequence[str]]


@dataclass(frozen=True, eq=False)
class Netlist:
    name: str
    primary_inputs: tuple[str, ...]
    key_inputs: tuple[str, ...]
    primary_outputs: tuple[str, ...]
    gates: tuple[Gate, ...]
    key_prefix: str = field(default=KEY_PREFIX, compare=False)

    def __post_init__(self) -> None:
        self._validate()

    @classmethod
    def from_specs(
        cls,
        name: str,
        primary_inputs: Iterable[str],
        key_inputs: Iterable[str],
        primary_outputs: Iterable[str],
        specs: Iterable[GateSpec],
        key_prefix: str = KEY_PREFIX,
    ) -> "Netlist":
        gates = tuple(
            Gate(i, g_name, GateType(g_type), tuple(fanin))
            for i, (g_name, g_type, fanin) in enumerate(specs)
        )
        return cls(name, tuple(primary_inputs), tuple(key_inputs),
                   tuple(primary_outputs), gates, key_prefix)

    def specs(self) -> list[GateSpec]:
        return [(g.name, g.gtype, g.fanin) for g in self.gates]

    def replace(self, **changes) -> "Netlist":
        """Copy with some interface fields or gate specs swapped out."""
        specs = changes.pop("specs", None)
        kwargs = dict(
            name=self.name,
            primary_inputs=self.primary_inputs,
            key_inputs=self.key_inputs,
            primary_outputs=self.primary_outputs,
            key_prefix=self.key_prefix,
        )
        kwargs.update(changes)
        return Netlist.from_specs(specs=self.specs() if specs is None else specs, **kwargs)

    def _validate(self) -> None:
        drivers: dict[str, str] = {}
        for s in self.primary_inputs:
            if s.startswith(self.key_prefix):
                raise NetlistError(f"primary input {s!r} uses the key prefix")
            if s in drivers:
                raise NetlistError(f"duplicate driver for {s!r}")
            drivers[s] = "PI"
        for s in self.key_inputs:
            if not s.startswith(self.key_prefix):
                raise NetlistError(f"key input {s!r} lacks prefix {self.key_prefix!r}")
            if s in drivers:
                raise NetlistError(f"duplicate driver for {s!r}")
            drivers[s] = "KI"
        for i, g in enumerate(self.gates):
            if g.id != i:
                raise NetlistError(f"gate {g.name!r} has id {g.id}, expected {i}")
            if g.name in drivers:
                raise NetlistError(f"duplicate driver for {g.name!r}")
            drivers[g.name] = "gate"
            _check_arity(g.gtype, len(g.fanin), g.name)
        for g in self.gates:
            for f in g.fanin:
                if f not in drivers:
                    raise NetlistError(f"gate {g.name!r} reads undefined signal {f!r}")
        for o in self.primary_outputs:
            if o not in drivers:
                raise NetlistError(f"output {o!r} is not driven")
        _ = self.topo  # raises CycleError

    # -- lookups --------------------------------------------------------

    @cached_property
    def by_name(self) -> dict[str, Gate]:
        return {g.name: g for g in self.gates}

    @cached_property
    def pi_set(self) -> frozenset[str]:
        return frozenset(self.primary_inputs)

    @cached_property
    def ki_set(self) -> frozenset[str]:
        return frozenset(self.key_inputs)

    @cached_property
    def po_set(self) -> frozenset[str]:
        return frozenset(self.primary_outputs)

    @property
    def inputs(self) -> tuple[str, ...]:
        return self.primary_inputs + self.key_inputs

    def gate(self, ref: "int | str | Gate") -> Gate:
        if isinstance(ref, Gate):
            ref = ref.id
        try:
            return self.gates[ref] if isinstance(ref, int) else self.by_name[ref]
        except (IndexError, KeyError):
            raise NetlistError(f"unknown gate {ref!r}") from None

    @cached_property
    def loads(self) -> dict[str, tuple[int, ...]]:
        """Net name -> ids of distinct gates reading it."""
        acc: dict[str, list[int]] = {}
        for g in self.gates:
            for f in dict.fromkeys(g.fanin):
                acc.setdefault(f, []).append(g.id)
        return {k: tuple(v) for k, v in acc.items()}

    @cached_property
    def topo(self) -> tuple[int, ...]:
        """Gate ids in topological order; deterministic FIFO order over ready gates."""
        pending = [0] * len(self.gates)
        for g in self.gates:
            pending[g.id] = sum(1 for f in g.fanin if f in self.by_name)
        ready = deque(g.id for g in self.gates if pending[g.id] == 0)
        order: list[int] = []
        while ready:
            gid = ready.popleft()
            order.append(gid)
            for load in self.loads.get(self.gates[gid].name, ()):
                # a gate may read the same net on several pins
                pending[load] -= self.gates[load].fanin.count(self.gates[gid].name)
                if pending[load] == 0:
                    ready.append(load)
        if len(order) != len(self.gates):
            raise CycleError(self._find_cycle(set(range(len(self.gates))) - set(order)))
        return tuple(order)

    def _find_cycle(self, stuck: set[int]) -> list[str]:
        # every stuck gate has a stuck fanin gate, so walking backwards must revisit
        gid = min(stuck)
        seen: dict[int, int] = {}
        path: list[int] = []
        while gid not in seen:
            seen[gid] = len(path)
            path.append(gid)
            gid = next(self.by_name[f].id for f in self.gates[gid].fanin
                       if f in self.by_name and self.by_name[f].id in stuck)
        cycle = path[seen[gid]:]
        return [self.gates[i].name for i in reversed(cycle)]

    def census(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for g in self.gates:
            counts[g.gtype.value] = counts.get(g.gtype.value, 0) + 1
        return counts

    def __repr__(self) -> str:
        return (f"Netlist({self.name!r}, {len(self.primary_inputs)} PIs, "
                f"{len(self.key_inputs)} KIs, {len(self.primary_outputs)} POs, "
                f"{len(self.gates)} gates)")

    def structurally_equal(self, other: "Netlist") -> bool:
        return (self.primary_inputs == other.primary_inputs
                and self.key_inputs == other.key_inputs
                and self.primary_outputs == other.primary_outputs
                and sorted(self.specs()) == sorted(other.specs()))


def _check_arity(gtype: GateType, n: int, name: str) -> None:
    if gtype.is_const:
        ok = n == 0
    elif gtype in (GateType.NOT, GateType.BUF):
        ok = n == 1
    else:
        ok = n >= 2
    if not ok:
        raise NetlistError(f"gate {name!r}: {gtype.value} cannot take {n} fanins")


# -- bench format ------------------------------------------------------------

_IO_RE = re.compile(r"^(INPUT|OUTPUT)\s*\(\s*([^()\s,]+)\s*\)$", re.IGNORECASE)
_GATE_RE = re.compile(r"^([^=\s]+)\s*=\s*([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)$")


def parse_bench(text: str, name: str = "top", key_prefix: str = KEY_PREFIX) -> Netlist:
    """Parse ISCAS-style bench text.

    Inputs whose names start with ``key_prefix`` become key inputs. Errors
    carry the offending line number.
    """
    pis: list[str] = []
    kis: list[str] = []
    pos: list[tuple[str, int]] = []
    specs: list[GateSpec] = []
    defined: dict[str, int] = {}
    uses: list[tuple[str, int]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _IO_RE.match(line)
        if m:
            kind, sig = m.group(1).upper(), m.group(2)
            if kind == "OUTPUT":
                pos.append((sig, lineno))
                continue
            if sig in defined:
                raise BenchSyntaxError(f"duplicate driver for {sig!r} "
                                       f"(first on line {defined[sig]})", lineno)
            defined[sig] = lineno
            (kis if sig.startswith(key_prefix) else pis).append(sig)
            continue
        m = _GATE_RE.match(line)
        if not m:
            raise BenchSyntaxError(f"cannot parse {line!r}", lineno)
        out, keyword, args = m.groups()
        gtype = _KEYWORDS.get(keyword.upper())
        if gtype is None:
            raise BenchSyntaxError(f"unsupported gate {keyword!r}", lineno)
        fanin = [a.strip() for a in args.split(",")]
        if any(not a for a in fanin):
            raise BenchSyntaxError("empty fanin reference", lineno)
        if out in defined:
            raise BenchSyntaxError(f"duplicate driver for {out!r} "
                                   f"(first on line {defined[out]})", lineno)
        try:
            _check_arity(gtype, len(fanin), out)
        except NetlistError as e:
            raise BenchSyntaxError(str(e), lineno) from None
        defined[out] = lineno
        specs.append((out, gtype, fanin))
        uses.extend((f, lineno) for f in fanin)

    for sig, lineno in uses + pos:
        if sig not in defined:
            raise BenchSyntaxError(f"undefined signal {sig!r}", lineno)
    return Netlist.from_specs(name, pis, kis, [p for p, _ in pos], specs, key_prefix)


def write_bench(n: Netlist) -> str:
    """Serialize deterministically: PIs, KIs, OUTPUTs, then gates in topo order."""
    lines = [f"# {n.name}"]
    lines += [f"INPUT({s})" for s in n.primary_inputs]
    lines += [f"INPUT({s})" for s in n.key_inputs]
    lines += [f"OUTPUT({s})" for s in n.primary_outputs]
    for gid in n.topo:
        g = n.gates[gid]
        if g.gtype.is_const:
            raise NetlistError(f"gate {g.name!r} is a {g.gtype.value} pseudo-gate "
                               "and cannot be written as bench")
        lines.append(f"{g.name} = {g.gtype.value}({', '.join(g.fanin)})")
    return "\n".join(lines) + "\n"


def read_bench(path, name: str | None = None, key_prefix: str = KEY_PREFIX) -> Netlist:
    from pathlib import Path

    path = Path(path)
    return parse_bench(path.read_text(), name or path.stem, key_prefix)


# -- simulation ----------------------------------------------------------------

def eval_gate(gtype: GateType, vals: Sequence[int], mask: int) -> int:
    """Evaluate one gate on bit-parallel words (``mask`` has all lanes set)."""
    if gtype is GateType.AND:
        return reduce(int.__and__, vals)
    if gtype is GateType.NAND:
        return mask ^ reduce(int.__and__, vals)
    if gtype is GateType.OR:
        return reduce(int.__or__, vals)
    if gtype is GateType.NOR:
        return mask ^ reduce(int.__or__, vals)
    if gtype is GateType.XOR:
        return reduce(int.__xor__, vals)
    if gtype is GateType.XNOR:
        return mask ^ reduce(int.__xor__, vals)
    if gtype is GateType.NOT:
        return mask ^ vals[0]
    if gtype is GateType.BUF:
        return vals[0]
    if gtype is GateType.CONST0:
        return 0
    return mask


def simulate_words(n: Netlist, words: Mapping[str, int], width: int) -> dict[str, int]:
    """Bit-parallel simulation over ``width`` lanes; returns every net's word."""
    mask = (1 << width) - 1
    values: dict[str, int] = {}
    for s in n.inputs:
        if s not in words:
            raise NetlistError(f"missing assignment for input {s!r}")
        values[s] = words[s] & mask
    for gid in n.topo:
        g = n.gates[gid]
        values[g.name] = eval_gate(g.gtype, [values[f] for f in g.fanin], mask)
    return values


def simulate(n: Netlist, assignment: Mapping[str, int]) -> dict[str, int]:
    """Evaluate the netlist on one input vector; returns ``{PO: bit}``.

    Extra keys in ``assignment`` are ignored.
    """
    missing = [s for s in n.inputs if s not in assignment]
    if missing:
        raise NetlistError(f"missing assignment for inputs {missing}")
    values = simulate_words(n, {s: int(assignment[s]) & 1 for s in n.inputs}, 1)
    return {o: values[o] for o in n.primary_outputs}


def exhaustive_words(names: Sequence[str], max_lanes_log2: int = 16
                     ) -> Iterator[tuple[dict[str, int], int]]:
    """Yield ``(words, width)`` chunks jointly covering all 2**len(names) patterns.

    Pattern ``p`` assigns bit ``i`` of ``p`` to ``names[i]``.
    """
    m = len(names)
    low = min(m, max_lanes_log2)
    width = 1 << low
    base = {}
    for i in range(low):
        period = 1 << (i + 1)
        block = ((1 << (1 << i)) - 1) << (1 << i)
        base[names[i]] = block * (((1 << width) - 1) // ((1 << period) - 1))
    mask = (1 << width) - 1
    for hi in range(1 << (m - low)):
        words = dict(base)
        for j in range(low, m):
            words[names[j]] = mask if (hi >> (j - low)) & 1 else 0
        yield words, width


def pattern_from_lane(names: Sequence[str], words: Mapping[str, int], lane: int) -> dict[str, int]:
    return {s: (words[s] >> lane) & 1 for s in names}


# -- cones ----------------------------------------------------------------------

def fanin_cone(n: Netlist, start: int | str) -> tuple[set[int], set[str], set[str]]:
    """Transitive fan-in of a gate: (gate ids, PIs, KIs); ``start`` excluded."""
    root = n.gate(start)
    gates: set[int] = set()
    pis: set[str] = set()
    kis: set[str] = set()
    stack = list(root.fanin)
    seen: set[str] = set()
    while stack:
        s = stack.pop()
        if s in seen:
            continue
        seen.add(s)
        if s in n.pi_set:
            pis.add(s)
        elif s in n.ki_set:
            kis.add(s)
        else:
            g = n.by_name[s]
            gates.add(g.id)
            stack.extend(g.fanin)
    return gates, pis, kis


def topo_order(n: Netlist) -> list[int]:
    return list(n.topo)


class ConeIndex:
    """Bitset fan-in/fan-out closures of every gate, computed once.

    Bit ``i`` of a gate bitset refers to gate id ``i``; PI and KI bitsets index
    into ``primary_inputs`` and ``key_inputs``. Cones exclude the gate itself.
    """

    def __init__(self, n: Netlist):
        self.netlist = n
        pi_idx = {s: i for i, s in enumerate(n.primary_inputs)}
        ki_idx = {s: i for i, s in enumerate(n.key_inputs)}
        size = len(n.gates)
        self.fanin_gates = [0] * size
        self.fanin_pis = [0] * size
        self.fanin_kis = [0] * size
        self.fanout_gates = [0] * size
        for gid in n.topo:
            g_bits = p_bits = k_bits = 0
            for f in n.gates[gid].fanin:
                if f in pi_idx:
                    p_bits |= 1 << pi_idx[f]
                elif f in ki_idx:
                    k_bits |= 1 << ki_idx[f]
                else:
                    src = n.by_name[f].id
                    g_bits |= (1 << src) | self.fanin_gates[src]
                    p_bits |= self.fanin_pis[src]
                    k_bits |= self.fanin_kis[src]
            self.fanin_gates[gid] = g_bits
            self.fanin_pis[gid] = p_bits
            self.fanin_kis[gid] = k_bits
        for gid in reversed(n.topo):
            bits = 0
            for load in n.loads.get(n.gates[gid].name, ()):
                bits |= (1 << load) | self.fanout_gates[load]
            self.fanout_gates[gid] = bits

    def pis_of(self, gid: int) -> set[str]:
        return set(_bits_to_names(self.fanin_pis[gid], self.netlist.primary_inputs))

    def kis_of(self, gid: int) -> set[str]:
        return set(_bits_to_names(self.fanin_kis[gid], self.netlist.key_inputs))


def iter_bits(bits: int) -> Iterator[int]:
    while bits:
        low = bits & -bits
        yield low.bit_length() - 1
        bits ^= low


def _bits_to_names(bits: int, names: Sequence[str]) -> Iterator[str]:
    return (names[i] for i in iter_bits(bits))
