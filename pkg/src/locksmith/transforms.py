"""Netlist passes: constant propagation, dead-logic removal, rewrite augmentation."""

from __future__ import annotations

import logging
import random
from typing import Iterable, Mapping

from .netlist import GateType, Netlist, NetlistError

log = logging.getLogger(__name__)
G = GateType

_CONST = {0: G.CONST0, 1: G.CONST1}


def _simplify(gtype: GateType, fanin: list[str], const: Mapping[str, int]
              ) -> tuple[GateType, list[str]]:
    """Fold constant fanins of one gate. Returns the (possibly new) type and fanin."""
    live = [f for f in fanin if f not in const]
    vals = [const[f] for f in fanin if f in const]
    if not vals:
        return gtype, fanin
    if gtype in (G.AND, G.NAND, G.OR, G.NOR):
        dominant = 0 if gtype in (G.AND, G.NAND) else 1
        invert = gtype in (G.NAND, G.NOR)
        if dominant in vals:
            return _CONST[dominant ^ invert], []
        if not live:
            return _CONST[(1 - dominant) ^ invert], []
        if len(live) == 1:
            return (G.NOT if invert else G.BUF), live
        return gtype, live
    if gtype in (G.XOR, G.XNOR):
        parity = sum(vals) % 2 ^ (gtype is G.XNOR)
        if not live:
            return _CONST[parity], []
        if len(live) == 1:
            return (G.NOT if parity else G.BUF), live
        return (G.XNOR if parity else G.XOR), live
    if gtype is G.NOT:
        return _CONST[1 - vals[0]], []
    if gtype is G.BUF:
        return _CONST[vals[0]], []
    return gtype, fanin


def constant_propagate(n: Netlist, pins: Mapping[str, int]) -> Netlist:
    """Tie the given signals to constants and simplify to a fixpoint.

    Pinned inputs leave the interface; pinned gates become constants. Buffers
    created by the simplification are bypassed, and a buffer left driving an
    output absorbs its source gate when that gate has no other reader. Constants
    survive only where they drive an output.
    """
    for s in pins:
        if s not in n.pi_set and s not in n.ki_set and s not in n.by_name:
            raise NetlistError(f"cannot pin unknown signal {s!r}")
    if not pins:
        return n

    const: dict[str, int] = {s: int(v) & 1 for s, v in pins.items()}
    alias: dict[str, str] = {}
    out_specs: dict[str, tuple[GateType, list[str]]] = {}
    created_bufs: set[str] = set()

    for gid in n.topo:
        g = n.gates[gid]
        if g.name in const:
            continue
        fanin = [alias.get(f, f) for f in g.fanin]
        gtype, fanin = _simplify(g.gtype, fanin, const)
        if gtype.is_const:
            const[g.name] = 1 if gtype is G.CONST1 else 0
            continue
        if gtype is G.BUF and g.gtype is not G.BUF:
            created_bufs.add(g.name)
            if g.name not in n.po_set:
                alias[g.name] = fanin[0]
                continue
        out_specs[g.name] = (gtype, fanin)

    # constants that drive outputs stay as pseudo-gates
    for o in n.primary_outputs:
        o_src = alias.get(o, o)
        if o_src in const and o_src not in out_specs:
            out_specs[o_src] = (_CONST[const[o_src]], [])

    specs = [(name, *out_specs[name]) for name in _ordered(n, out_specs)]
    pos = [alias.get(o, o) for o in n.primary_outputs]
    pis = [s for s in n.primary_inputs if s not in pins]
    kis = [s for s in n.key_inputs if s not in pins]
    specs = _absorb_output_buffers(specs, pos, created_bufs, set(pis) | set(kis))
    out = Netlist.from_specs(n.name, pis, kis, pos, specs, n.key_prefix)
    return out


def _ordered(n: Netlist, keep: Mapping[str, object]) -> list[str]:
    names = [g.name for g in n.gates if g.name in keep]
    names += sorted(set(keep) - set(names))
    return names


def _absorb_output_buffers(specs, pos, created_bufs, inputs):
    """Merge ``o = BUF(s)`` into ``s`` when ``s`` is a gate read only by ``o``."""
    by_name = {name: (gtype, fanin) for name, gtype, fanin in specs}
    readers: dict[str, int] = {}
    for _, _, fanin in specs:
        for f in set(fanin):
            readers[f] = readers.get(f, 0) + 1
    pos_set = set(pos)
    rename: dict[str, str] = {}
    drop: set[str] = set()
    for name, gtype, fanin in specs:
        if name not in created_bufs or gtype is not G.BUF:
            continue
        src = fanin[0]
        if (src in inputs or src in pos_set or src not in by_name
                or readers.get(src, 0) != 1 or src in rename or by_name[src][0].is_const):
            continue
        rename[src] = name
        drop.add(name)
    if not rename:
        return specs
    merged = []
    for name, gtype, fanin in specs:
        if name in drop:
            continue
        merged.append((rename.get(name, name), gtype, [rename.get(f, f) for f in fanin]))
    return merged


def remove_dead_logic(n: Netlist, keep_pis: bool = False) -> Netlist:
    """Delete gates with no path to an output and drop unloaded inputs.

    Unloaded key inputs are always dropped; unloaded primary inputs are dropped
    unless ``keep_pis``. Dropped names are logged.
    """
    live: set[str] = set()
    stack = list(n.primary_outputs)
    while stack:
        s = stack.pop()
        if s in live:
            continue
        live.add(s)
        g = n.by_name.get(s)
        if g is not None:
            stack.extend(g.fanin)
    specs = [(g.name, g.gtype, g.fanin) for g in n.gates if g.name in live]
    pis = [s for s in n.primary_inputs if keep_pis or s in live]
    kis = [s for s in n.key_inputs if s in live]
    dropped = [s for s in n.inputs if s not in pis and s not in kis]
    if dropped:
        log.debug("%s: dropped unloaded inputs %s", n.name, dropped)
    if len(specs) == len(n.gates) and not dropped:
        return n
    return Netlist.from_specs(n.name, pis, kis, n.primary_outputs, specs, n.key_prefix)


# -- rewrite augmentation ------------------------------------------------------

REWRITE_RULES = ("xor_expand", "xnor_split", "demorgan", "not_pair", "rebalance")


class _Rewriter:
    def __init__(self, n: Netlist, rng: random.Random, rate: float, frozen: set[str]):
        self.n = n
        self.rng = rng
        self.rate = rate
        self.frozen = frozen
        self.taken = set(n.by_name) | set(n.inputs)
        self.specs: dict[str, tuple[GateType, list[str]]] = {
            g.name: (g.gtype, list(g.fanin)) for g in n.gates}
        self.order = [g.name for g in n.gates]
        self.origin: dict[str, str] = {}

    def fresh(self, root: str) -> str:
        k = 0
        while f"{root}_rw{k}" in self.taken:
            k += 1
        name = f"{root}_rw{k}"
        self.taken.add(name)
        self.origin[name] = self.origin.get(root, root)
        return name

    def add(self, root: str, gtype: GateType, fanin: list[str]) -> str:
        name = self.fresh(root)
        self.specs[name] = (gtype, fanin)
        self.order.append(name)
        return name

    def readers(self) -> dict[str, int]:
        acc: dict[str, int] = {}
        for gtype, fanin in self.specs.values():
            for f in set(fanin):
                acc[f] = acc.get(f, 0) + 1
        return acc

    def apply(self, rule: str, name: str) -> bool:
        gtype, fanin = self.specs[name]
        if rule == "xor_expand" and gtype in (G.XOR, G.XNOR) and len(fanin) == 2:
            a, b = fanin
            na, nb = self.add(name, G.NOT, [a]), self.add(name, G.NOT, [b])
            t1 = self.add(name, G.AND, [a, nb])
            t2 = self.add(name, G.AND, [na, b])
            self.specs[name] = (G.OR if gtype is G.XOR else G.NOR, [t1, t2])
            return True
        if rule == "xnor_split" and gtype is G.XNOR:
            inner = self.add(name, G.XOR, fanin)
            self.specs[name] = (G.NOT, [inner])
            return True
        if rule == "demorgan" and gtype in (G.AND, G.NAND, G.OR, G.NOR):
            nots = [self.add(name, G.NOT, [f]) for f in fanin]
            dual = {G.NAND: G.OR, G.NOR: G.AND, G.AND: G.NOR, G.OR: G.NAND}[gtype]
            self.specs[name] = (dual, nots)
            return True
        if rule == "not_pair" and gtype is G.NOT:
            inner = self.specs.get(fanin[0])
            if inner is not None and inner[0] is G.NOT and fanin[0] not in self.frozen:
                self.specs[name] = (G.BUF, list(inner[1]))
                return True
            return False
        if rule == "rebalance" and gtype in (G.AND, G.OR, G.XOR) and len(fanin) >= 3:
            split = self.rng.randint(1, len(fanin) - 2)
            pair = fanin[split:split + 2]
            inner = self.add(name, gtype, pair)
            self.specs[name] = (gtype, fanin[:split] + [inner] + fanin[split + 2:])
            return True
        if rule == "rebalance" and gtype in (G.AND, G.OR, G.XOR):
            # flatten a same-type child that has no other reader
            readers = self.readers()
            for i, f in enumerate(fanin):
                child = self.specs.get(f)
                if (child and child[0] is gtype and readers.get(f) == 1
                        and f not in self.n.po_set and f not in self.frozen
                        and f not in fanin[:i] + fanin[i + 1:]):
                    self.specs[name] = (gtype, fanin[:i] + child[1] + fanin[i + 1:])
                    del self.specs[f]
                    self.order.remove(f)
                    return True
        return False

    def run_pass(self, rules: list[str]) -> None:
        for name in list(self.order):
            if name not in self.specs or name in self.frozen:
                continue
            if self.rng.random() >= self.rate:
                continue
            for rule in self.rng.sample(rules, len(rules)):
                if self.apply(rule, name):
                    break

    def result(self) -> Netlist:
        live = remove_dead_logic(Netlist.from_specs(
            self.n.name, self.n.primary_inputs, self.n.key_inputs,
            self.n.primary_outputs,
            [(name, *self.specs[name]) for name in self.order if name in self.specs],
            self.n.key_prefix), keep_pis=True)
        if live.key_inputs != self.n.key_inputs:
            live = live.replace(key_inputs=self.n.key_inputs)
        return live


def rewrite_augment_tracked(
    n: Netlist,
    rules: Iterable[str] = REWRITE_RULES,
    seed: int = 0,
    passes: int = 1,
    rate: float = 0.3,
    frozen: Iterable[str] = (),
) -> tuple[Netlist, dict[str, str]]:
    """Like :func:`rewrite_augment`, also returning new-gate -> original-gate names.

    Every rule keeps the rewritten gate's own name on the root of its
    replacement, so outputs and external readers are untouched. Gates in
    ``frozen`` are never rewritten.
    """
    rules = list(rules)
    unknown = set(rules) - set(REWRITE_RULES)
    if unknown:
        raise ValueError(f"unknown rewrite rules {sorted(unknown)}")
    if not rules:
        return n, {}
    rw = _Rewriter(n, random.Random(seed), rate, set(frozen))
    for _ in range(passes):
        rw.run_pass(rules)
    out = rw.result()
    return out, {k: v for k, v in rw.origin.items() if k in out.by_name}


def rewrite_augment(n: Netlist, rules: Iterable[str] = REWRITE_RULES, seed: int = 0,
                    passes: int = 1, rate: float = 0.3) -> Netlist:
    """Apply function-preserving local rewrites at seeded random sites."""
    return rewrite_augment_tracked(n, rules, seed, passes, rate)[0]
