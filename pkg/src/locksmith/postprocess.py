"""Structural rectification of per-gate class predictions.

The classifier sees only local neighbourhoods. The rules here use whole-circuit
facts the classifier cannot: whether a key input reaches a gate, which primary
inputs the restore logic compares against, and where the protection logic
meets the design.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .locking import Label, Scheme, class_names
from .netlist import ConeIndex, GateType, Netlist

log = logging.getLogger(__name__)

XOR_LIKE = (GateType.XOR, GateType.XNOR)


class RectificationError(ValueError):
    pass


@dataclass
class Prediction:
    """Class per gate name, optional confidence, and the scheme it refers to."""

    scheme: Scheme
    classes: dict[str, Label]
    confidence: dict[str, float] | None = None

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        allowed = set(class_names(self.scheme))
        self.classes = {k: Label(v) for k, v in self.classes.items()}
        bad = {v for v in self.classes.values() if v not in allowed}
        if bad:
            raise ValueError(f"classes {sorted(b.value for b in bad)} not valid for "
                             f"{self.scheme.value}")

    def check_total(self, n: Netlist) -> None:
        missing = [g.name for g in n.gates if g.name not in self.classes]
        if missing:
            raise ValueError(f"prediction misses {len(missing)} gates, e.g. {missing[:3]}")

    def with_classes(self, classes: Mapping[str, Label]) -> "Prediction":
        return Prediction(self.scheme, dict(classes), self.confidence)


@dataclass
class RectifyResult:
    prediction: Prediction
    log: list[tuple[str, str, str, str]] = field(default_factory=list)
    iterations: int = 0
    protected_inputs: frozenset[str] = frozenset()


def write_rectification_log(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gate", "predicted_class", "rectified_class", "rule_fired"])
        w.writerows(sorted(rows))


class _State:
    """Mutable per-gate classes over gate ids plus the rule that last moved each."""

    def __init__(self, n: Netlist, pred: Prediction):
        pred.check_total(n)
        self.n = n
        self.cones = ConeIndex(n)
        self.cls = [pred.classes[g.name] for g in n.gates]
        self.initial = list(self.cls)
        self.rule: dict[int, str] = {}

    def set(self, gid: int, label: Label, rule: str) -> bool:
        if self.cls[gid] is label:
            return False
        self.cls[gid] = label
        self.rule[gid] = rule
        return True

    def has_ki(self, gid: int) -> bool:
        return self.cones.fanin_kis[gid] != 0

    def gate_fanins(self, gid: int) -> list[int]:
        by = self.n.by_name
        return [by[f].id for f in self.n.gates[gid].fanin if f in by]

    def result(self, pred: Prediction, iterations: int, xs=frozenset()) -> RectifyResult:
        n = self.n
        classes = dict(pred.classes)
        rows = []
        for g in n.gates:
            classes[g.name] = self.cls[g.id]
            if self.cls[g.id] is not self.initial[g.id]:
                rows.append((g.name, self.initial[g.id].value, self.cls[g.id].value,
                             self.rule[g.id]))
        return RectifyResult(pred.with_classes(classes), rows, iterations, frozenset(xs))


def _run_to_fixpoint(state: _State, step) -> int:
    seen = {tuple(state.cls)}
    limit = len(state.cls) + 1
    for it in range(1, limit + 1):
        if not step():
            return it
        snap = tuple(state.cls)
        if snap in seen:
            raise RectificationError("rectification rules oscillate; no fixpoint")
        seen.add(snap)
    raise RectificationError(f"no fixpoint within {limit} iterations")


# -- Anti-SAT --------------------------------------------------------------------

def rectify_antisat(n: Netlist, pred: Prediction) -> RectifyResult:
    """Drop key-free ANTISAT predictions; absorb DESIGN gates fed only by the block.

    Rule 1: ANTISAT with no key input in its fan-in cone becomes DESIGN.
    Rule 2: DESIGN whose non-empty fan-in cone is all ANTISAT becomes ANTISAT.
    Rule 2k: DESIGN reading a key input directly becomes ANTISAT.
    Rule 3: a DESIGN XOR/XNOR reading an ANTISAT gate whose own cone is all
    ANTISAT is the splice and becomes ANTISAT. Design gates downstream of the
    splice read a gate whose cone holds design logic, so they never match.
    Rule 4: ANTISAT that reads neither a key input nor a block-like gate (one
    whose non-empty cone is all ANTISAT, or an ANTISAT gate fed only by
    inputs) becomes DESIGN. This catches gates past the splice, which have
    key inputs in their cone but no block logic next to them.
    """
    if pred.scheme is not Scheme.ANTISAT:
        raise RectificationError(f"expected antisat predictions, got {pred.scheme.value}")
    st = _State(n, pred)
    ki = n.ki_set

    def step() -> bool:
        changed = False
        for gid in range(len(st.cls)):
            if st.cls[gid] is Label.ANTISAT and not st.has_ki(gid):
                changed |= st.set(gid, Label.DESIGN, "antisat_no_key")
        antisat_bits = sum(1 << i for i, c in enumerate(st.cls) if c is Label.ANTISAT)
        for gid in range(len(st.cls)):
            if st.cls[gid] is not Label.DESIGN:
                continue
            cone = st.cones.fanin_gates[gid]
            if cone and cone & ~antisat_bits == 0:
                changed |= st.set(gid, Label.ANTISAT, "antisat_fanin")
            elif any(f in ki for f in n.gates[gid].fanin):
                changed |= st.set(gid, Label.ANTISAT, "antisat_key_reader")
            elif n.gates[gid].gtype in XOR_LIKE and any(
                    st.cls[f] is Label.ANTISAT and st.cones.fanin_gates[f]
                    and st.cones.fanin_gates[f] & ~antisat_bits == 0
                    for f in st.gate_fanins(gid)):
                changed |= st.set(gid, Label.ANTISAT, "antisat_splice")
        antisat_bits = sum(1 << i for i, c in enumerate(st.cls) if c is Label.ANTISAT)

        def block_like(f: int) -> bool:
            cone = st.cones.fanin_gates[f]
            return cone & ~antisat_bits == 0 and (cone != 0 or st.cls[f] is Label.ANTISAT)

        for gid in range(len(st.cls)):
            if st.cls[gid] is not Label.ANTISAT:
                continue
            if any(f in ki for f in n.gates[gid].fanin):
                continue
            if not any(block_like(f) for f in st.gate_fanins(gid)):
                changed |= st.set(gid, Label.DESIGN, "antisat_past_splice")
        return changed

    iterations = _run_to_fixpoint(st, step)
    return st.result(pred, iterations)


# -- TTLock / SFLL-HD ------------------------------------------------------------

def _restore_inputs(st: _State) -> set[str]:
    """PIs reached backwards from RESTORE gates through RESTORE gates only."""
    n = st.n
    xs: set[str] = set()
    stack = [i for i, c in enumerate(st.cls) if c is Label.RESTORE]
    seen = set(stack)
    while stack:
        gid = stack.pop()
        for f in n.gates[gid].fanin:
            if f in n.pi_set:
                xs.add(f)
                continue
            src = n.by_name.get(f)
            if src is not None and src.id not in seen and st.cls[src.id] is Label.RESTORE:
                seen.add(src.id)
                stack.append(src.id)
    return xs


def infer_protected_inputs(n: Netlist, pred: Prediction) -> frozenset[str]:
    """Primary inputs compared by the predicted restore unit."""
    if pred.scheme is Scheme.ANTISAT:
        raise RectificationError("protected-input inference applies to TTLock/SFLL-HD")
    st = _State(n, pred)
    if Label.RESTORE not in st.cls:
        raise RectificationError("no RESTORE predictions; cannot infer protected inputs")
    return frozenset(_restore_inputs(st))


def _splices(st: _State) -> tuple[set[int], set[int]]:
    """(restore splices, perturb splices) found from the current classes.

    A restore splice is a RESTORE XOR/XNOR with a key-dependent fanin and a
    key-free gate fanin; that key-free fanin, when it is itself an XOR/XNOR, is
    the perturb splice.
    """
    n = st.n
    restore_sp, perturb_sp = set(), set()
    for gid, g in enumerate(n.gates):
        if st.cls[gid] is not Label.RESTORE or g.gtype not in XOR_LIKE:
            continue
        fan = st.gate_fanins(gid)
        keyed = [f for f in fan if st.has_ki(f)] + [f for f in g.fanin if f in n.ki_set]
        free = [f for f in fan if not st.has_ki(f)]
        if keyed and free:
            restore_sp.add(gid)
            perturb_sp.update(f for f in free if n.gates[f].gtype in XOR_LIKE)
    return restore_sp, perturb_sp


def _x_pure_region(st: _State, xs_bits: int, perturb_sp: set[int]) -> set[int]:
    """Key-free gates driven only by protected inputs that reach a perturb splice
    through such gates.

    When several splice fanins qualify (every PI of the design is protected),
    only the side the current classes mostly call PERTURB is kept.
    """
    cones = st.cones

    def pure(gid: int) -> bool:
        pis = cones.fanin_pis[gid]
        return pis != 0 and pis & ~xs_bits == 0 and not st.has_ki(gid)

    def closure(start: int) -> set[int]:
        seen: set[int] = set()
        stack = [start]
        while stack:
            gid = stack.pop()
            if gid in seen or gid in perturb_sp:
                continue
            seen.add(gid)
            stack.extend(f for f in st.gate_fanins(gid) if pure(f))
        return seen

    region: set[int] = set()
    for s in sorted(perturb_sp):
        sides = [closure(f) for f in dict.fromkeys(st.gate_fanins(s)) if pure(f)]
        if len(sides) > 1:
            share = [sum(st.cls[g] is Label.PERTURB for g in side) / len(side) for side in sides]
            sides = [side for side, v in zip(sides, share) if v == max(share)]
        for side in sides:
            region |= side
    return region


def rectify_sfll(n: Netlist, pred: Prediction) -> RectifyResult:
    """Rectify TTLock/SFLL-HD predictions; rules run R, P, D then repeat.

    R: RESTORE without a key input in its cone becomes a PERTURB candidate; a
       keyed gate reading a key input or a RESTORE gate becomes RESTORE.
    S: the key-free XOR feeding the restore splice is the perturb splice.
    P: PERTURB survives only inside the protected-input region that reaches
       the perturb splice; gates with no PI in their cone keep their class.
    D: DESIGN inside that region, next to other perturb logic, becomes PERTURB.
    """
    if pred.scheme is Scheme.ANTISAT:
        raise RectificationError("rectify_sfll needs TTLock/SFLL-HD predictions")
    st = _State(n, pred)
    if Label.RESTORE not in st.cls:
        raise RectificationError("no RESTORE predictions; cannot rectify")
    pi_idx = {s: i for i, s in enumerate(n.primary_inputs)}
    ki = n.ki_set
    xs_final: set[str] = set()

    def step() -> bool:
        changed = False
        for gid, c in enumerate(st.cls):
            if c is Label.RESTORE and not st.has_ki(gid):
                changed |= st.set(gid, Label.PERTURB, "R:restore_without_key")
        for gid, g in enumerate(n.gates):
            if st.cls[gid] is Label.RESTORE or not st.has_ki(gid):
                continue
            if any(f in ki for f in g.fanin) or any(
                    st.cls[f] is Label.RESTORE for f in st.gate_fanins(gid)):
                changed |= st.set(gid, Label.RESTORE, "R:keyed_restore_reader")

        xs = _restore_inputs(st)
        xs_final.clear()
        xs_final.update(xs)
        xs_bits = sum(1 << pi_idx[x] for x in xs)
        _, perturb_sp = _splices(st)
        region = _x_pure_region(st, xs_bits, perturb_sp)
        for gid in perturb_sp:
            changed |= st.set(gid, Label.PERTURB, "S:perturb_splice")

        for gid, c in enumerate(st.cls):
            if c is not Label.PERTURB or gid in perturb_sp or gid in region:
                continue
            if st.cones.fanin_pis[gid] == 0 and not st.has_ki(gid):
                continue
            changed |= st.set(gid, Label.DESIGN, "P:not_protected_only")

        perturb_bits = sum(1 << i for i, c in enumerate(st.cls) if c is Label.PERTURB)
        for gid in sorted(region):
            if st.cls[gid] is not Label.DESIGN:
                continue
            loads = n.loads.get(n.gates[gid].name, ())
            feeds_perturb = bool(loads) and all(
                st.cls[l] is Label.PERTURB and l not in perturb_sp for l in loads)
            if st.cones.fanin_gates[gid] & perturb_bits or feeds_perturb:
                changed |= st.set(gid, Label.PERTURB, "D:protected_only")
        return changed

    iterations = _run_to_fixpoint(st, step)
    return st.result(pred, iterations, xs_final)


def rectify(n: Netlist, pred: Prediction) -> RectifyResult:
    if pred.scheme is Scheme.ANTISAT:
        return rectify_antisat(n, pred)
    return rectify_sfll(n, pred)

