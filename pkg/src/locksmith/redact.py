"""Protection removal and simulation-based equivalence checking."""

from __future__ import annotations

import enum
import logging
import random
from dataclasses import dataclass, field

from .locking import PROTECTION
from .netlist import Netlist, NetlistError, exhaustive_words, simulate, simulate_words
from .postprocess import XOR_LIKE, Prediction
from .transforms import constant_propagate, remove_dead_logic

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT_LOG2 = 24
DEFAULT_RANDOM_VECTORS = 100_000


class RemovalError(NetlistError):
    """Protection removal left key-dependent logic behind."""

    def __init__(self, message: str, paths: list[list[str]] | None = None):
        super().__init__(message)
        self.paths = paths or []


def find_integration_gates(n: Netlist, pred: Prediction) -> list[int]:
    """Protection XOR/XNOR gates that mix their own class with a foreign net.

    A gate qualifies when at least one fanin is a gate of the same class and
    another is a primary input or a gate of a different class. Key inputs do
    not count as foreign, so the key-comparison layer is never selected.
    """
    cls = pred.classes
    found = []
    for g in n.gates:
        own = cls.get(g.name)
        if own not in PROTECTION or g.gtype not in XOR_LIKE:
            continue
        same = foreign = False
        for f in g.fanin:
            if f in n.ki_set:
                continue
            if f in n.pi_set:
                foreign = True
            elif cls.get(f) is own:
                same = True
            else:
                foreign = True
        if same and foreign:
            found.append(g.id)
    if not found:
        raise RemovalError("no integration gate found among the protection predictions")
    return found


def remove_protection(n: Netlist, pred: Prediction) -> Netlist:
    """Tie the protection side of every splice to 0 and sweep what is left.

    Raises :class:`RemovalError` if key inputs survive; the message lists a
    path from each surviving key input to an output.
    """
    pred.check_total(n)
    if not any(c in PROTECTION for c in pred.classes.values()):
        return n
    splices = find_integration_gates(n, pred)
    pins: dict[str, int] = {}
    for gid in splices:
        g = n.gates[gid]
        own = pred.classes[g.name]
        for f in g.fanin:
            if f not in n.ki_set and f not in n.pi_set and pred.classes.get(f) is own:
                pins[f] = 0
    out = remove_dead_logic(constant_propagate(n, pins), keep_pis=True)
    if out.key_inputs:
        paths = [_path_to_output(out, k) for k in out.key_inputs]
        shown = "; ".join(" -> ".join(p) for p in paths[:3])
        raise RemovalError(f"{len(out.key_inputs)} key inputs still reach outputs: {shown}",
                           paths)
    return out


def _path_to_output(n: Netlist, source: str) -> list[str]:
    """Shortest load path from ``source`` to a primary output (BFS)."""
    prev: dict[str, str | None] = {source: None}
    frontier = [source]
    while frontier:
        nxt = []
        for s in frontier:
            if s in n.po_set:
                path = [s]
                while prev[path[-1]] is not None:
                    path.append(prev[path[-1]])
                return path[::-1]
            for gid in n.loads.get(s, ()):
                name = n.gates[gid].name
                if name not in prev:
                    prev[name] = s
                    nxt.append(name)
        frontier = nxt
    return [source]


def residual_protection(recovered: Netlist, original_locked: Netlist, pred: Prediction
                        ) -> list[str]:
    """Protection-labelled gates that survived removal, splice names excluded.

    An output-driving splice keeps its name because it takes over the design
    function once the protection side is tied off.
    """
    splices = {original_locked.gates[i].name for i in find_integration_gates(original_locked, pred)}
    return sorted(g.name for g in recovered.gates
                  if pred.classes.get(g.name) in PROTECTION and g.name not in splices)


# -- equivalence -----------------------------------------------------------------

class Status(str, enum.Enum):
    EQUIVALENT_EXHAUSTIVE = "EQUIVALENT_EXHAUSTIVE"
    EQUIVALENT_SAMPLED = "EQUIVALENT_SAMPLED"
    NOT_EQUIVALENT = "NOT_EQUIVALENT"


@dataclass(frozen=True)
class Budget:
    """``mode`` is "auto", "exhaustive" or "random"."""

    mode: str = "auto"
    count: int = DEFAULT_RANDOM_VECTORS
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("auto", "exhaustive", "random"):
            raise ValueError(f"unknown budget mode {self.mode!r}")
        if self.count < 1:
            raise ValueError("random budget needs at least one vector")


@dataclass
class EquivalenceVerdict:
    status: Status
    vectors_checked: int
    counterexample: dict[str, int] | None = None
    differing_outputs: list[str] = field(default_factory=list)

    @property
    def equivalent(self) -> bool:
        return self.status is not Status.NOT_EQUIVALENT

    def to_dict(self) -> dict:
        return {"status": self.status.value, "vectors_checked": self.vectors_checked,
                "counterexample": self.counterexample,
                "differing_outputs": self.differing_outputs}


def _check_interface(a: Netlist, b: Netlist) -> None:
    if a.key_inputs or b.key_inputs:
        raise NetlistError("equivalence checking needs key-free netlists")
    if set(a.primary_inputs) != set(b.primary_inputs):
        diff = sorted(set(a.primary_inputs) ^ set(b.primary_inputs))
        raise NetlistError(f"primary inputs differ: {diff[:5]}")
    if set(a.primary_outputs) != set(b.primary_outputs):
        diff = sorted(set(a.primary_outputs) ^ set(b.primary_outputs))
        raise NetlistError(f"primary outputs differ: {diff[:5]}")


def _first_mismatch(a, b, outs, words, width):
    va = simulate_words(a, words, width)
    vb = simulate_words(b, words, width)
    diff = 0
    for o in outs:
        diff |= va[o] ^ vb[o]
    if not diff:
        return None
    lane = (diff & -diff).bit_length() - 1
    return lane, [o for o in outs if (va[o] ^ vb[o]) >> lane & 1]


def check_equivalence(a: Netlist, b: Netlist, budget: Budget = Budget()) -> EquivalenceVerdict:
    """Compare two key-free netlists output by output.

    Inputs are matched by name and enumerated in sorted-name order, so the
    verdict does not depend on argument order. Exhaustive enumeration is used
    when it costs at most 2^24 patterns (or when asked for explicitly).
    """
    _check_interface(a, b)
    names = sorted(a.primary_inputs)
    outs = sorted(set(a.primary_outputs))
    exhaustive = budget.mode == "exhaustive" or (
        budget.mode == "auto" and len(names) <= EXHAUSTIVE_LIMIT_LOG2)
    if budget.mode == "exhaustive" and len(names) > EXHAUSTIVE_LIMIT_LOG2:
        raise ValueError(f"{len(names)} inputs exceed the exhaustive limit of "
                         f"2^{EXHAUSTIVE_LIMIT_LOG2} patterns")
    checked = 0
    if exhaustive:
        for words, width in exhaustive_words(names):
            hit = _first_mismatch(a, b, outs, words, width)
            if hit is not None:
                lane, diff = hit
                cex = {s: (words[s] >> lane) & 1 for s in names}
                return _confirmed(a, b, cex, checked + lane + 1, diff)
            checked += width
        return EquivalenceVerdict(Status.EQUIVALENT_EXHAUSTIVE, checked)

    rng = random.Random(budget.seed)
    chunk = 1 << 16
    while checked < budget.count:
        width = min(chunk, budget.count - checked)
        words = {s: rng.getrandbits(width) for s in names}
        hit = _first_mismatch(a, b, outs, words, width)
        if hit is not None:
            lane, diff = hit
            cex = {s: (words[s] >> lane) & 1 for s in names}
            return _confirmed(a, b, cex, checked + lane + 1, diff)
        checked += width
    return EquivalenceVerdict(Status.EQUIVALENT_SAMPLED, checked)


def _confirmed(a, b, cex, checked, diff) -> EquivalenceVerdict:
    ra, rb = simulate(a, cex), simulate(b, cex)
    if not any(ra[o] != rb[o] for o in diff):
        raise AssertionError("counterexample did not reproduce under re-simulation")
    return EquivalenceVerdict(Status.NOT_EQUIVALENT, checked, cex, diff)


def unlock(n: Netlist, key: dict[str, int]) -> Netlist:
    """The locked netlist with the key applied and key inputs swept away."""
    return remove_dead_logic(constant_propagate(n, key), keep_pis=True)
