"""Anti-SAT, TTLock and SFLL-HD locking with ground-truth gate labels."""

from __future__ import annotations

import csv
import enum
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

from .netlist import GateType, Netlist, NetlistError, write_bench
from .transforms import rewrite_augment_tracked

G = GateType


class Scheme(str, enum.Enum):
    ANTISAT = "antisat"
    TTLOCK = "ttlock"
    SFLL_HD = "sfll_hd"


class Label(str, enum.Enum):
    DESIGN = "design"
    PERTURB = "perturb"
    RESTORE = "restore"
    ANTISAT = "antisat"


PROTECTION = frozenset({Label.PERTURB, Label.RESTORE, Label.ANTISAT})


def class_names(scheme: Scheme | str) -> tuple[Label, ...]:
    """Class order used by the classifier: index 0 is always DESIGN."""
    if Scheme(scheme) is Scheme.ANTISAT:
        return (Label.DESIGN, Label.ANTISAT)
    return (Label.DESIGN, Label.PERTURB, Label.RESTORE)


@dataclass(frozen=True)
class SecretKey:
    bits: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.bits)

    def assignment(self, key_inputs: Sequence[str]) -> dict[str, int]:
        if len(key_inputs) != len(self.bits):
            raise ValueError("key length does not match the key inputs")
        return dict(zip(key_inputs, self.bits))


@dataclass(frozen=True)
class LockConfig:
    scheme: Scheme
    K: int
    h: int = 0
    seed: int = 0
    protected_input_policy: str = "random"  # random | first_k | explicit
    protected_inputs: tuple[str, ...] | None = None
    target_po_policy: str = "random"  # random | explicit
    target: str | None = None
    perturb_rewrite_passes: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.scheme is Scheme.TTLOCK and self.h != 0:
            raise ValueError("TTLock requires h = 0")
        if self.K < 1:
            raise ValueError("key size must be positive")
        if self.scheme is Scheme.ANTISAT and self.K % 2:
            raise ValueError("Anti-SAT needs an even key size")
        if self.scheme is Scheme.SFLL_HD and not 0 <= self.h <= self.K:
            raise ValueError(f"h={self.h} outside [0, {self.K}]")

    def check_fits(self, n: Netlist) -> None:
        need = self.K // 2 if self.scheme is Scheme.ANTISAT else self.K
        if need > len(n.primary_inputs):
            raise ValueError(f"{n.name}: {self.scheme.value} with K={self.K} needs "
                             f"{need} primary inputs, design has {len(n.primary_inputs)}")


class LockedDesign(NamedTuple):
    netlist: Netlist
    key: SecretKey
    labels: dict[str, Label]
    info: dict


class SubNetwork(NamedTuple):
    specs: list
    output: str


class _Names:
    """Fresh-name allocator that never collides with the host netlist."""

    def __init__(self, taken, prefix: str):
        self.taken = set(taken)
        self.prefix = prefix
        self.count = 0

    def __call__(self, tag: str = "") -> str:
        while True:
            name = f"{self.prefix}{tag}{self.count}"
            self.count += 1
            if name not in self.taken:
                self.taken.add(name)
                return name


def _and_tree(specs: list, names: _Names, leaves: Sequence[str], gtype=G.AND) -> str:
    """Balanced two-input tree, leaves paired in ascending order."""
    level = list(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            out = names("t")
            specs.append((out, gtype, [level[i], level[i + 1]]))
            nxt.append(out)
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def _popcount(specs: list, names: _Names, bits: Sequence[str]) -> list[str]:
    """Full/half-adder column compression; returns sum bits, LSB first."""
    out_bits = []
    column = list(bits)
    while column:
        carries = []
        while len(column) > 1:
            nxt = []
            j = 0
            while len(column) - j >= 3:
                a, b, c = column[j:j + 3]
                t, s = names("s"), names("s")
                ab, tc, cy = names("c"), names("c"), names("c")
                specs += [(t, G.XOR, [a, b]), (s, G.XOR, [t, c]),
                          (ab, G.AND, [a, b]), (tc, G.AND, [t, c]), (cy, G.OR, [ab, tc])]
                nxt.append(s)
                carries.append(cy)
                j += 3
            if len(column) - j == 2:
                a, b = column[j:j + 2]
                s, cy = names("s"), names("c")
                specs += [(s, G.XOR, [a, b]), (cy, G.AND, [a, b])]
                nxt.append(s)
                carries.append(cy)
            elif len(column) - j == 1:
                nxt.append(column[j])
            column = nxt
        out_bits.append(column[0])
        column = carries
    return out_bits


def build_hd_checker(
    width: int,
    h: int,
    key: Sequence[int] | None = None,
    inputs: Sequence[str] | None = None,
    key_inputs: Sequence[str] | None = None,
    names: _Names | None = None,
) -> SubNetwork:
    """Gate network computing ``popcount(inputs ^ key) == h``.

    With a hard-coded ``key`` the difference layer is NOT (bit 1) or BUF (bit
    0); otherwise it XORs each input with a key input. ``h == 0`` skips the
    adder tree and reduces per-bit equalities with an AND tree.
    """
    if not 0 <= h <= width:
        raise ValueError(f"h={h} outside [0, {width}]")
    inputs = list(inputs or [f"x{i}" for i in range(width)])
    if key is None:
        key_inputs = list(key_inputs or [f"keyinput{i}" for i in range(width)])
        if len(key_inputs) != width:
            raise ValueError("need one key input per checked bit")
    elif len(key) != width:
        raise ValueError("hard-coded key length must equal width")
    if len(inputs) != width:
        raise ValueError("need one input per checked bit")
    names = names or _Names(inputs + list(key_inputs or []), "hd_")
    specs: list = []

    def layer(i: int, equality: bool) -> str:
        out = names("d")
        if key is None:
            gtype = G.XNOR if equality else G.XOR
            specs.append((out, gtype, [inputs[i], key_inputs[i]]))
        else:
            invert = bool(key[i]) ^ equality
            specs.append((out, G.NOT if invert else G.BUF, [inputs[i]]))
        return out

    if h == 0:
        eq_bits = [layer(i, equality=True) for i in range(width)]
        return SubNetwork(specs, _and_tree(specs, names, eq_bits))

    diff = [layer(i, equality=False) for i in range(width)]
    sums = _popcount(specs, names, diff)
    terms = []
    for j, s in enumerate(sums):
        if (h >> j) & 1:
            terms.append(s)
        else:
            inv = names("n")
            specs.append((inv, G.NOT, [s]))
            terms.append(inv)
    out = _and_tree(specs, names, terms)
    return SubNetwork(specs, out)


def checker_netlist(sub: SubNetwork, inputs: Sequence[str], key_inputs: Sequence[str] = ()
                    ) -> Netlist:
    return Netlist.from_specs("hd_checker", inputs, key_inputs, [sub.output], sub.specs)


# -- splicing --------------------------------------------------------------------

def _choose(rng: random.Random, pool: Sequence[str], k: int, policy: str,
            explicit: Sequence[str] | None, what: str) -> list[str]:
    if policy == "explicit":
        if explicit is None or len(explicit) != k:
            raise ValueError(f"explicit {what} list must have {k} entries")
        missing = set(explicit) - set(pool)
        if missing:
            raise ValueError(f"unknown {what}: {sorted(missing)}")
        return list(explicit)
    if policy == "first_k":
        return list(pool[:k])
    if policy == "random":
        return rng.sample(list(pool), k)
    raise ValueError(f"unknown selection policy {policy!r}")


def _free_output_driver(n: Netlist, specs: list, po: str, taken: set[str]) -> str:
    """Rename the gate driving output ``po`` so a splice gate can take its name."""
    new = f"{po}_orig"
    k = 0
    while new in taken:
        k += 1
        new = f"{po}_orig{k}"
    taken.add(new)
    for i, (name, gtype, fanin) in enumerate(specs):
        if name == po:
            name = new
        specs[i] = (name, gtype, [new if f == po else f for f in fanin])
    return new


def _rewire_loads(specs: list, net: str, new: str) -> None:
    for i, (name, gtype, fanin) in enumerate(specs):
        if net in fanin:
            specs[i] = (name, gtype, [new if f == net else f for f in fanin])


def _key_input_names(n: Netlist, count: int) -> list[str]:
    taken = set(n.key_inputs)
    out, j = [], 0
    while len(out) < count:
        name = f"{n.key_prefix}{j}"
        if name not in taken:
            out.append(name)
        j += 1
    return out


def lock_antisat(n: Netlist, K: int, seed: int, config: LockConfig | None = None) -> LockedDesign:
    """Insert an Anti-SAT block with an AND-tree ``g`` and XOR it into an internal net."""
    cfg = config or LockConfig(Scheme.ANTISAT, K, seed=seed)
    if cfg.scheme is not Scheme.ANTISAT:
        raise ValueError("config scheme must be antisat")
    cfg.check_fits(n)
    rng = random.Random(seed)
    half = K // 2
    xs = _choose(rng, n.primary_inputs, half, cfg.protected_input_policy,
                 cfg.protected_inputs, "protected inputs")
    kl1 = [rng.randint(0, 1) for _ in range(half)]
    key = SecretKey(tuple(kl1 + kl1))
    kis = _key_input_names(n, K)

    taken = set(n.by_name) | set(n.inputs) | set(kis)
    names = _Names(taken, "as_")
    block: list = []
    b1 = []
    b2 = []
    for i, x in enumerate(xs):
        b1.append(names("k"))
        block.append((b1[-1], G.XOR, [x, kis[i]]))
    for i, x in enumerate(xs):
        b2.append(names("k"))
        block.append((b2[-1], G.XOR, [x, kis[half + i]]))
    g1 = _and_tree(block, names, b1)
    g2 = _and_tree(block, names, b2)
    g2n = names("n")
    y = names("y")
    block += [(g2n, G.NOT, [g2]), (y, G.AND, [g1, g2n])]

    specs = [(a, b, list(c)) for a, b, c in n.specs()]
    target = _pick_target(n, rng, cfg)
    labels = {g.name: Label.DESIGN for g in n.gates}
    if target in n.po_set:
        driver = _free_output_driver(n, specs, target, names.taken)
        labels[driver] = labels.pop(target)
        splice = target
        splice_spec = (splice, G.XOR, [driver, y])
    else:
        splice = names("int")
        _rewire_loads(specs, target, splice)
        splice_spec = (splice, G.XOR, [target, y])
    specs += block + [splice_spec]
    labels.update({s[0]: Label.ANTISAT for s in block})
    labels[splice] = Label.ANTISAT

    locked = Netlist.from_specs(n.name, n.primary_inputs, n.key_inputs + tuple(kis),
                                n.primary_outputs, specs, n.key_prefix)
    info = dict(scheme=Scheme.ANTISAT.value, K=K, h=None, seed=seed,
                protected_inputs=xs, target=target, key_inputs=kis,
                integration_gates=[splice])
    return LockedDesign(locked, key, labels, info)


def _pick_target(n: Netlist, rng: random.Random, cfg: LockConfig) -> str:
    if cfg.target_po_policy == "explicit":
        if cfg.target is None or cfg.target not in n.by_name:
            raise ValueError(f"explicit target {cfg.target!r} is not a gate net")
        return cfg.target
    internal = [g.name for g in n.gates if g.name not in n.po_set and n.loads.get(g.name)]
    if internal:
        return rng.choice(internal)
    return rng.choice(_gate_outputs(n))


def _gate_outputs(n: Netlist) -> list[str]:
    outs = list(dict.fromkeys(o for o in n.primary_outputs if o in n.by_name))
    if not outs:
        raise NetlistError(f"{n.name}: no gate-driven primary output to lock")
    return outs


def lock_sfll_hd(n: Netlist, K: int, h: int, seed: int,
                 config: LockConfig | None = None) -> LockedDesign:
    """Strip the function on patterns at Hamming distance ``h`` and add a restore unit."""
    scheme = Scheme.TTLOCK if config is not None and config.scheme is Scheme.TTLOCK else Scheme.SFLL_HD
    cfg = config or LockConfig(Scheme.SFLL_HD, K, h=h, seed=seed)
    cfg.check_fits(n)
    if not 0 <= h <= K:
        raise ValueError(f"h={h} outside [0, {K}]")
    rng = random.Random(seed)
    xs = _choose(rng, n.primary_inputs, K, cfg.protected_input_policy,
                 cfg.protected_inputs, "protected inputs")
    key = SecretKey(tuple(rng.randint(0, 1) for _ in range(K)))
    kis = _key_input_names(n, K)
    if cfg.target_po_policy == "explicit":
        if cfg.target not in _gate_outputs(n):
            raise ValueError(f"explicit target {cfg.target!r} is not a gate-driven output")
        po = cfg.target
    else:
        po = rng.choice(_gate_outputs(n))

    taken = set(n.by_name) | set(n.inputs) | set(kis)
    p_names = _Names(taken, "pt_")
    perturb = build_hd_checker(K, h, key=key.bits, inputs=xs, names=p_names)
    r_names = _Names(p_names.taken, "rs_")
    restore = build_hd_checker(K, h, inputs=xs, key_inputs=kis, names=r_names)
    taken = r_names.taken

    p_specs, p_out = perturb.specs, perturb.output
    if cfg.perturb_rewrite_passes > 0:
        sub = Netlist.from_specs("perturb", xs, (), [p_out], p_specs)
        sub, _ = rewrite_augment_tracked(sub, seed=rng.randrange(2**31),
                                         passes=cfg.perturb_rewrite_passes)
        p_specs = sub.specs()

    specs = [(a, b, list(c)) for a, b, c in n.specs()]
    labels = {g.name: Label.DESIGN for g in n.gates}
    driver = _free_output_driver(n, specs, po, taken)
    labels[driver] = labels.pop(po)
    pxor = _Names(taken, "pt_")("int")
    specs += list(p_specs) + list(restore.specs)
    specs += [(pxor, G.XOR, [driver, p_out]), (po, G.XOR, [pxor, restore.output])]
    labels.update({s[0]: Label.PERTURB for s in p_specs})
    labels.update({s[0]: Label.RESTORE for s in restore.specs})
    labels[pxor] = Label.PERTURB
    labels[po] = Label.RESTORE

    locked = Netlist.from_specs(n.name, n.primary_inputs, n.key_inputs + tuple(kis),
                                n.primary_outputs, specs, n.key_prefix)
    info = dict(scheme=scheme.value, K=K, h=h, seed=seed, protected_inputs=xs,
                target=po, key_inputs=kis, integration_gates=[pxor, po],
                perturb_output=p_out, restore_output=restore.output)
    return LockedDesign(locked, key, labels, info)


def lock_ttlock(n: Netlist, K: int, seed: int, config: LockConfig | None = None) -> LockedDesign:
    """TTLock is SFLL-HD with ``h = 0``."""
    cfg = config or LockConfig(Scheme.TTLOCK, K, h=0, seed=seed)
    return lock_sfll_hd(n, K, 0, seed, cfg)


def lock(n: Netlist, cfg: LockConfig) -> LockedDesign:
    if cfg.scheme is Scheme.ANTISAT:
        return lock_antisat(n, cfg.K, cfg.seed, cfg)
    if cfg.scheme is Scheme.TTLOCK:
        return lock_ttlock(n, cfg.K, cfg.seed, cfg)
    return lock_sfll_hd(n, cfg.K, cfg.h, cfg.seed, cfg)


def stripped_netlist(locked: LockedDesign) -> Netlist:
    """The functionality-stripped circuit: perturb unit kept, restore splice bypassed."""
    if "restore_output" not in locked.info:
        raise ValueError("only SFLL/TTLock designs have a stripped circuit")
    from .transforms import constant_propagate, remove_dead_logic

    n = constant_propagate(locked.netlist, {locked.info["restore_output"]: 0})
    return remove_dead_logic(n, keep_pis=True)


# -- artifacts -------------------------------------------------------------------

def write_labels_csv(path: Path, labels: dict[str, Label]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gate_name", "class"])
        for name in sorted(labels):
            w.writerow([name, labels[name].value])


def read_labels_csv(path: Path) -> dict[str, Label]:
    with open(path, newline="") as fh:
        return {row["gate_name"]: Label(row["class"]) for row in csv.DictReader(fh)}


def write_artifacts(directory: Path, locked: LockedDesign) -> None:
    """Write ``locked.bench``, ``labels.csv``, ``meta.json`` and ``secret.json``.

    ``secret.json`` holds the key bits; only the evaluator may read it.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "locked.bench").write_text(write_bench(locked.netlist))
    write_labels_csv(directory / "labels.csv", locked.labels)
    meta = {k: v for k, v in locked.info.items()}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    secret = {"key_inputs": locked.info["key_inputs"], "bits": list(locked.key.bits)}
    (directory / "secret.json").write_text(json.dumps(secret, indent=2) + "\n")
