"""Fast built-in oracle checks, run by ``locksmith selfcheck``."""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np
import scipy.sparse as sp

from .circuits import SMALL_DESIGNS, load_design, random_netlist
from .gnn import _dropout_masks, init_params, loss_and_grads, mean_operator
from .graph import encode
from .locking import LockConfig, Scheme, lock, stripped_netlist
from .netlist import BENCH_GATES, Netlist, exhaustive_words, simulate_words
from .postprocess import Prediction
from .redact import Status, check_equivalence, remove_protection, unlock


def round_trip(designs, Ks, hs, seeds) -> tuple[int, list[str]]:
    """Lock, then both unlock with the key and strip with oracle labels."""
    count, failures = 0, []
    for d in designs:
        n = load_design(d)
        for scheme, K, h, seed in itertools.product(Scheme, Ks, hs, seeds):
            if scheme is not Scheme.SFLL_HD and h:
                continue
            cfg = LockConfig(scheme, K, h=h, seed=seed)
            try:
                cfg.check_fits(n)
            except ValueError:
                continue
            locked = lock(n, cfg)
            key = locked.key.assignment(locked.info["key_inputs"])
            v1 = check_equivalence(n, unlock(locked.netlist, key))
            v2 = check_equivalence(n, remove_protection(locked.netlist,
                                                        Prediction(scheme, locked.labels)))
            count += 1
            for what, v in (("correct key", v1), ("oracle removal", v2)):
                if v.status is not Status.EQUIVALENT_EXHAUSTIVE:
                    failures.append(f"{d} {scheme.value} K={K} h={h} seed={seed}: {what} "
                                    f"{v.status.value}")
    return count, failures


def protected_cubes(original: Netlist, stripped: Netlist, protected: list[str]
                    ) -> tuple[int, bool]:
    """Distinct protected-input cubes on which the two circuits differ.

    Also reports whether every such cube differs on all its completions.
    """
    names = list(original.primary_inputs)
    pos = sorted(set(original.primary_outputs))
    hits: Counter = Counter()
    for words, width in exhaustive_words(names):
        a = simulate_words(original, words, width)
        b = simulate_words(stripped, words, width)
        diff = 0
        for o in pos:
            diff |= a[o] ^ b[o]
        while diff:
            low = diff & -diff
            lane = low.bit_length() - 1
            hits[tuple((words[x] >> lane) & 1 for x in protected)] += 1
            diff ^= low
    free = 2 ** (len(names) - len(protected))
    return len(hits), all(c == free for c in hits.values())


def census(design: str = "add4", K: int = 8, hs=(0, 1, 2, 4), seed: int = 0) -> list[str]:
    n = load_design(design)
    failures = []
    for h in hs:
        locked = lock(n, LockConfig(Scheme.SFLL_HD, K, h=h, seed=seed))
        cubes, whole = protected_cubes(n, stripped_netlist(locked), locked.info["protected_inputs"])
        if cubes != math.comb(K, h) or not whole:
            failures.append(f"h={h}: {cubes} cubes, expected {math.comb(K, h)}")
    return failures


def bfs_features(n: Netlist) -> np.ndarray:
    """Reference features from explicit neighbour sets and a two-hop BFS."""
    adj = {g.name: set() for g in n.gates}
    for g in n.gates:
        for f in g.fanin:
            if f in adj and f != g.name:
                adj[g.name].add(f)
                adj[f].add(g.name)
    rows = []
    for g in n.gates:
        loads = {x.name for x in n.gates if g.name in x.fanin}
        seen = {g.name}
        frontier = {g.name}
        for _ in range(2):
            frontier = {v for u in frontier for v in adj[u]} - seen
            seen |= frontier
        seen.discard(g.name)
        types = Counter(n.by_name[v].gtype for v in seen)
        rows.append([len(g.fanin), len(loads) + list(n.primary_outputs).count(g.name),
                     int(any(f in n.pi_set for f in g.fanin)),
                     int(any(f in n.ki_set for f in g.fanin)),
                     int(g.name in n.po_set)] + [types.get(t, 0) for t in BENCH_GATES])
    return np.array(rows, dtype=np.float64)


def feature_oracle(count: int, max_gates: int = 500) -> list[str]:
    failures = []
    rng = np.random.default_rng(7)
    for i in range(count):
        n = random_netlist(int(rng.integers(2, 24)), int(rng.integers(1, max_gates + 1)), seed=i)
        got = encode(n).features
        want = bfs_features(n)
        if got.shape != want.shape or not np.array_equal(got, want):
            failures.append(f"random netlist {i}: feature mismatch")
    return failures


def gradient_check(seed: int, eps: float = 1e-4, tol: float = 1e-4) -> dict[str, float]:
    """Largest relative error per parameter block against central differences."""
    rng = np.random.default_rng(seed)
    nodes, feats, hidden, classes = 24, 5, 6, 3
    a = sp.random(nodes, nodes, density=0.15, random_state=seed)
    a = ((a + a.T) > 0).astype(float)
    op = mean_operator(a)
    x = rng.normal(size=(nodes, feats))
    y = rng.integers(0, classes, nodes)
    mask = rng.random(nodes) < 0.7
    mask[0] = True
    p = init_params(feats, classes, seed, hidden=hidden)
    masks = _dropout_masks((nodes, hidden), 0.2, np.random.default_rng(seed + 1), True)
    _, grads = loss_and_grads(p, op, x, y, mask, masks=masks)
    errors = {}
    for name, w in p.as_dict().items():
        num = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            up, _ = loss_and_grads(p, op, x, y, mask, masks=masks)
            w[idx] = old - eps
            down, _ = loss_and_grads(p, op, x, y, mask, masks=masks)
            w[idx] = old
            num[idx] = (up - down) / (2 * eps)
        ana = getattr(grads, name)
        scale = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-12)
        errors[name] = float(np.linalg.norm(ana - num) / scale)
    return errors


def run_selfcheck(quick: bool = False) -> bool:
    ok = True

    def line(name: str, passed: bool, detail: str) -> None:
        nonlocal ok
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")

    designs = ["c17", "add4", "cmp6"] if quick else list(SMALL_DESIGNS)
    count, fails = round_trip(designs, [8] if quick else [8, 16], [0, 2], [0])
    line("lock/unlock round trip", not fails, f"{count} instances, {len(fails)} failures")
    fails = census()
    line("protected-pattern census", not fails, "; ".join(fails) or "C(8,h) cubes for h=0,1,2,4")
    fails = feature_oracle(10 if quick else 30, 200)
    line("feature oracle", not fails, "; ".join(fails[:3]) or "matches two-hop BFS")
    err = max(gradient_check(1).values())
    line("gradient check", err <= 1e-4, f"max relative error {err:.2e}")
    return ok
