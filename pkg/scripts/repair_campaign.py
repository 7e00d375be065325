"""Single-flip repair campaign for the rectification rules.

Locks every built-in design, corrupts one ground-truth label at a time and
counts how often rectification restores the exact labels.

    python3 scripts/repair_campaign.py --keys 8 16 --seeds 0 1 --sample 200
"""

import argparse
import random
import time
from collections import Counter

from locksmith.circuits import ATTACK_DESIGNS, SMALL_DESIGNS, load_design
from locksmith.locking import Label, LockConfig, Scheme, lock
from locksmith.postprocess import Prediction, RectificationError, rectify


def campaign(designs, keys, seeds, sample, hs):
    rng = random.Random(0)
    tried, fixed, misses = Counter(), Counter(), []
    for design in designs:
        n = load_design(design)
        for scheme in Scheme:
            for K in keys:
                for h in (hs if scheme is Scheme.SFLL_HD else [0]):
                    for seed in seeds:
                        cfg = LockConfig(scheme, K, h=h, seed=seed)
                        try:
                            cfg.check_fits(n)
                        except ValueError:
                            continue
                        locked = lock(n, cfg)
                        labels = locked.labels
                        classes = sorted({Label.DESIGN, *labels.values()}, key=lambda c: c.value)
                        gates = sorted(labels)
                        if sample:
                            gates = rng.sample(gates, min(sample, len(gates)))
                        for g in gates:
                            for wrong in classes:
                                if wrong is labels[g]:
                                    continue
                                pred = dict(labels)
                                pred[g] = wrong
                                tried[scheme] += 1
                                try:
                                    out = rectify(locked.netlist, Prediction(scheme, pred))
                                    ok = out.prediction.classes == labels
                                except RectificationError:
                                    ok = False
                                fixed[scheme] += ok
                                if not ok:
                                    misses.append((design, scheme.value, K, h, seed, g,
                                                   labels[g].value, wrong.value))
    return tried, fixed, misses


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--keys", type=int, nargs="+", default=[8, 16])
    ap.add_argument("--hs", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--sample", type=int, default=0, help="gates per instance (0 = all)")
    ap.add_argument("--small-only", action="store_true")
    args = ap.parse_args()
    designs = sorted(SMALL_DESIGNS) + ([] if args.small_only else sorted(ATTACK_DESIGNS))
    t0 = time.time()
    tried, fixed, misses = campaign(designs, args.keys, args.seeds, args.sample, args.hs)
    for scheme in Scheme:
        if tried[scheme]:
            print(f"{scheme.value:8s} {fixed[scheme]}/{tried[scheme]} "
                  f"({fixed[scheme] / tried[scheme]:.2%})")
    total = sum(tried.values())
    print(f"overall  {sum(fixed.values())}/{total} ({sum(fixed.values()) / total:.2%}) "
          f"in {time.time() - t0:.0f}s")
    for m in misses[:20]:
        print("miss", *m)


if __name__ == "__main__":
    main()
