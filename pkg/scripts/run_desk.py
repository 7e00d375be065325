"""Run the desk-scale experiments and print one summary row per scheme.

    python3 scripts/run_desk.py --out runs/desk
    python3 scripts/run_desk.py --configs configs/ttlock_desk.json --out runs/tt
"""

import argparse
import time
from pathlib import Path

from locksmith.config import load_config
from locksmith.pipeline import cmd_attack, cmd_gen_dataset, cmd_train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
DEFAULT = ["antisat_desk.json", "ttlock_desk.json", "sfll_hd2_desk.json"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", nargs="+", type=Path,
                    default=[CONFIGS / name for name in DEFAULT])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--jobs", type=int)
    args = ap.parse_args()
    print(f"{'scheme':8s} {'inst':>5s} {'pre':>8s} {'post':>8s} {'removal':>8s} {'secs':>6s}")
    for path in args.configs:
        cfg = load_config(path).with_overrides(out=args.out, jobs=args.jobs)
        t0 = time.perf_counter()
        cmd_gen_dataset(cfg)
        cmd_train(cfg)
        s = cmd_attack(cfg)["summary"]
        print(f"{cfg.scheme.value:8s} {s['instances']:5d} {s['pre_accuracy']:8.4f} "
              f"{s['post_accuracy']:8.4f} {s['removal_success']:8.4f} "
              f"{time.perf_counter() - t0:6.0f}")


if __name__ == "__main__":
    main()
