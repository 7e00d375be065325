"""Command line entry point: ``locksmith <command> --config FILE``.

Exit codes: 0 success, 1 configuration error, 2 attack-stage failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_ATTACK, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("locksmith")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locksmith", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name: str, help_: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--jobs", type=int)
        return sp

    experiment("gen-dataset", "lock the benchmarks and encode the dataset")
    experiment("train", "train one model per leave-one-design-out fold")
    att = experiment("attack", "attack TEST designs, verify removal, write the report")
    att.add_argument("--design", action="append",
                     help="attack only this TEST design (repeatable)")
    experiment("run", "gen-dataset, train and attack in sequence")
    rep = sub.add_parser("report", help="aggregate report.json files")
    rep.add_argument("reports", nargs="+", type=Path)
    rep.add_argument("--output", type=Path)
    chk = sub.add_parser("selfcheck", help="run the built-in oracle checks")
    chk.add_argument("--quick", action="store_true")
    return p


def _config(args) -> ExperimentConfig:
    return load_config(args.config).with_overrides(args.seed, args.out, args.jobs)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import pipeline

    try:
        if args.command == "report":
            agg = pipeline.cmd_report(args.reports)
            text = json.dumps(agg, indent=2, sort_keys=True) + "\n"
            if args.output:
                args.output.write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        if args.command == "selfcheck":
            from .selfcheck import run_selfcheck
            return EXIT_OK if run_selfcheck(quick=args.quick) else EXIT_VERIFY
        cfg = _config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command in ("gen-dataset", "run"):
            pipeline.cmd_gen_dataset(cfg)
        if args.command in ("train", "run"):
            pipeline.cmd_train(cfg)
        if args.command in ("attack", "run"):
            folds = cfg.resolved_folds()
            if getattr(args, "design", None):
                unknown = set(args.design) - {f.test for f in folds}
                if unknown:
                    print(f"config error: no fold tests {sorted(unknown)}", file=sys.stderr)
                    return EXIT_CONFIG
                folds = [f for f in folds if f.test in args.design]
            report = pipeline.cmd_attack(cfg, folds)
            s = report["summary"]
            print(f"{cfg.scheme.value}: {s['instances']} instances, "
                  f"accuracy {s['pre_accuracy']:.4f} -> {s['post_accuracy']:.4f}, "
                  f"removal success {s['removal_success']:.4f}")
            if pipeline.verification_failed(report):
                return EXIT_VERIFY
    except pipeline.AttackError as e:
        print(f"attack failed: {e}", file=sys.stderr)
        return EXIT_ATTACK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
