"""Experiment stages: generate, train, attack, evaluate, report.

The attack stage is deliberately split from evaluation. ``attack_instance``
opens only the locked bench file and the checkpoint; ground truth (labels,
secrets, the original design) is read by ``evaluate_instance`` alone.
"""

from __future__ import annotations

import csv
import json
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .circuits import load_design
from .config import ExperimentConfig, Fold
from .gnn import (Metrics, Model, evaluate, load_checkpoint, metrics_from_confusion, predict,
                  save_checkpoint, train, write_history_csv)
from .graph import batch, encode, load_dataset, save_dataset, split_loo
from .locking import LockConfig, Scheme, class_names, lock, read_labels_csv, write_artifacts
from .netlist import Netlist, NetlistError, read_bench, write_bench
from .postprocess import Prediction, RectificationError, rectify, write_rectification_log
from .redact import Budget, RemovalError, Status, check_equivalence, remove_protection
from .transforms import rewrite_augment

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


class AttackError(RuntimeError):
    """The attack stage could not run (missing model, schema mismatch, no instances)."""


# -- layout ----------------------------------------------------------------------

@dataclass(frozen=True)
class Layout:
    root: Path
    scheme: Scheme

    @property
    def base(self) -> Path:
        return self.root / self.scheme.value

    def design_dir(self, design: str) -> Path:
        return self.base / design

    def original(self, design: str) -> Path:
        return self.design_dir(design) / "original.bench"

    def instance_dir(self, design: str, K: int, h: int, seed: int) -> Path:
        return self.design_dir(design) / f"{K}_{h}_{seed}"

    @property
    def dataset(self) -> Path:
        return self.base / "dataset"

    def model_dir(self, test_design: str) -> Path:
        return self.base / "models" / test_design

    def checkpoint(self, test_design: str) -> Path:
        return self.model_dir(test_design) / "checkpoint.json.gz"

    def attack_dir(self, design: str, instance: str) -> Path:
        return self.base / "attack" / design / instance

    @property
    def timing(self) -> Path:
        return self.base / "timing"

    def instances(self, design: str) -> list[Path]:
        d = self.design_dir(design)
        if not d.is_dir():
            return []
        return sorted(p for p in d.iterdir() if (p / "locked.bench").is_file())


def _write_timing(layout: Layout, stage: str, seconds: float) -> None:
    layout.timing.mkdir(parents=True, exist_ok=True)
    (layout.timing / f"{stage}.json").write_text(
        json.dumps({"stage": stage, "seconds": round(seconds, 3)}) + "\n")


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def load_base_design(cfg: ExperimentConfig, name: str) -> Netlist:
    ref = next(d for d in cfg.designs if d.name == name)
    if ref.path is None:
        return load_design(name)
    return read_bench(ref.path, name=name)


# -- dataset generation ----------------------------------------------------------

@dataclass(frozen=True)
class InstanceSpec:
    design: str
    K: int
    h: int
    seed: int

    @property
    def tag(self) -> str:
        return f"{self.K}_{self.h}_{self.seed}"


def _stable_seed(*parts) -> int:
    return zlib.crc32("/".join(map(str, parts)).encode())


def instance_plan(cfg: ExperimentConfig, designs: dict[str, Netlist]) -> list[InstanceSpec]:
    """Every (design, K, h, lock) combination that fits its design.

    A key size needing more primary inputs than the design has is skipped with
    a warning, as the original protocol did for its smallest benchmarks.
    """
    plan = []
    for name in cfg.design_names:
        n = designs[name]
        for K in cfg.K:
            for h in cfg.h:
                probe = LockConfig(cfg.scheme, K, h=h)
                try:
                    probe.check_fits(n)
                except ValueError as e:
                    log.warning("skipping: %s", e)
                    continue
                for k in range(cfg.locks_per_setting):
                    plan.append(InstanceSpec(name, K, h, cfg.seed * 1000 + k))
    if not plan:
        log.warning("configuration yields an empty dataset")
    return plan


def _generate_one(args) -> str:
    cfg, spec, root = args
    layout = Layout(Path(root), cfg.scheme)
    base = load_base_design(cfg, spec.design)
    n = base
    if cfg.design_rewrite_passes:
        n = rewrite_augment(base, seed=_stable_seed("design", spec.design, spec.tag),
                            passes=cfg.design_rewrite_passes, rate=cfg.rewrite_rate)
    lc = LockConfig(cfg.scheme, spec.K, h=spec.h, seed=spec.seed,
                    perturb_rewrite_passes=cfg.perturb_rewrite_passes)
    locked = lock(n, lc)
    write_artifacts(layout.instance_dir(spec.design, spec.K, spec.h, spec.seed), locked)
    return spec.tag


def cmd_gen_dataset(cfg: ExperimentConfig) -> Path:
    start = time.perf_counter()
    layout = Layout(Path(cfg.out), cfg.scheme)
    designs = {d: load_base_design(cfg, d) for d in cfg.design_names}
    for name, n in designs.items():
        layout.design_dir(name).mkdir(parents=True, exist_ok=True)
        layout.original(name).write_text(write_bench(n))
    plan = instance_plan(cfg, designs)
    _map(_generate_one, [(cfg, s, str(layout.root)) for s in plan], cfg.jobs)

    graphs = []
    classes = class_names(cfg.scheme)
    for s in plan:
        d = layout.instance_dir(s.design, s.K, s.h, s.seed)
        n = read_bench(d / "locked.bench", name=s.design)
        graphs.append(encode(n, read_labels_csv(d / "labels.csv"), classes,
                             instance=f"{s.design}/{s.tag}",
                             meta={"K": s.K, "h": s.h, "seed": s.seed}))
    if graphs:
        save_dataset(batch(graphs), layout.dataset)
    census = {"scheme": cfg.scheme.value, "instances": len(plan),
              "per_design": {d: sum(s.design == d for s in plan) for d in cfg.design_names}}
    layout.base.mkdir(parents=True, exist_ok=True)
    (layout.base / "census.json").write_text(json.dumps(census, indent=2, sort_keys=True) + "\n")
    _write_timing(layout, "dataset", time.perf_counter() - start)
    log.info("generated %d instances under %s", len(plan), layout.base)
    return layout.dataset


# -- training --------------------------------------------------------------------

def train_fold(cfg: ExperimentConfig, fold: Fold) -> Path:
    layout = Layout(Path(cfg.out), cfg.scheme)
    if not (layout.dataset / "graphs.json").is_file():
        raise AttackError(f"no dataset at {layout.dataset}; run gen-dataset first")
    start = time.perf_counter()
    ds = split_loo(load_dataset(layout.dataset), fold.test, fold.val)
    model, history = train(ds, cfg.train)
    out = layout.model_dir(fold.test)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, layout.checkpoint(fold.test))
    write_history_csv(history, out / "history.csv")
    (out / "fold.json").write_text(json.dumps({"test": fold.test, "val": fold.val}) + "\n")
    _write_timing(layout, f"train_{fold.test}", time.perf_counter() - start)
    return layout.checkpoint(fold.test)


def cmd_train(cfg: ExperimentConfig) -> list[Path]:
    return [train_fold(cfg, f) for f in cfg.resolved_folds()]


# -- attack (oracle-less) --------------------------------------------------------

@dataclass
class AttackOutcome:
    instance: str
    names: tuple[str, ...]
    predicted: dict[str, str]
    rectified: dict[str, str]
    recovered: Path | None
    error: str | None


def attack_instance(model: Model, scheme: Scheme, locked_bench: Path, out_dir: Path,
                    design: str) -> AttackOutcome:
    """Predict, rectify and remove using nothing but the locked netlist."""
    n = read_bench(locked_bench, name=design)
    g = encode(n)
    if model.class_names != tuple(c.value for c in class_names(scheme)):
        raise AttackError(f"checkpoint classes {model.class_names} do not fit {scheme.value}")
    cls, conf = predict(model, g)
    classes = model.class_names
    predicted = {g.names[i]: classes[c] for i, c in enumerate(cls)}
    pred = Prediction(scheme, predicted, {g.names[i]: float(p) for i, p in enumerate(conf)})
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "recovered.bench").unlink(missing_ok=True)  # never leave a stale result
    error = None
    rectified = pred
    try:
        result = rectify(n, pred)
        rectified = result.prediction
        write_rectification_log(out_dir / "rectification.csv", result.log)
    except RectificationError as e:
        error = f"rectification: {e}"
        write_rectification_log(out_dir / "rectification.csv", [])
    with open(out_dir / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gate", "predicted_class", "rectified_class", "confidence"])
        for name in g.names:
            w.writerow([name, predicted[name], rectified.classes[name].value,
                        f"{pred.confidence[name]:.6f}"])
    recovered = None
    if error is None:
        try:
            rec = remove_protection(n, rectified)
            recovered = out_dir / "recovered.bench"
            recovered.write_text(write_bench(rec))
        except (RemovalError, NetlistError) as e:
            error = f"removal: {e}"
    return AttackOutcome(locked_bench.parent.name, g.names, predicted,
                         {k: v.value for k, v in rectified.classes.items()}, recovered, error)


def attack_stage(cfg: ExperimentConfig, fold: Fold) -> list[AttackOutcome]:
    layout = Layout(Path(cfg.out), cfg.scheme)
    ckpt = layout.checkpoint(fold.test)
    if not ckpt.is_file():
        raise AttackError(f"missing checkpoint {ckpt}; run train first")
    try:
        model = load_checkpoint(ckpt)
    except (ValueError, KeyError) as e:
        raise AttackError(f"unreadable checkpoint {ckpt}: {e}") from None
    instances = layout.instances(fold.test)
    if not instances:
        raise AttackError(f"no TEST instances for {fold.test}")
    outcomes = []
    for inst in instances:
        try:
            outcomes.append(attack_instance(model, cfg.scheme, inst / "locked.bench",
                                            layout.attack_dir(fold.test, inst.name), fold.test))
        except ValueError as e:
            raise AttackError(f"{inst}: {e}") from None
    return outcomes


# -- evaluation (reads ground truth) ---------------------------------------------

@dataclass
class InstanceResult:
    instance: str
    pre: Metrics
    post: Metrics
    verdict: dict | None
    removal_success: bool
    error: str | None
    rectified_changes: int


def evaluate_instance(cfg: ExperimentConfig, design: str, outcome: AttackOutcome) -> InstanceResult:
    layout = Layout(Path(cfg.out), cfg.scheme)
    inst_dir = layout.design_dir(design) / outcome.instance
    truth = read_labels_csv(inst_dir / "labels.csv")
    classes = [c.value for c in class_names(cfg.scheme)]
    idx = {c: i for i, c in enumerate(classes)}
    y = [idx[truth[nm].value] for nm in outcome.names]
    pre = evaluate([idx[outcome.predicted[nm]] for nm in outcome.names], y, classes,
                   outcome.names)
    post = evaluate([idx[outcome.rectified[nm]] for nm in outcome.names], y, classes,
                    outcome.names)
    verdict = None
    success = False
    error = outcome.error
    if outcome.recovered is not None:
        original = read_bench(layout.original(design), name=design)
        recovered = read_bench(outcome.recovered, name=design)
        try:
            v = check_equivalence(original, recovered,
                                  Budget(count=cfg.random_vectors, seed=cfg.seed))
            verdict = v.to_dict()
            success = v.status is not Status.NOT_EQUIVALENT
        except NetlistError as e:
            error = f"verification: {e}"
    changes = sum(outcome.predicted[k] != outcome.rectified[k] for k in outcome.names)
    return InstanceResult(outcome.instance, pre, post, verdict, success, error, changes)


def _pool(results: Sequence[InstanceResult], which: str, classes) -> Metrics:
    conf = sum(getattr(r, which).confusion for r in results)
    mis = [m for r in results for m in getattr(r, which).misclassified]
    return metrics_from_confusion(conf, classes, mis)


def design_report(cfg: ExperimentConfig, fold: Fold, results: list[InstanceResult]) -> dict:
    classes = [c.value for c in class_names(cfg.scheme)]
    pre = _pool(results, "pre", classes)
    post = _pool(results, "post", classes)
    ok = sum(r.removal_success for r in results)
    return {
        "design": fold.test,
        "val_design": fold.val,
        "instances": [
            {"instance": r.instance,
             "nodes": int(r.post.confusion.sum()),
             "pre_accuracy": r.pre.accuracy,
             "post_accuracy": r.post.accuracy,
             "pre_misclassified": r.pre.misclassification_summary(),
             "post_misclassified": r.post.misclassification_summary(),
             "rectified_changes": r.rectified_changes,
             "removal_success": r.removal_success,
             "verdict": r.verdict,
             "error": r.error}
            for r in results
        ],
        "pre_rectification": pre.to_dict(),
        "post_rectification": post.to_dict(),
        "removal_success": ok / len(results) if results else 0.0,
        "num_instances": len(results),
    }


def summarize(designs: list[dict]) -> dict:
    """Dataset-level averages over designs; removal success over all instances."""
    if not designs:
        return {}
    classes = designs[0]["post_rectification"]["class_names"]
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0
    total = sum(d["num_instances"] for d in designs)
    ok = sum(i["removal_success"] for d in designs for i in d["instances"])
    out = {
        "designs": len(designs),
        "instances": total,
        "pre_accuracy": mean([d["pre_rectification"]["accuracy"] for d in designs]),
        "post_accuracy": mean([d["post_rectification"]["accuracy"] for d in designs]),
        "removal_success": ok / total if total else 0.0,
    }
    for metric in ("precision", "recall", "f1"):
        for c in classes:
            out[f"{metric}_{c}"] = mean([d["post_rectification"][metric][c] for d in designs])
    return out


def cmd_attack(cfg: ExperimentConfig, folds: Sequence[Fold] | None = None) -> dict:
    """Attack every fold's TEST design, then evaluate and write the report."""
    layout = Layout(Path(cfg.out), cfg.scheme)
    folds = list(folds or cfg.resolved_folds())
    start = time.perf_counter()
    outcomes = {f.test: attack_stage(cfg, f) for f in folds}
    attack_seconds = time.perf_counter() - start
    designs = []
    for f in folds:
        results = _map(_evaluate_args, [(cfg, f.test, o) for o in outcomes[f.test]], cfg.jobs)
        designs.append(design_report(cfg, f, results))
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "scheme": cfg.scheme.value,
        "config": cfg.to_dict(include_out=False),
        "designs": designs,
        "summary": summarize(designs),
    }
    write_report(report, layout.base)
    _write_timing(layout, "attack", attack_seconds)
    return report


def _evaluate_args(args) -> InstanceResult:
    return evaluate_instance(*args)


# -- reports ---------------------------------------------------------------------

TABLE_COLUMNS = ("design", "instances", "pre_accuracy", "post_accuracy")


def write_report(report: dict, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    classes = report["designs"][0]["post_rectification"]["class_names"] if report["designs"] else []
    with open(directory / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = list(TABLE_COLUMNS)
        for c in classes:
            head += [f"precision_{c}", f"recall_{c}", f"f1_{c}"]
        head += ["misclassified", "removal_success"]
        w.writerow(head)
        for d in report["designs"]:
            post = d["post_rectification"]
            row = [d["design"], d["num_instances"],
                   f"{d['pre_rectification']['accuracy']:.6f}", f"{post['accuracy']:.6f}"]
            for c in classes:
                row += [f"{post['precision'][c]:.6f}", f"{post['recall'][c]:.6f}",
                        f"{post['f1'][c]:.6f}"]
            row += ["; ".join(post["misclassified_summary"]) or "-",
                    f"{d['removal_success']:.6f}"]
            w.writerow(row)


def load_report(path: Path) -> dict:
    report = json.loads(Path(path).read_text())
    if report.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"{path}: report schema {report.get('schema_version')!r}, "
                         f"expected {REPORT_SCHEMA_VERSION}")
    return report


def _training_seconds(report_path: Path) -> float | None:
    timing = Path(report_path).parent / "timing"
    files = sorted(timing.glob("train_*.json")) if timing.is_dir() else []
    if not files:
        return None
    return sum(json.loads(f.read_text())["seconds"] for f in files)


def cmd_report(paths: Sequence[Path]) -> dict:
    """Average the summaries of several reports (one report -> its own summary)."""
    if not paths:
        raise ValueError("no reports given")
    reports = [load_report(p) for p in paths]
    rows = []
    for p, r in zip(paths, reports):
        row = {"report": str(p), "scheme": r["scheme"], **r["summary"]}
        secs = _training_seconds(p)
        if secs is not None:
            row["training_seconds"] = secs
        rows.append(row)
    keys = sorted({k for r in reports for k, v in r["summary"].items()
                   if isinstance(v, (int, float))})
    average = {k: float(np.mean([r["summary"][k] for r in reports if k in r["summary"]]))
               for k in keys}
    return {"schema_version": REPORT_SCHEMA_VERSION, "reports": rows, "average": average}


def verification_failed(report: dict) -> bool:
    return any(not i["removal_success"] for d in report["designs"] for i in d["instances"])
