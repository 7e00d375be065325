"""Experiment configuration: JSON file, schema-checked, with line-precise errors."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema

from .circuits import ATTACK_DESIGNS, SMALL_DESIGNS
from .gnn import TrainConfig
from .locking import Scheme


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = f"{source or 'config'}" + (f":{line}" if line else "")
        super().__init__(f"{where}: {message}")
        self.line = line


_TRAIN_PROPS = {
    "learning_rate": {"type": "number", "exclusiveMinimum": 0},
    "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "max_epochs": {"type": "integer", "minimum": 1},
    "walk_length": {"type": "integer", "minimum": 0},
    "num_roots": {"type": "integer", "minimum": 1},
    "patience": {"type": "integer", "minimum": 0},
    "hidden": {"type": "integer", "minimum": 1},
    "seed": {"type": "integer", "minimum": 0},
    "selection_metric": {"enum": ["accuracy", "loss"]},
    "class_weighting": {"type": "boolean"},
    "standardize": {"type": "boolean"},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scheme", "designs", "K"],
    "properties": {
        "name": {"type": "string"},
        "scheme": {"enum": [s.value for s in Scheme]},
        "designs": {
            "type": "array", "minItems": 1,
            "items": {"anyOf": [
                {"type": "string"},
                {"type": "object", "additionalProperties": False, "required": ["name", "path"],
                 "properties": {"name": {"type": "string"}, "path": {"type": "string"}}},
            ]},
        },
        "K": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "h": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "locks_per_setting": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "design_rewrite_passes": {"type": "integer", "minimum": 0},
        "perturb_rewrite_passes": {"type": "integer", "minimum": 0},
        "rewrite_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "train": {"type": "object", "additionalProperties": False, "properties": _TRAIN_PROPS},
        "folds": {
            "type": "array",
            "items": {"type": "object", "additionalProperties": False, "required": ["test", "val"],
                      "properties": {"test": {"type": "string"}, "val": {"type": "string"}}},
        },
        "random_vectors": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "jobs": {"type": "integer", "minimum": 1},
    },
}


@dataclass(frozen=True)
class DesignRef:
    name: str
    path: str | None = None


@dataclass(frozen=True)
class Fold:
    test: str
    val: str


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: Scheme
    designs: tuple[DesignRef, ...]
    K: tuple[int, ...]
    h: tuple[int, ...] = (0,)
    name: str = "experiment"
    locks_per_setting: int = 2
    seed: int = 0
    design_rewrite_passes: int = 1
    perturb_rewrite_passes: int = 1
    rewrite_rate: float = 0.3
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: tuple[Fold, ...] = ()
    random_vectors: int = 100_000
    out: str = "out"
    jobs: int = 1

    @property
    def design_names(self) -> list[str]:
        return [d.name for d in self.designs]

    def resolved_folds(self) -> tuple[Fold, ...]:
        """Explicit folds, or every design held out once with the next one as VAL."""
        if self.folds:
            return self.folds
        names = self.design_names
        return tuple(Fold(d, names[(i + 1) % len(names)]) for i, d in enumerate(names))

    def to_dict(self, include_out: bool = True) -> dict:
        d = {
            "name": self.name,
            "scheme": self.scheme.value,
            "designs": [dr.name if dr.path is None else {"name": dr.name, "path": dr.path}
                        for dr in self.designs],
            "K": list(self.K), "h": list(self.h),
            "locks_per_setting": self.locks_per_setting, "seed": self.seed,
            "design_rewrite_passes": self.design_rewrite_passes,
            "perturb_rewrite_passes": self.perturb_rewrite_passes,
            "rewrite_rate": self.rewrite_rate,
            "train": asdict(self.train),
            "folds": [{"test": f.test, "val": f.val} for f in self.folds],
            "random_vectors": self.random_vectors,
            "jobs": self.jobs,
        }
        if include_out:
            d["out"] = self.out
        return d

    def with_overrides(self, seed: int | None = None, out: str | None = None,
                       jobs: int | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
        if out is not None:
            cfg = replace(cfg, out=out)
        if jobs is not None:
            if jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            cfg = replace(cfg, jobs=jobs)
        return cfg


def _array_item(text: str, pos: int, index: int) -> int | None:
    """Offset of element ``index`` of the JSON array starting at or after ``pos``."""
    start = text.find("[", pos)
    if start < 0:
        return None
    depth, item, in_str, i = 0, 0, False, start
    item_start = start + 1
    while i < len(text):
        c = text[i]
        if in_str:
            if c == "\\":
                i += 1
            elif c == '"':
                in_str = False
        elif c == '"':
            in_str = True
        elif c in "[{":
            depth += 1
        elif c in "]}":
            depth -= 1
            if depth == 0:
                return None
        elif c == "," and depth == 1:
            item += 1
            item_start = i + 1
        if depth == 1 and item == index and i >= item_start and c not in " \t\r\n,":
            return i
        i += 1
    return None


def _line_of(text: str, path) -> int | None:
    """Line of the JSON member addressed by a validator path, if it can be found."""
    pos, found = 0, False
    for p in path:
        if isinstance(p, str):
            m = re.compile(r'"%s"\s*:' % re.escape(p)).search(text, pos)
            if not m:
                break
            pos = m.end()
        else:
            at = _array_item(text, pos, p)
            if at is None:
                break
            pos = at
        found = True
    return text.count("\n", 0, pos) + 1 if found else None


def parse_config(text: str, source: str = "config", base_dir: Path | None = None
                 ) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg} (column {e.colno})", e.lineno, source) from None
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        where = "/".join(map(str, e.absolute_path)) or "<root>"
        raise ConfigError(f"{where}: {e.message}", _line_of(text, list(e.absolute_path)), source)
    return _build(raw, text, source, base_dir)


def _build(raw: dict, text: str, source: str, base_dir: Path | None) -> ExperimentConfig:
    def fail(msg: str, *path) -> ConfigError:
        return ConfigError(msg, _line_of(text, list(path)), source)

    designs = []
    for i, d in enumerate(raw["designs"]):
        if isinstance(d, str):
            if d not in SMALL_DESIGNS and d not in ATTACK_DESIGNS:
                raise fail(f"unknown built-in design {d!r}", "designs", i)
            designs.append(DesignRef(d))
        else:
            p = Path(d["path"])
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            if not p.is_file():
                raise fail(f"benchmark file {d['path']!r} does not exist", "designs", i)
            designs.append(DesignRef(d["name"], str(p)))
    names = [d.name for d in designs]
    if len(set(names)) != len(names):
        raise fail("design names must be unique", "designs")
    if len(designs) < 3:
        raise fail("need at least 3 designs for train/val/test", "designs")

    scheme = Scheme(raw["scheme"])
    K = tuple(raw["K"])
    h = tuple(raw.get("h", [0]))
    if scheme is Scheme.ANTISAT and any(k % 2 for k in K):
        raise fail("Anti-SAT needs even key sizes", "K")
    if scheme is Scheme.TTLOCK and h != (0,):
        raise fail("TTLock is SFLL-HD with h = 0; set h to [0]", "h")
    if scheme is Scheme.ANTISAT and h != (0,):
        raise fail("Anti-SAT takes no Hamming distance; set h to [0]", "h")
    if scheme is Scheme.SFLL_HD and max(h) > min(K):
        raise fail(f"h={max(h)} exceeds the smallest key size {min(K)}", "h")

    folds = tuple(Fold(f["test"], f["val"]) for f in raw.get("folds", []))
    for i, f in enumerate(folds):
        for role, d in (("test", f.test), ("val", f.val)):
            if d not in names:
                raise fail(f"{role} design {d!r} is not listed in designs", "folds", i)
        if f.test == f.val:
            raise fail("test and val designs must differ", "folds", i)
    try:
        train = TrainConfig(**raw.get("train", {}))
    except (TypeError, ValueError) as e:
        raise fail(str(e), "train") from None
    plain = {k: raw[k] for k in ("name", "locks_per_setting", "seed", "design_rewrite_passes",
                                 "perturb_rewrite_passes", "rewrite_rate", "random_vectors",
                                 "out", "jobs") if k in raw}
    return ExperimentConfig(scheme=scheme, designs=tuple(designs), K=K, h=h, train=train,
                            folds=folds, **plain)


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", None, str(path)) from None
    return parse_config(text, str(path), path.parent)
