"""Netlist -> undirected gate graph with node features; multi-graph datasets."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .locking import Label
from .netlist import BENCH_GATES, GateType, Netlist, NetlistError

BASE_FEATURES = ("in_degree", "out_degree", "to_pi", "to_ki", "to_po")


def feature_names(alphabet: Sequence[GateType] = BENCH_GATES) -> tuple[str, ...]:
    return BASE_FEATURES + tuple(f"n_{g.value}" for g in alphabet)


@dataclass(frozen=True)
class FeatureVector:
    in_degree: int
    out_degree: int
    to_pi: int
    to_ki: int
    to_po: int
    neigh_counts: tuple[int, ...]

    def as_array(self) -> np.ndarray:
        return np.array([self.in_degree, self.out_degree, self.to_pi, self.to_ki,
                         self.to_po, *self.neigh_counts], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class CircuitGraph:
    design: str
    names: tuple[str, ...]
    edges: np.ndarray  # (E, 2) int, u < v, sorted, unique
    features: np.ndarray  # (N, F) float64
    labels: np.ndarray | None = None  # (N,) int class index
    class_names: tuple[str, ...] = ()
    instance: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return len(self.names)

    def adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        if len(self.edges) == 0:
            return sp.csr_matrix((n, n))
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        return sp.csr_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(n, n))


def gate_edges(n: Netlist) -> np.ndarray:
    pairs = set()
    for g in n.gates:
        for f in g.fanin:
            src = n.by_name.get(f)
            if src is not None and src.id != g.id:
                pairs.add((min(src.id, g.id), max(src.id, g.id)))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(pairs), dtype=np.int64)


def extract_features(n: Netlist, gate: int | str,
                     alphabet: Sequence[GateType] = BENCH_GATES) -> FeatureVector:
    """Features of one gate; see :func:`feature_matrix` for the batched form."""
    g = n.gate(gate)
    loads = n.loads.get(g.name, ())
    out_degree = len(loads) + n.primary_outputs.count(g.name)
    neigh: dict[int, set[int]] = {}

    def adjacent(gid: int) -> set[int]:
        if gid not in neigh:
            x = n.gates[gid]
            s = {n.by_name[f].id for f in x.fanin if f in n.by_name}
            s.update(n.loads.get(x.name, ()))
            s.discard(gid)
            neigh[gid] = s
        return neigh[gid]

    ring = set(adjacent(g.id))
    for v in list(ring):
        ring |= adjacent(v)
    ring.discard(g.id)
    index = {t: i for i, t in enumerate(alphabet)}
    counts = [0] * len(alphabet)
    for v in ring:
        t = n.gates[v].gtype
        if t in index:
            counts[index[t]] += 1
    return FeatureVector(
        in_degree=len(g.fanin),
        out_degree=out_degree,
        to_pi=int(any(f in n.pi_set for f in g.fanin)),
        to_ki=int(any(f in n.ki_set for f in g.fanin)),
        to_po=int(g.name in n.po_set),
        neigh_counts=tuple(counts),
    )


def feature_matrix(n: Netlist, edges: np.ndarray | None = None,
                   alphabet: Sequence[GateType] = BENCH_GATES) -> np.ndarray:
    """All node features at once, via sparse two-hop reachability."""
    size = len(n.gates)
    edges = gate_edges(n) if edges is None else edges
    feats = np.zeros((size, len(BASE_FEATURES) + len(alphabet)))
    po_count: dict[str, int] = {}
    for o in n.primary_outputs:
        po_count[o] = po_count.get(o, 0) + 1
    for g in n.gates:
        feats[g.id, 0] = len(g.fanin)
        feats[g.id, 1] = len(n.loads.get(g.name, ())) + po_count.get(g.name, 0)
        feats[g.id, 2] = any(f in n.pi_set for f in g.fanin)
        feats[g.id, 3] = any(f in n.ki_set for f in g.fanin)
        feats[g.id, 4] = g.name in n.po_set
    if size == 0:
        return feats
    if len(edges):
        u, v = edges[:, 0], edges[:, 1]
        a = sp.csr_matrix((np.ones(2 * len(u)), (np.r_[u, v], np.r_[v, u])), shape=(size, size))
    else:
        a = sp.csr_matrix((size, size))
    reach = ((a + a @ a) > 0).astype(np.float64).tolil()
    reach.setdiag(0)
    reach = reach.tocsr()
    onehot = np.zeros((size, len(alphabet)))
    index = {t: i for i, t in enumerate(alphabet)}
    for g in n.gates:
        if g.gtype in index:
            onehot[g.id, index[g.gtype]] = 1.0
    feats[:, len(BASE_FEATURES):] = reach @ onehot
    return feats


def encode(n: Netlist, labels: Mapping[str, Label | str] | None = None,
           class_names: Sequence[Label | str] = (), instance: str = "",
           meta: dict | None = None) -> CircuitGraph:
    """One node per gate (inputs and outputs are not nodes)."""
    edges = gate_edges(n)
    feats = feature_matrix(n, edges)
    names = tuple(g.name for g in n.gates)
    y = None
    cls = tuple(Label(c).value for c in class_names)
    if labels is not None:
        if not cls:
            raise ValueError("class_names are required when labels are given")
        idx = {c: i for i, c in enumerate(cls)}
        missing = [s for s in names if s not in labels]
        if missing:
            raise NetlistError(f"labels missing for gates {missing[:5]}")
        y = np.array([idx[Label(labels[s]).value] for s in names], dtype=np.int64)
    return CircuitGraph(n.name, names, edges, feats, y, cls, instance or n.name, dict(meta or {}))


# -- datasets -------------------------------------------------------------------

TRAIN, VAL, TEST = "train", "val", "test"


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple[CircuitGraph, ...]
    offsets: np.ndarray  # (G + 1,) node offsets
    adjacency: sp.csr_matrix  # block diagonal, symmetric
    features: np.ndarray
    labels: np.ndarray | None
    feature_names: tuple[str, ...]
    class_names: tuple[str, ...]
    splits: tuple[str | None, ...]

    @property
    def num_nodes(self) -> int:
        return int(self.offsets[-1])

    @property
    def designs(self) -> list[str]:
        return sorted({g.design for g in self.graphs})

    def node_mask(self, tag: str) -> np.ndarray:
        mask = np.zeros(self.num_nodes, dtype=bool)
        for i, t in enumerate(self.splits):
            if t == tag:
                mask[self.offsets[i]:self.offsets[i + 1]] = True
        return mask

    def graph_indices(self, tag: str) -> list[int]:
        return [i for i, t in enumerate(self.splits) if t == tag]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return batch([self.graphs[i] for i in indices],
                     splits=[self.splits[i] for i in indices],
                     feature_names=self.feature_names)


def batch(graphs: Sequence[CircuitGraph], splits: Sequence[str | None] | None = None,
          feature_names: Sequence[str] | None = None) -> Dataset:
    """Stack graphs into one block-diagonal dataset."""
    if not graphs:
        raise ValueError("cannot batch an empty graph list")
    width = graphs[0].features.shape[1]
    for g in graphs:
        if g.features.shape[1] != width:
            raise ValueError(f"feature schema mismatch: {g.instance} has "
                             f"{g.features.shape[1]} features, expected {width}")
        if g.class_names != graphs[0].class_names:
            raise ValueError("class name mismatch between graphs")
    sizes = [g.num_nodes for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    adjacency = sp.block_diag([g.adjacency() for g in graphs], format="csr")
    features = np.vstack([g.features for g in graphs])
    labelled = all(g.labels is not None for g in graphs)
    labels = np.concatenate([g.labels for g in graphs]) if labelled else None
    names = tuple(feature_names) if feature_names else (
        feature_names_for_width(width))
    return Dataset(tuple(graphs), offsets, adjacency, features, labels, names,
                   graphs[0].class_names, tuple(splits) if splits else (None,) * len(graphs))


def feature_names_for_width(width: int) -> tuple[str, ...]:
    default = feature_names()
    if width == len(default):
        return default
    return tuple(f"f{i}" for i in range(width))


def split_loo(dataset: Dataset, test_design: str, val_design: str) -> Dataset:
    """Leave-one-design-out: test design -> TEST, val design -> VAL, rest -> TRAIN."""
    designs = set(dataset.designs)
    for d in (test_design, val_design):
        if d not in designs:
            raise ValueError(f"unknown design {d!r}; have {sorted(designs)}")
    if test_design == val_design:
        raise ValueError("test and validation designs must differ")
    if len(designs) < 3:
        raise ValueError("leave-one-design-out needs at least three designs")
    tags = tuple(TEST if g.design == test_design else VAL if g.design == val_design else TRAIN
                 for g in dataset.graphs)
    return replace(dataset, splits=tags)


def save_dataset(dataset: Dataset, directory: Path) -> None:
    """graphs.json, features.csv, labels.csv and splits.json (0-based indices)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "feature_names": list(dataset.feature_names),
        "class_names": list(dataset.class_names),
        "graphs": [
            {
                "instance": g.instance,
                "design": g.design,
                "offset": int(dataset.offsets[i]),
                "num_nodes": g.num_nodes,
                "names": list(g.names),
                "edges": g.edges.tolist(),
                "meta": g.meta,
            }
            for i, g in enumerate(dataset.graphs)
        ],
    }
    (directory / "graphs.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    with open(directory / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.feature_names)
        for row in dataset.features:
            w.writerow([_num(x) for x in row])
    with open(directory / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "label"])
        if dataset.labels is not None:
            for i, y in enumerate(dataset.labels):
                w.writerow([i, dataset.class_names[y]])
    splits = {g.instance: t for g, t in zip(dataset.graphs, dataset.splits)}
    (directory / "splits.json").write_text(json.dumps(splits, indent=1, sort_keys=True) + "\n")


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def load_dataset(directory: Path) -> Dataset:
    directory = Path(directory)
    meta = json.loads((directory / "graphs.json").read_text())
    with open(directory / "features.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    features = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    class_names = tuple(meta["class_names"])
    with open(directory / "labels.csv", newline="") as fh:
        lab_rows = list(csv.DictReader(fh))
    labels = None
    if lab_rows:
        idx = {c: i for i, c in enumerate(class_names)}
        labels = np.array([idx[r["label"]] for r in lab_rows], dtype=np.int64)
    splits_path = directory / "splits.json"
    split_map = json.loads(splits_path.read_text()) if splits_path.exists() else {}
    graphs = []
    for gm in meta["graphs"]:
        lo, hi = gm["offset"], gm["offset"] + gm["num_nodes"]
        edges = np.array(gm["edges"], dtype=np.int64).reshape(-1, 2)
        graphs.append(CircuitGraph(
            gm["design"], tuple(gm["names"]), edges, features[lo:hi],
            None if labels is None else labels[lo:hi], class_names,
            gm["instance"], gm.get("meta", {})))
    splits = [split_map.get(g.instance) for g in graphs]
    return batch(graphs, splits=splits, feature_names=header)
