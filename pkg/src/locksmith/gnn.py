"""Two-layer GraphSAGE node classifier written directly in numpy.

Aggregation is mean-with-concatenation: each hidden layer sees
``[h_self, mean(h_neighbours)]``. Minibatches are subgraphs induced by short
random walks. Gradients are hand-derived; ``tests/test_gnn.py`` checks them
against finite differences.
"""

from __future__ import annotations

import copy
import gzip
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import TRAIN, VAL, CircuitGraph, Dataset

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PARAM_NAMES = ("W_in", "b_in", "W_h1", "b_h1", "W_h2", "b_h2", "W_out", "b_out")


@dataclass
class ModelParams:
    W_in: np.ndarray
    b_in: np.ndarray
    W_h1: np.ndarray
    b_h1: np.ndarray
    W_h2: np.ndarray
    b_h2: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "ModelParams":
        return cls(**{k: d[k] for k in PARAM_NAMES})

    def copy(self) -> "ModelParams":
        return ModelParams.from_dict({k: v.copy() for k, v in self.as_dict().items()})

    @property
    def feature_dim(self) -> int:
        return self.W_in.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_in.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W_out.shape[1]


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    dropout: float = 0.1
    max_epochs: int = 2000
    walk_length: int = 2
    num_roots: int = 3000
    patience: int = 200
    hidden: int = 512
    seed: int = 0
    selection_metric: str = "accuracy"
    class_weighting: bool = False
    standardize: bool = False

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.num_roots < 1:
            raise ValueError("num_roots must be >= 1")
        if self.selection_metric not in ("accuracy", "loss"):
            raise ValueError("selection_metric must be 'accuracy' or 'loss'")


@dataclass
class Model:
    """Trained parameters plus what is needed to apply them to new graphs."""

    params: ModelParams
    class_names: tuple[str, ...]
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    config: TrainConfig = field(default_factory=TrainConfig)

    def prepare(self, features: np.ndarray) -> np.ndarray:
        if features.shape[1] != self.params.feature_dim:
            raise ValueError(f"feature schema mismatch: got {features.shape[1]} "
                             f"features, model expects {self.params.feature_dim}")
        if self.feature_mean is None:
            return features
        return (features - self.feature_mean) / self.feature_std


def init_params(feature_dim: int, num_classes: int, seed: int, hidden: int = 512) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)

    def w(fan_in: int, fan_out: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return ModelParams(
        W_in=w(feature_dim, hidden), b_in=np.zeros(hidden),
        W_h1=w(2 * hidden, hidden), b_h1=np.zeros(hidden),
        W_h2=w(2 * hidden, hidden), b_h2=np.zeros(hidden),
        W_out=w(hidden, num_classes), b_out=np.zeros(num_classes),
    )


def mean_operator(adjacency: sp.spmatrix) -> sp.csr_matrix:
    """Row-normalised adjacency; isolated nodes get an all-zero row."""
    a = sp.csr_matrix(adjacency, dtype=np.float64)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sp.diags(inv) @ a


# -- sampling ----------------------------------------------------------------------

@dataclass
class SampledSubgraph:
    nodes: np.ndarray  # global ids, sorted
    adjacency: sp.csr_matrix  # induced, local ids

    @property
    def edges(self) -> np.ndarray:
        coo = sp.triu(self.adjacency, k=1).tocoo()
        return np.stack([coo.row, coo.col], axis=1)


def random_walk_nodes(adjacency: sp.csr_matrix, roots: np.ndarray, walk_length: int,
                      rng: np.random.Generator) -> np.ndarray:
    indptr, indices = adjacency.indptr, adjacency.indices
    visited = [roots]
    cur = roots.copy()
    for _ in range(walk_length):
        deg = indptr[cur + 1] - indptr[cur]
        step = np.floor(rng.random(len(cur)) * np.maximum(deg, 1)).astype(np.int64)
        moving = deg > 0
        nxt = cur.copy()
        nxt[moving] = indices[indptr[cur[moving]] + step[moving]]
        cur = nxt
        visited.append(cur)
    return np.unique(np.concatenate(visited))


def sample_subgraph(adjacency: sp.csr_matrix, candidates: np.ndarray, cfg: TrainConfig,
                    rng: np.random.Generator) -> SampledSubgraph:
    """Union of random walks from uniformly drawn roots, as an induced subgraph.

    ``candidates`` are the TRAIN node ids; walks cannot leave their graph
    because the dataset adjacency is block diagonal.
    """
    k = min(cfg.num_roots, len(candidates))
    roots = np.sort(rng.choice(candidates, size=k, replace=False))
    nodes = random_walk_nodes(adjacency, roots, cfg.walk_length, rng)
    sub = adjacency[nodes][:, nodes].tocsr()
    return SampledSubgraph(nodes, sub)


# -- forward / backward ------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _dropout_masks(shape: tuple[int, int], rate: float, rng: np.random.Generator | None,
                   active: bool) -> list[np.ndarray | None]:
    if not active or rate == 0 or rng is None:
        return [None, None, None]
    keep = 1.0 - rate
    return [(rng.random(shape) < keep) / keep for _ in range(3)]


def _forward(p: ModelParams, mean_op: sp.csr_matrix, x: np.ndarray, masks) -> dict:
    c: dict = {"x": x, "masks": masks, "mean_op": mean_op}
    z0 = x @ p.W_in + p.b_in
    h = np.maximum(z0, 0.0)
    if masks[0] is not None:
        h = h * masks[0]
    c["z0"], c["h0"] = z0, h
    for k, (w, b) in enumerate(((p.W_h1, p.b_h1), (p.W_h2, p.b_h2)), start=1):
        cat = np.hstack([h, mean_op @ h])
        z = cat @ w + b
        h = np.maximum(z, 0.0)
        if masks[k] is not None:
            h = h * masks[k]
        c[f"cat{k}"], c[f"z{k}"], c[f"h{k}"] = cat, z, h
    logits = h @ p.W_out + p.b_out
    c["probs"] = _softmax(logits)
    return c


def forward(p: ModelParams, mean_op: sp.csr_matrix, x: np.ndarray,
            dropout_active: bool = False, rng: np.random.Generator | None = None,
            dropout: float = 0.0) -> np.ndarray:
    """Class probabilities for every node, shape (nodes, classes)."""
    if x.shape[1] != p.feature_dim:
        raise ValueError(f"feature dim {x.shape[1]} != model input dim {p.feature_dim}")
    if mean_op.shape[0] != x.shape[0]:
        raise ValueError("adjacency and feature rows disagree")
    masks = _dropout_masks((x.shape[0], p.hidden), dropout, rng, dropout_active)
    return _forward(p, mean_op, x, masks)["probs"]


def loss_and_grads(p: ModelParams, mean_op: sp.csr_matrix, x: np.ndarray, labels: np.ndarray,
                   mask: np.ndarray, rng: np.random.Generator | None = None,
                   dropout: float = 0.0, class_weights: np.ndarray | None = None,
                   masks=None) -> tuple[float, ModelParams]:
    """Mean (optionally class-weighted) cross-entropy over ``mask`` and its gradient."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("empty loss mask")
    if masks is None:
        masks = _dropout_masks((x.shape[0], p.hidden), dropout, rng, rng is not None)
    c = _forward(p, mean_op, x, masks)
    probs = c["probs"]
    y = labels[idx]
    w = np.ones(len(idx)) if class_weights is None else class_weights[y]
    total = w.sum()
    picked = probs[idx, y]
    loss = float(-(w * np.log(np.maximum(picked, 1e-300))).sum() / total)

    d_logits = np.zeros_like(probs)
    d_logits[idx] = probs[idx]
    d_logits[idx, y] -= 1.0
    d_logits[idx] *= (w / total)[:, None]

    g: dict[str, np.ndarray] = {}
    h2 = c["h2"]
    g["W_out"] = h2.T @ d_logits
    g["b_out"] = d_logits.sum(axis=0)
    d_h = d_logits @ p.W_out.T
    mean_t = mean_op.T.tocsr()
    hidden = p.hidden
    for k, w_name, b_name in ((2, "W_h2", "b_h2"), (1, "W_h1", "b_h1")):
        if masks[k] is not None:
            d_h = d_h * masks[k]
        d_z = d_h * (c[f"z{k}"] > 0)
        g[w_name] = c[f"cat{k}"].T @ d_z
        g[b_name] = d_z.sum(axis=0)
        d_cat = d_z @ getattr(p, w_name).T
        d_h = d_cat[:, :hidden] + mean_t @ d_cat[:, hidden:]
    if masks[0] is not None:
        d_h = d_h * masks[0]
    d_z0 = d_h * (c["z0"] > 0)
    g["W_in"] = c["x"].T @ d_z0
    g["b_in"] = d_z0.sum(axis=0)
    return loss, ModelParams.from_dict(g)


# -- optimiser ---------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, p: ModelParams) -> "AdamState":
        d = p.as_dict()
        return cls({k: np.zeros_like(a) for k, a in d.items()},
                   {k: np.zeros_like(a) for k, a in d.items()}, 0)


def adam_step(p: ModelParams, grads: ModelParams, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
              ) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    t = state.t + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    gd = grads.as_dict()
    for k, a in p.as_dict().items():
        g = gd[k]
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        new_p[k] = a - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[k], new_v[k] = m, v
    return ModelParams.from_dict(new_p), AdamState(new_m, new_v, t)


# -- training ----------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float


def _gather_labels(dataset: Dataset, idx: np.ndarray, purpose: str,
                   access_log: list | None) -> np.ndarray:
    if access_log is not None:
        access_log.append((purpose, idx.copy()))
    return dataset.labels[idx]


def _induced(dataset: Dataset, idx: np.ndarray) -> sp.csr_matrix:
    return dataset.adjacency[idx][:, idx].tocsr()


def train(dataset: Dataset, cfg: TrainConfig, access_log: list | None = None,
          init: ModelParams | None = None) -> tuple[Model, list[EpochRecord]]:
    """Fit on TRAIN graphs, keep the parameters with the best VAL score.

    Labels are read only through ``_gather_labels``; pass ``access_log`` to
    record which node ids were read and why.
    """
    if dataset.labels is None:
        raise ValueError("dataset has no labels")
    train_idx = np.flatnonzero(dataset.node_mask(TRAIN))
    val_idx = np.flatnonzero(dataset.node_mask(VAL))
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ValueError("training needs non-empty TRAIN and VAL splits")
    num_classes = len(dataset.class_names)
    rng = np.random.default_rng(cfg.seed)
    y_train = np.full(dataset.num_nodes, -1, dtype=np.int64)
    y_train[train_idx] = _gather_labels(dataset, train_idx, "train", access_log)

    mean = std = None
    if cfg.standardize:
        mean = dataset.features[train_idx].mean(axis=0)
        std = dataset.features[train_idx].std(axis=0)
        std = np.where(std > 0, std, 1.0)
    features = dataset.features if mean is None else (dataset.features - mean) / std

    weights = None
    if cfg.class_weighting:
        counts = np.bincount(y_train[train_idx], minlength=num_classes).astype(float)
        weights = np.where(counts > 0, counts.sum() / (num_classes * np.maximum(counts, 1)), 0.0)

    params = init.copy() if init is not None else init_params(
        dataset.features.shape[1], num_classes, cfg.seed, cfg.hidden)
    state = AdamState.zeros(params)
    train_adj = dataset.adjacency
    val_op = mean_operator(_induced(dataset, val_idx))
    val_x = features[val_idx]
    y_val = None  # read lazily, once, for model selection only

    best = params.copy()
    best_score = -np.inf
    since_best = 0
    history: list[EpochRecord] = []
    for epoch in range(1, cfg.max_epochs + 1):
        sub = sample_subgraph(train_adj, train_idx, cfg, rng)
        op = mean_operator(sub.adjacency)
        x = features[sub.nodes]
        labels = y_train[sub.nodes]
        loss, grads = loss_and_grads(params, op, x, labels, labels >= 0, rng=rng,
                                     dropout=cfg.dropout, class_weights=weights)
        params, state = adam_step(params, grads, state, cfg.learning_rate)

        if y_val is None:
            y_val = _gather_labels(dataset, val_idx, "model_selection", access_log)
        probs = forward(params, val_op, val_x)
        val_acc = float((probs.argmax(axis=1) == y_val).mean())
        if cfg.selection_metric == "accuracy":
            score = val_acc
        else:
            score = -float(-np.log(np.maximum(probs[np.arange(len(y_val)), y_val], 1e-300)).mean())
        history.append(EpochRecord(epoch, loss, val_acc))
        if score > best_score:
            best_score, best, since_best = score, params.copy(), 0
        else:
            since_best += 1
        if since_best >= cfg.patience:
            break
    log.info("trained %d epochs, best val %s=%.4f", len(history), cfg.selection_metric,
             best_score if cfg.selection_metric == "accuracy" else -best_score)
    return Model(best, dataset.class_names, mean, std, copy.deepcopy(cfg)), history


def predict(model: Model, graph: CircuitGraph | Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Argmax class (ties -> lowest index) and its probability for every node."""
    adjacency = graph.adjacency() if isinstance(graph, CircuitGraph) else graph.adjacency
    probs = forward(model.params, mean_operator(adjacency), model.prepare(graph.features))
    cls = probs.argmax(axis=1)
    return cls, probs[np.arange(len(cls)), cls]


# -- metrics -----------------------------------------------------------------------

ABBREV = {"design": "DN", "perturb": "PN", "restore": "RN", "antisat": "AN"}


@dataclass
class Metrics:
    class_names: tuple[str, ...]
    confusion: np.ndarray  # [true, predicted]
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    misclassified: list[tuple[str, str, str]]  # (node, true, predicted)

    def misclassification_summary(self) -> list[str]:
        """Rows like ``"2 DN as PN"``, largest first."""
        rows = []
        k = len(self.class_names)
        for t in range(k):
            for q in range(k):
                if t != q and self.confusion[t, q]:
                    rows.append((int(self.confusion[t, q]),
                                 f"{int(self.confusion[t, q])} {ABBREV.get(self.class_names[t], self.class_names[t])}"
                                 f" as {ABBREV.get(self.class_names[q], self.class_names[q])}"))
        return [s for _, s in sorted(rows, key=lambda r: (-r[0], r[1]))]

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "precision": dict(zip(self.class_names, map(float, self.precision))),
            "recall": dict(zip(self.class_names, map(float, self.recall))),
            "f1": dict(zip(self.class_names, map(float, self.f1))),
            "num_misclassified": len(self.misclassified),
            "misclassified_summary": self.misclassification_summary(),
        }


def evaluate(preds: Sequence[int], labels: Sequence[int], class_names: Sequence[str],
             names: Sequence[str] | None = None) -> Metrics:
    """Confusion matrix plus non-averaged per-class precision/recall/F1."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels cover different node sets")
    if names is not None and len(names) != len(labels):
        raise ValueError("node names do not match labels")
    k = len(class_names)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    wrong = np.flatnonzero(preds != labels)
    node_names = names if names is not None else [str(i) for i in range(len(labels))]
    mis = [(node_names[i], class_names[labels[i]], class_names[preds[i]]) for i in wrong]
    return metrics_from_confusion(conf, class_names, mis)


def metrics_from_confusion(conf: np.ndarray, class_names: Sequence[str],
                           misclassified: list | None = None) -> Metrics:
    """Per-class scores from a [true, predicted] count matrix; 0/0 is reported as 0."""
    k = len(class_names)
    tp = np.diag(conf).astype(float)
    pred_tot = conf.sum(axis=0).astype(float)
    true_tot = conf.sum(axis=1).astype(float)
    precision = np.divide(tp, pred_tot, out=np.zeros(k), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros(k), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(k), where=denom > 0)
    acc = float(tp.sum() / conf.sum()) if conf.sum() else 0.0
    return Metrics(tuple(class_names), conf, acc, precision, recall, f1,
                   list(misclassified or []))


# -- persistence -------------------------------------------------------------------

def save_checkpoint(model: Model, path: Path) -> None:
    """JSON checkpoint (gzip when the name ends in ``.gz``); weights row-major."""
    p = model.params
    doc = {
        "schema_version": SCHEMA_VERSION,
        "dims": {"feature_dim": p.feature_dim, "hidden": p.hidden,
                 "num_classes": p.num_classes},
        "class_names": list(model.class_names),
        "weights": {k: {"shape": list(a.shape), "data": a.ravel().tolist()}
                    for k, a in p.as_dict().items()},
        "feature_mean": None if model.feature_mean is None else model.feature_mean.tolist(),
        "feature_std": None if model.feature_std is None else model.feature_std.tolist(),
        "train_config": asdict(model.config),
        "seed": model.config.seed,
    }
    text = json.dumps(doc, sort_keys=True)
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.GzipFile(path, "wb", mtime=0) as fh:
            fh.write(text.encode())
    else:
        path.write_text(text + "\n")


def load_checkpoint(path: Path) -> Model:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            doc = json.loads(fh.read().decode())
    else:
        doc = json.loads(path.read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    arrays = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in doc["weights"].items()}
    mean = doc.get("feature_mean")
    std = doc.get("feature_std")
    return Model(ModelParams.from_dict(arrays), tuple(doc["class_names"]),
                 None if mean is None else np.array(mean),
                 None if std is None else np.array(std),
                 TrainConfig(**doc["train_config"]))


def write_history_csv(history: Sequence[EpochRecord], path: Path) -> None:
    lines = ["epoch,train_loss,val_accuracy"]
    lines += [f"{r.epoch},{r.train_loss!r},{r.val_accuracy!r}" for r in history]
    Path(path).write_text("\n".join(lines) + "\n")
