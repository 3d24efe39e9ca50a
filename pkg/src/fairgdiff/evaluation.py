"""Downstream evaluation of generated graphs: node classification, link
prediction from node embeddings, a FairDrop-style baseline and the
method comparison table."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .autoencoder import AutoencoderParams, node_embeddings
from .errors import FairGDiffError, InsufficientEdgesError, PreconditionError
from .graph import AttributedGraph, adjacency_from_edges
from .metrics import delta_dp, delta_eo, hypervolume, micro_f1, ndcg_at_k, topology_bias_ratio
from .nn import Adam, bce_with_logits, glorot, sigmoid, softplus


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.5
    val_frac: float = 0.25
    test_frac: float = 0.25
    seed: int = 0

    def check(self) -> None:
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-12:
            raise ValueError("split fractions must be positive and sum to 1")


def split_nodes(graph: AttributedGraph, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint train/val/test ids, stratified by label when labels exist.

    Global sizes are ``round(n * frac)`` for train and val; stratification
    orders nodes by their relative rank inside their class before cutting.
    """
    spec.check()
    n = graph.n
    rng = np.random.default_rng(spec.seed)
    classes = graph.labels if graph.labels is not None else np.zeros(n, dtype=np.int64)
    position = np.empty(n)
    for c in np.unique(classes):
        members = np.flatnonzero(classes == c)
        members = members[rng.permutation(len(members))]
        position[members] = (np.arange(len(members)) + 0.5) / len(members)
    # rank by position, ties broken by a random key
    order = np.lexsort((rng.random(n), position))
    n_train = int(round(n * spec.train_frac))
    n_val = int(round(n * spec.val_frac))
    return (np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_val]),
            np.sort(order[n_train + n_val:]))


# -- node classification ------------------------------------------------------

@dataclass
class ClassifierConfig:
    epochs: int = 300
    lr: float = 1e-2
    hidden: int = 32
    seed: int = 0


@dataclass
class ClassifierResult:
    params: dict[str, np.ndarray]
    accuracy: float
    delta_dp: float
    delta_eo: float
    predictions: np.ndarray
    loss_trace: list[float] = field(default_factory=list)
    best_epoch: int = 0


def normalized_adjacency(adj: np.ndarray) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2}."""
    a = adj.astype(np.float64) + np.eye(len(adj))
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def _gcn_forward(p, prop, x):
    px = prop @ x
    pre1 = px @ p["W1"] + p["b1"]
    h1 = softplus(pre1)
    ph1 = prop @ h1
    pre2 = ph1 @ p["W2"] + p["b2"]
    h2 = softplus(pre2)
    logits = h2 @ p["w"] + p["b"]
    return logits, (px, pre1, ph1, pre2, h2)


def gcn_loss_and_grads(p, prop, x, y, ids):
    """Mean BCE over ``ids`` and gradients of the two-layer propagation model."""
    logits, (px, pre1, ph1, pre2, h2) = _gcn_forward(p, prop, x)
    loss = bce_with_logits(logits[ids], y[ids])
    d_logit = np.zeros(len(x))
    d_logit[ids] = (sigmoid(logits[ids]) - y[ids]) / len(ids)
    g = {"w": h2.T @ d_logit, "b": np.array(d_logit.sum())}
    d_pre2 = np.outer(d_logit, p["w"]) * sigmoid(pre2)
    g["W2"] = ph1.T @ d_pre2
    g["b2"] = d_pre2.sum(axis=0)
    d_pre1 = (prop.T @ (d_pre2 @ p["W2"].T)) * sigmoid(pre1)
    g["W1"] = px.T @ d_pre1
    g["b1"] = d_pre1.sum(axis=0)
    return loss, g


def train_node_classifier(graph: AttributedGraph, split, config: ClassifierConfig | None = None) -> ClassifierResult:
    """Train on the train ids, keep the epoch with the best validation
    accuracy, report accuracy / ΔDP / ΔEO on the test ids."""
    if graph.labels is None:
        raise PreconditionError(f"graph {graph.name!r} has no labels")
    config = config or ClassifierConfig()
    train, val, test = (np.asarray(s) for s in split)
    x = graph.features
    y = graph.labels.astype(np.float64)
    prop = normalized_adjacency(graph.adjacency)
    rng = np.random.default_rng(config.seed)
    p = {
        "W1": glorot(rng, x.shape[1], config.hidden), "b1": np.zeros(config.hidden),
        "W2": glorot(rng, config.hidden, config.hidden), "b2": np.zeros(config.hidden),
        "w": glorot(rng, config.hidden, 1)[:, 0], "b": np.zeros(()),
    }
    opt = Adam(p, lr=config.lr)
    best = (-1.0, 0, {k: v.copy() for k, v in p.items()})
    trace = []
    for epoch in range(config.epochs):
        loss, g = gcn_loss_and_grads(p, prop, x, y, train)
        trace.append(loss)
        opt.step(p, g)
        logits, _ = _gcn_forward(p, prop, x)
        val_acc = float(np.mean((logits[val] > 0) == (y[val] == 1))) if len(val) else 0.0
        if val_acc > best[0]:
            best = (val_acc, epoch, {k: v.copy() for k, v in p.items()})
    params = best[2]
    logits, _ = _gcn_forward(params, prop, x)
    pred = (logits > 0).astype(np.int64)
    acc = float(np.mean(pred[test] == graph.labels[test]))
    s = graph.sensitive[test]
    return ClassifierResult(params, acc, delta_dp(pred[test], s),
                            delta_eo(pred[test], graph.labels[test], s), pred, trace, best[1])


# -- embeddings and link prediction --------------------------------------------

def embed_nodes(graph: AttributedGraph, ae: AutoencoderParams) -> np.ndarray:
    """Node embeddings from the autoencoder's last message-passing layer."""
    return node_embeddings(ae, graph)


def fit_logistic_probe(x: np.ndarray, y: np.ndarray, epochs: int = 300, lr: float = 0.5):
    """Standardized-feature logistic regression; returns a predict function."""
    mu, sd = x.mean(axis=0), x.std(axis=0)
    sd[sd == 0] = 1.0
    xs = (x - mu) / sd
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        r = (sigmoid(xs @ w + b) - y) / len(y)
        w -= lr * (xs.T @ r)
        b -= lr * r.sum()
    return lambda z: (((z - mu) / sd) @ w + b > 0).astype(np.int64)


@dataclass
class LinkPredictionResult:
    ndcg: float
    delta_dp: float
    delta_eo: float
    micro_f1: float
    eval_nodes: int
    k: int


def split_edges(graph: AttributedGraph, holdout_frac: float, seed: int):
    if not 0.0 < holdout_frac < 1.0:
        raise ValueError("holdout_frac must lie in (0, 1)")
    edges = graph.edges()
    n_hold = int(round(len(edges) * holdout_frac))
    if len(edges) < 2 or n_hold < 1 or n_hold >= len(edges):
        raise InsufficientEdgesError(f"graph {graph.name!r} has too few edges ({len(edges)}) to hold out")
    perm = np.random.default_rng(seed).permutation(len(edges))
    held = edges[np.sort(perm[:n_hold])]
    kept = edges[np.sort(perm[n_hold:])]
    return graph.with_adjacency(adjacency_from_edges(graph.n, kept)), held


def link_prediction_eval(graph: AttributedGraph, embeddings, holdout_frac: float = 0.2, k: int = 10,
                         seed: int = 0) -> LinkPredictionResult:
    """Hold out edges, rank candidates by embedding dot product.

    ``embeddings`` is an ``n x k`` array or a callable computing one from the
    training graph (so held-out edges never reach the encoder). ΔDP compares
    the top-k prediction rate over same-group versus cross-group candidate
    pairs; ΔEO does the same restricted to held-out (true) links.
    """
    train_graph, held = split_edges(graph, holdout_frac, seed)
    emb = embeddings(train_graph) if callable(embeddings) else np.asarray(embeddings, dtype=np.float64)
    n = graph.n
    scores = emb @ emb.T
    held_adj = adjacency_from_edges(n, held).astype(bool)
    train_adj = train_graph.adjacency.astype(bool)
    s = graph.sensitive
    eval_nodes = np.flatnonzero(held_adj.any(axis=1))
    ndcgs = []
    pred_same = cand_same = pred_cross = cand_cross = 0
    tp_same = pos_same = tp_cross = pos_cross = 0
    for u in eval_nodes:
        cand = np.flatnonzero(~train_adj[u])
        cand = cand[cand != u]
        rel = held_adj[u, cand]
        sc = scores[u, cand]
        ndcgs.append(ndcg_at_k(sc, rel, k))
        top = np.zeros(len(cand), dtype=bool)
        top[np.argsort(-sc, kind="stable")[:k]] = True
        same = s[cand] == s[u]
        pred_same += int((top & same).sum())
        cand_same += int(same.sum())
        pred_cross += int((top & ~same).sum())
        cand_cross += int((~same).sum())
        tp_same += int((top & same & rel).sum())
        pos_same += int((same & rel).sum())
        tp_cross += int((top & ~same & rel).sum())
        pos_cross += int((~same & rel).sum())

    def gap(a, b, c, d):
        return abs(a / b - c / d) if b and d else float("nan")

    ddp = gap(pred_same, cand_same, pred_cross, cand_cross)
    deo = gap(tp_same, pos_same, tp_cross, pos_cross)

    rng = np.random.default_rng([seed, 1])
    perm = rng.permutation(n)
    cut = int(round(0.8 * n))
    tr, te = perm[:cut], perm[cut:]
    f1 = float("nan")
    if len(te) and len(np.unique(s[tr])) == 2:
        predict = fit_logistic_probe(emb[tr], s[tr].astype(np.float64))
        f1 = micro_f1(predict(emb[te]), s[te])
    return LinkPredictionResult(float(np.mean(ndcgs)), ddp, deo, f1, len(eval_nodes), k)


def fairdrop_baseline(graph: AttributedGraph, delta: float, seed: int = 0) -> AttributedGraph:
    """Drop each same-group edge independently with probability ``delta``."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    edges = graph.edges()
    s = graph.sensitive
    same = s[edges[:, 0]] == s[edges[:, 1]]
    drop = same & (np.random.default_rng(seed).random(len(edges)) < delta)
    return graph.with_adjacency(adjacency_from_edges(graph.n, edges[~drop]),
                                name=f"{graph.name}-fairdrop{delta:g}")


# -- comparison table ---------------------------------------------------------

CSV_COLUMNS = ["method", "task", "utility_name", "utility", "delta_dp", "delta_eo", "t0", "t1", "hypervolume"]


@dataclass
class CompareConfig:
    split: SplitSpec = field(default_factory=SplitSpec)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    holdout_frac: float = 0.2
    k: int = 10
    seed: int = 0
    hypervolume_scale: float = 1.0
    embedder: Callable[[AttributedGraph], np.ndarray] | None = None


@dataclass
class ComparisonTable:
    rows: list[dict[str, Any]]
    refs: dict[str, tuple[float, float, float]]
    notes: list[str] = field(default_factory=list)

    def row(self, method: str, task: str) -> dict[str, Any]:
        for r in self.rows:
            if r["method"] == method and r["task"] == task:
                return r
        raise KeyError((method, task))

    def to_json(self, extra: dict[str, Any] | None = None) -> str:
        doc = {"schema_version": 1, "rows": self.rows,
               "refs": {k: list(v) for k, v in self.refs.items()}, "notes": self.notes}
        if extra:
            doc.update(extra)
        return json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"

    def write(self, json_path: str | Path, csv_path: str | Path, extra: dict[str, Any] | None = None) -> None:
        Path(json_path).parent.mkdir(parents=True, exist_ok=True)
        Path(json_path).write_text(self.to_json(extra))
        with Path(csv_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r.get(c)) for c in CSV_COLUMNS])


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return "" if v is None else v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _ratio(graph: AttributedGraph, x: int) -> float:
    try:
        return topology_bias_ratio(graph, x)
    except FairGDiffError:
        return float("nan")


def _finite(vals):
    return [v for v in vals if v is not None and math.isfinite(v)]


def compare_methods(entries: Sequence[tuple[str, AttributedGraph]],
                    tasks: Sequence[str] = ("node_classification",),
                    config: CompareConfig | None = None) -> ComparisonTable:
    """Evaluate every method on every task and score the utility/fairness
    trade-off by hypervolume against the worst observed value per metric.

    A failing task marks that row with an ``error`` and NaN metrics instead
    of aborting the table.
    """
    if len(entries) < 2:
        raise ValueError("compare_methods needs at least two entries")
    config = config or CompareConfig()
    rows: list[dict[str, Any]] = []
    notes: list[str] = []
    for task in tasks:
        if task == "link_prediction":
            notes.append("link-level ΔDP/ΔEO and micro-F1 leakage are reconstructed definitions; "
                         "embeddings come from the autoencoder encoder, not contrastive training")
        for name, graph in entries:
            row: dict[str, Any] = {"method": name, "task": task, "t0": _ratio(graph, 0),
                                   "t1": _ratio(graph, 1), "error": None}
            try:
                if task == "node_classification":
                    res = train_node_classifier(graph, split_nodes(graph, config.split), config.classifier)
                    row.update(utility_name="accuracy", utility=res.accuracy,
                               delta_dp=res.delta_dp, delta_eo=res.delta_eo)
                elif task == "link_prediction":
                    if config.embedder is None:
                        raise PreconditionError("link prediction needs an embedder")
                    res = link_prediction_eval(graph, config.embedder, config.holdout_frac, config.k,
                                               config.seed)
                    row.update(utility_name=f"ndcg_at_{config.k}", utility=res.ndcg,
                               delta_dp=res.delta_dp, delta_eo=res.delta_eo, micro_f1=res.micro_f1)
                else:
                    raise ValueError(f"unknown task {task!r}")
            except (FairGDiffError, ValueError) as exc:
                row.setdefault("utility_name", task)
                row.update(utility=float("nan"), delta_dp=float("nan"), delta_eo=float("nan"),
                           error=f"{type(exc).__name__}: {exc}")
            rows.append(row)

    refs: dict[str, tuple[float, float, float]] = {}
    for task in tasks:
        task_rows = [r for r in rows if r["task"] == task]
        u = _finite(r["utility"] for r in task_rows)
        dp = _finite(r["delta_dp"] for r in task_rows)
        eo = _finite(r["delta_eo"] for r in task_rows)
        if not (u and dp and eo):
            for r in task_rows:
                r["hypervolume"] = float("nan")
            continue
        ref = (100 * min(u), 100 * max(dp), 100 * max(eo))
        refs[task] = ref
        for r in task_rows:
            vals = (r["utility"], r["delta_dp"], r["delta_eo"])
            if all(v is not None and math.isfinite(v) for v in vals):
                r["hypervolume"] = config.hypervolume_scale * hypervolume(
                    100 * vals[0], 100 * vals[1], 100 * vals[2], ref)
            else:
                r["hypervolume"] = float("nan")
    return ComparisonTable(rows, refs, notes)
