"""Factual and counterfactual treatments, and the link-formation model that
turns a treatment into a counterfactual adjacency."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kernels
from .errors import DivergenceError, PreconditionError, SchemaError
from .graph import AttributedGraph, upper_pairs
from .nn import bce_with_logits, sigmoid

logger = logging.getLogger(__name__)

EXACT_MAX_NODES = 64


@dataclass(frozen=True, eq=False)
class TreatmentMatrix:
    values: np.ndarray
    kind: str  # "factual" | "counterfactual"

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.uint8)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def off_diagonal(self) -> np.ndarray:
        out = self.values.astype(np.float64)
        np.fill_diagonal(out, 0.0)
        return out

    def to_dict(self) -> dict[str, Any]:
        i, j = np.nonzero(np.triu(self.values, 1))
        return {"schema_version": 1, "kind": self.kind, "n": self.n,
                "ones": np.stack([i, j], axis=1).tolist()}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "TreatmentMatrix":
        if doc.get("schema_version", 1) != 1:
            raise SchemaError(f"unsupported treatment schema_version {doc.get('schema_version')!r}")
        n = int(doc["n"])
        vals = np.zeros((n, n), dtype=np.uint8)
        ones = np.asarray(doc["ones"], dtype=np.int64).reshape(-1, 2)
        vals[ones[:, 0], ones[:, 1]] = 1
        vals[ones[:, 1], ones[:, 0]] = 1
        np.fill_diagonal(vals, 1)
        return cls(vals, doc["kind"])


def factual_treatment(sensitive) -> TreatmentMatrix:
    """T_ij = 1 exactly when nodes i and j share the sensitive value."""
    s = np.asarray(sensitive)
    if s.size == 0:
        raise ValueError("sensitive vector is empty")
    vals = (s[:, None] == s[None, :]).astype(np.uint8)
    return TreatmentMatrix(vals, "factual")


def pair_representation(features: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Order-invariant pair vector x_i + x_j."""
    return features[pairs[:, 0]] + features[pairs[:, 1]]


@dataclass
class PairMatching:
    """Nearest opposite-treatment pair for each pair in the search universe.

    ``match[k]`` indexes into ``pairs`` (or is -1), ``distance[k]`` is the
    Euclidean distance between pair representations (inf without a match).
    """

    pairs: np.ndarray
    treatment: np.ndarray
    match: np.ndarray
    distance: np.ndarray
    exact: bool


def _pair_universe(graph: AttributedGraph, t_factual: TreatmentMatrix, candidate_budget: int,
                   rng: np.random.Generator) -> np.ndarray:
    iu, ju = upper_pairs(graph.n)
    is_edge = graph.adjacency[iu, ju] == 1
    tf = t_factual.values[iu, ju]
    keep = is_edge.copy()
    for kind in (0, 1):
        pool = np.flatnonzero(~is_edge & (tf == kind))
        take = min(candidate_budget, len(pool))
        if take:
            keep[rng.choice(pool, size=take, replace=False)] = True
    # flatnonzero keeps lexicographic order
    idx = np.flatnonzero(keep)
    return np.stack([iu[idx], ju[idx]], axis=1)


def match_opposite_pairs(graph: AttributedGraph, t_factual: TreatmentMatrix,
                         candidate_budget: int = 20000, seed: int = 0,
                         exact: bool | None = None) -> PairMatching:
    """Find, for every pair, the nearest pair carrying the opposite treatment.

    The search runs over all pairs in exact mode (default for
    ``n <= EXACT_MAX_NODES``); otherwise over the observed edges plus up to
    ``candidate_budget`` sampled non-edges of each treatment value.
    """
    if candidate_budget < 1:
        raise ValueError("candidate_budget must be at least 1")
    if exact is None:
        exact = graph.n <= EXACT_MAX_NODES
    if exact:
        iu, ju = upper_pairs(graph.n)
        pairs = np.stack([iu, ju], axis=1)
    else:
        pairs = _pair_universe(graph, t_factual, candidate_budget, np.random.default_rng(seed))
    tf = t_factual.values[pairs[:, 0], pairs[:, 1]].astype(np.int64)
    reps = pair_representation(graph.features, pairs)
    match = np.full(len(pairs), -1, dtype=np.int64)
    dist = np.full(len(pairs), np.inf)
    for kind in (0, 1):
        queries = np.flatnonzero(tf == kind)
        cands = np.flatnonzero(tf != kind)
        if len(queries) == 0:
            continue
        idx, d = kernels.nearest_rows(np.ascontiguousarray(reps[queries]),
                                      np.ascontiguousarray(reps[cands]))
        found = idx >= 0
        match[queries[found]] = cands[idx[found]]
        dist[queries] = d
    return PairMatching(pairs, tf, match, dist, bool(exact))


def auto_xi(matching: PairMatching, quantile: float = 0.5) -> float:
    """Threshold at a quantile of the nearest opposite-pair distances."""
    d = matching.distance[np.isfinite(matching.distance)]
    if len(d) == 0:
        return 0.0
    return float(np.quantile(d, quantile))


def counterfactual_treatment(graph: AttributedGraph, t_factual: TreatmentMatrix, xi: float,
                             candidate_budget: int = 20000, seed: int = 0,
                             exact: bool | None = None,
                             matching: PairMatching | None = None) -> TreatmentMatrix:
    """Swap each pair's treatment for its nearest opposite pair's, when that
    pair lies within ``xi``; pairs without such a match keep the factual value."""
    if xi < 0:
        raise ValueError("xi must be non-negative")
    if matching is None:
        matching = match_opposite_pairs(graph, t_factual, candidate_budget, seed, exact)
    if (matching.match < 0).all() and len(matching.pairs):
        warnings.warn("no opposite-treatment candidates; counterfactual treatment equals the factual one",
                      RuntimeWarning, stacklevel=2)
    flip = (matching.match >= 0) & (matching.distance <= xi)
    vals = t_factual.values.copy()
    p = matching.pairs[flip]
    new = matching.treatment[matching.match[flip]].astype(np.uint8)
    vals[p[:, 0], p[:, 1]] = new
    vals[p[:, 1], p[:, 0]] = new
    logger.debug("flipped %d of %d pairs at xi=%g", int(flip.sum()), len(flip), xi)
    return TreatmentMatrix(vals, "counterfactual")


# -- link formation model -----------------------------------------------------

@dataclass
class LinkFormationModel:
    """Logistic edge model on [x_i + x_j, T_ij]. The last weight is the
    treatment weight."""

    weights: np.ndarray
    bias: float
    loss_trace: list[float] = field(default_factory=list)

    @property
    def treatment_weight(self) -> float:
        return float(self.weights[-1])

    def logits(self, pair_inputs: np.ndarray) -> np.ndarray:
        return pair_inputs @ self.weights + self.bias

    def to_dict(self) -> dict[str, Any]:
        return {"weights": self.weights.tolist(), "bias": self.bias, "loss_trace": self.loss_trace}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "LinkFormationModel":
        return cls(np.asarray(doc["weights"], dtype=np.float64), float(doc["bias"]),
                   list(doc.get("loss_trace", [])))


def pair_inputs(graph: AttributedGraph, treatment: TreatmentMatrix, pairs: np.ndarray) -> np.ndarray:
    reps = pair_representation(graph.features, pairs)
    t = treatment.values[pairs[:, 0], pairs[:, 1]].astype(np.float64)
    return np.concatenate([reps, t[:, None]], axis=1)


def link_loss_and_grad(weights: np.ndarray, bias: float, inputs: np.ndarray,
                       targets: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Mean binary cross-entropy and its gradient."""
    logits = inputs @ weights + bias
    loss = bce_with_logits(logits, targets)
    resid = (sigmoid(logits) - targets) / len(targets)
    return loss, inputs.T @ resid, float(resid.sum())


def link_training_set(graph: AttributedGraph, t_factual: TreatmentMatrix,
                      seed: int) -> tuple[np.ndarray, np.ndarray]:
    """All edges plus an equal number of sampled non-edges (fewer if the
    graph is too dense)."""
    iu, ju = upper_pairs(graph.n)
    is_edge = graph.adjacency[iu, ju] == 1
    pos = np.flatnonzero(is_edge)
    neg_pool = np.flatnonzero(~is_edge)
    if len(pos) == 0 or len(neg_pool) == 0:
        raise PreconditionError("link model needs at least one edge and one non-edge")
    rng = np.random.default_rng(seed)
    neg = np.sort(rng.choice(neg_pool, size=min(len(pos), len(neg_pool)), replace=False))
    idx = np.concatenate([pos, neg])
    pairs = np.stack([iu[idx], ju[idx]], axis=1)
    targets = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return pair_inputs(graph, t_factual, pairs), targets


def fit_link_model(graph: AttributedGraph, t_factual: TreatmentMatrix, epochs: int = 500,
                   lr: float = 0.1, seed: int = 0) -> LinkFormationModel:
    """Full-batch gradient descent on a balanced edge/non-edge sample."""
    inputs, targets = link_training_set(graph, t_factual, seed)
    w = np.zeros(inputs.shape[1])
    b = 0.0
    trace: list[float] = []
    for epoch in range(epochs):
        loss, gw, gb = link_loss_and_grad(w, b, inputs, targets)
        if not np.isfinite(loss):
            raise DivergenceError(f"link model loss is non-finite at epoch {epoch}", epoch, trace)
        trace.append(float(loss))
        w = w - lr * gw
        b = b - lr * gb
    return LinkFormationModel(w, b, trace)


def top_pairs(scores: np.ndarray, n: int, count: int) -> np.ndarray:
    """Adjacency holding the ``count`` best-scored upper-triangle pairs.

    ``scores`` is in lexicographic pair order; the stable sort breaks ties
    toward the lexicographically smaller pair.
    """
    iu, ju = upper_pairs(n)
    count = max(0, min(int(count), len(iu)))
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")[:count]
    adj = np.zeros((n, n), dtype=np.uint8)
    adj[iu[order], ju[order]] = 1
    return adj | adj.T


def counterfactual_adjacency(model: LinkFormationModel, t_cf: TreatmentMatrix,
                             graph: AttributedGraph, target_edges: int | None = None,
                             seed: int | None = None) -> AttributedGraph:
    """Score every pair under ``t_cf`` and keep ``target_edges`` of them
    (default: the input's edge count). Node attributes are carried over.

    Without a seed the highest-scored pairs are kept. With a seed the edges
    are drawn without replacement with probability proportional to the
    model's edge probability (Gumbel top-k), which avoids concentrating all
    edges on the pairs with the most extreme features.
    """
    if target_edges is None:
        target_edges = graph.num_edges
    if target_edges < 0:
        raise ValueError("target_edges must be non-negative")
    iu, ju = upper_pairs(graph.n)
    logits = model.logits(pair_inputs(graph, t_cf, np.stack([iu, ju], axis=1)))
    scores = logits
    if seed is not None:
        # log sigmoid(logit) + Gumbel noise
        scores = -np.logaddexp(0.0, -logits) + np.random.default_rng(seed).gumbel(size=len(logits))
    return graph.with_adjacency(top_pairs(scores, graph.n, target_edges), name=f"{graph.name}-cf")
