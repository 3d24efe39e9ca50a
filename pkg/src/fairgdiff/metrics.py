"""Scalar measurements: topology bias, group fairness, ranking utility,
graph properties, distribution shift and the hypervolume trade-off."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .errors import EmptyGroupError, UndefinedRatioError
from .graph import AttributedGraph


def _pair_counts(graph: AttributedGraph) -> tuple[int, int, int, int]:
    """(same-group pairs, cross-group pairs, same-group edges, cross-group edges)."""
    s = graph.sensitive
    n1 = int(s.sum())
    n0 = len(s) - n1
    same_pairs = n0 * (n0 - 1) // 2 + n1 * (n1 - 1) // 2
    cross_pairs = n0 * n1
    e = graph.edges()
    same_edges = int((s[e[:, 0]] == s[e[:, 1]]).sum()) if len(e) else 0
    return same_pairs, cross_pairs, same_edges, len(e) - same_edges


def topology_bias_ratio(graph: AttributedGraph, x: int) -> float:
    """P(A_ij = x | s_i = s_j) / P(A_ij = x | s_i != s_j) over distinct pairs."""
    if x not in (0, 1):
        raise ValueError("edge state must be 0 or 1")
    same_pairs, cross_pairs, same_edges, cross_edges = _pair_counts(graph)
    if same_pairs == 0 or cross_pairs == 0:
        raise UndefinedRatioError("need both same-group and cross-group node pairs")
    if x == 1:
        num, den = same_edges / same_pairs, cross_edges / cross_pairs
    else:
        num = (same_pairs - same_edges) / same_pairs
        den = (cross_pairs - cross_edges) / cross_pairs
    if den == 0:
        raise UndefinedRatioError(f"P(A_ij={x} | s_i != s_j) is zero")
    return num / den


def _groups(sensitive: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(sensitive)
    g0, g1 = s == 0, s == 1
    if not g0.any() or not g1.any():
        raise EmptyGroupError("both sensitive groups must be non-empty")
    return g0, g1


def delta_dp(predictions, sensitive) -> float:
    """Statistical parity gap |P(yhat=1|s=0) - P(yhat=1|s=1)|."""
    yhat = np.asarray(predictions)
    g0, g1 = _groups(sensitive)
    return abs(float(np.mean(yhat[g0] == 1)) - float(np.mean(yhat[g1] == 1)))


def delta_eo(predictions, labels, sensitive) -> float:
    """Equal opportunity gap |P(yhat=1|y=1,s=0) - P(yhat=1|y=1,s=1)|."""
    yhat = np.asarray(predictions)
    y = np.asarray(labels)
    g0, g1 = _groups(sensitive)
    p0, p1 = g0 & (y == 1), g1 & (y == 1)
    if not p0.any() or not p1.any():
        raise EmptyGroupError("each sensitive group needs at least one positive label")
    return abs(float(np.mean(yhat[p0] == 1)) - float(np.mean(yhat[p1] == 1)))


@dataclass
class GraphStats:
    """Graph property summary. Metrics whose denominator vanishes are NaN and
    listed in ``undefined``."""

    max_degree: int
    avg_degree: float
    largest_cc: int
    wedge_count: int
    claw_count: int
    triangle_count: int
    gini: float
    edge_dist_entropy: float
    clustering_coeff: float
    assortativity: float
    num_components: int
    undefined: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("undefined")
        return d


def triangles_per_node(graph: AttributedGraph) -> np.ndarray:
    csr = csr_matrix(graph.adjacency)
    csr.sort_indices()
    return kernels.triangles_per_node(csr.indptr.astype(np.intp), csr.indices.astype(np.intp))


def gini(values) -> float:
    """Gini coefficient from the piecewise-linear Lorenz curve."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = len(x)
    total = x.sum()
    if n == 0 or total == 0:
        return float("nan")
    lorenz = np.concatenate([[0.0], np.cumsum(x) / total])
    area = (lorenz[:-1] + lorenz[1:]).sum() / (2 * n)
    return float(1.0 - 2.0 * area)


def graph_stats(graph: AttributedGraph, normalize_entropy: bool = False) -> GraphStats:
    n = graph.n
    deg = graph.degrees
    m = int(deg.sum()) // 2
    undefined: list[str] = []

    ncomp, comp = connected_components(csr_matrix(graph.adjacency), directed=False)
    largest = int(np.bincount(comp).max()) if n else 0

    wedges = int((deg * (deg - 1) // 2).sum())
    claws = int((deg * (deg - 1) * (deg - 2) // 6).sum())
    triangles = int(triangles_per_node(graph).sum()) // 3

    g = gini(deg)
    if m == 0:
        entropy = float("nan")
    else:
        p = deg[deg > 0] / (2.0 * m)
        entropy = float(-(p * np.log(p)).sum())
        if normalize_entropy:
            entropy = entropy / math.log(n) if n > 1 else float("nan")
    clustering = 3.0 * triangles / wedges if wedges else float("nan")

    assort = float("nan")
    if m:
        e = graph.edges()
        x = np.concatenate([deg[e[:, 0]], deg[e[:, 1]]]).astype(np.float64)
        y = np.concatenate([deg[e[:, 1]], deg[e[:, 0]]]).astype(np.float64)
        xc, yc = x - x.mean(), y - y.mean()
        den = math.sqrt(float((xc * xc).sum()) * float((yc * yc).sum()))
        if den > 0:
            assort = float((xc * yc).sum()) / den

    for name, val in (("gini", g), ("edge_dist_entropy", entropy),
                      ("clustering_coeff", clustering), ("assortativity", assort)):
        if math.isnan(val):
            undefined.append(name)
    return GraphStats(
        max_degree=int(deg.max()) if n else 0,
        avg_degree=2.0 * m / n if n else float("nan"),
        largest_cc=largest,
        wedge_count=wedges,
        claw_count=claws,
        triangle_count=triangles,
        gini=g,
        edge_dist_entropy=entropy,
        clustering_coeff=clustering,
        assortativity=assort,
        num_components=int(ncomp),
        undefined=undefined,
    )


def relative_diff(reference: float, candidate: float) -> float:
    if reference == 0:
        raise ZeroDivisionError("relative difference undefined for a zero reference")
    return abs(reference - candidate) / abs(reference)


def wasserstein_1d(u, v) -> float:
    """Exact W1 between two empirical distributions (integral of |F - G|)."""
    u = np.sort(np.asarray(u, dtype=np.float64))
    v = np.sort(np.asarray(v, dtype=np.float64))
    allv = np.concatenate([u, v])
    allv.sort(kind="mergesort")
    deltas = np.diff(allv)
    cu = np.searchsorted(u, allv[:-1], side="right") / len(u)
    cv = np.searchsorted(v, allv[:-1], side="right") / len(v)
    return float(np.sum(np.abs(cu - cv) * deltas))


def wasserstein_group_gap(embeddings, sensitive, projections: int = 128, seed: int = 0) -> float:
    """Sliced W1 distance between the two sensitive groups' embeddings."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim == 1:
        emb = emb[:, None]
    g0, g1 = _groups(sensitive)
    if projections < 1:
        raise ValueError("projections must be positive")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((projections, emb.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    proj = emb @ dirs.T
    return float(np.mean([wasserstein_1d(proj[g0, k], proj[g1, k]) for k in range(projections)]))


def hypervolume(utility: float, dp: float, eo: float, refs: tuple[float, float, float]) -> float:
    """Product of distances from the worst-case reference point."""
    u_ref, dp_ref, eo_ref = refs
    return abs(utility - u_ref) * abs(dp - dp_ref) * abs(eo - eo_ref)


def ndcg_at_k(scores, relevant, k: int = 10) -> float:
    """NDCG@k for one ranking; 0 when nothing is relevant.

    Items are ranked by descending score, ties by position.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(relevant, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be positive")
    n_rel = int((rel > 0).sum())
    if n_rel == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")[:k]
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float((rel[order] * discounts[:len(order)]).sum())
    ideal = float(discounts[:min(n_rel, k)].sum())
    return dcg / ideal


def micro_f1(predictions, truth) -> float:
    """Micro-averaged F1 over both classes (equals accuracy for single-label)."""
    yhat = np.asarray(predictions)
    y = np.asarray(truth)
    if len(y) == 0 or len(y) != len(yhat):
        raise ValueError("predictions and truth must be equal, non-zero length")
    tp = fp = fn = 0
    for c in (0, 1):
        tp += int(((yhat == c) & (y == c)).sum())
        fp += int(((yhat == c) & (y != c)).sum())
        fn += int(((yhat != c) & (y == c)).sum())
    return 2 * tp / (2 * tp + fp + fn)


@dataclass
class FairnessReport:
    utility_name: str
    utility: float
    delta_dp: float
    delta_eo: float
    t0_ratio: float
    t1_ratio: float
    hypervolume: float = 0.0
    wasserstein: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)
