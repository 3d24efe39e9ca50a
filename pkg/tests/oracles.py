"""Brute-force reference implementations used as test oracles.

These deliberately avoid the package's vectorized code paths: everything is
plain loops over vertices, pairs and triples.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def random_graph(rng: np.random.Generator, n: int, p: float, feature_dim: int = 3, labels: bool = True):
    from fairgdiff.graph import AttributedGraph

    adj = np.zeros((n, n), dtype=np.uint8)
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < p:
            adj[i, j] = adj[j, i] = 1
    s = rng.integers(0, 2, size=n)
    s[0], s[-1] = 0, 1
    y = rng.integers(0, 2, size=n) if labels else None
    return AttributedGraph(adj, rng.standard_normal((n, feature_dim)), s, y, "random")


def bias_ratio(adj, s, x):
    same = [0, 0]
    cross = [0, 0]
    n = len(s)
    for i in range(n):
        for j in range(i + 1, n):
            hit = int(adj[i][j] == x)
            if s[i] == s[j]:
                same[0] += hit
                same[1] += 1
            else:
                cross[0] += hit
                cross[1] += 1
    return (same[0] / same[1]) / (cross[0] / cross[1])


def stats(adj) -> dict:
    n = len(adj)
    nbrs = [{j for j in range(n) if adj[i][j]} for i in range(n)]
    deg = [len(v) for v in nbrs]
    m = sum(deg) // 2

    # wedges: paths u-v-w centred at v, counted over unordered end pairs
    wedges = 0
    claws = 0
    for v in range(n):
        wedges += sum(1 for _ in itertools.combinations(sorted(nbrs[v]), 2))
        claws += sum(1 for _ in itertools.combinations(sorted(nbrs[v]), 3))
    triangles = sum(1 for a, b, c in itertools.combinations(range(n), 3)
                    if adj[a][b] and adj[b][c] and adj[a][c])

    # components by depth-first search
    seen = [False] * n
    sizes = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        size = 0
        while stack:
            u = stack.pop()
            size += 1
            for w in nbrs[u]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        sizes.append(size)

    # Gini from the mean absolute difference definition
    total = sum(deg)
    if total == 0:
        gini = math.nan
    else:
        mad = sum(abs(a - b) for a in deg for b in deg)
        gini = mad / (2 * n * total)

    if m == 0:
        entropy = math.nan
    else:
        entropy = -sum((d / (2 * m)) * math.log(d / (2 * m)) for d in deg if d > 0)

    clustering = 3 * triangles / wedges if wedges else math.nan

    # Pearson correlation of degrees over both orientations of every edge
    xs, ys = [], []
    for i in range(n):
        for j in range(n):
            if adj[i][j]:
                xs.append(deg[i])
                ys.append(deg[j])
    if xs:
        mx = sum(xs) / len(xs)
        my = sum(ys) / len(ys)
        cov = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
        vx = sum((a - mx) ** 2 for a in xs)
        vy = sum((b - my) ** 2 for b in ys)
        assort = cov / math.sqrt(vx * vy) if vx > 0 and vy > 0 else math.nan
    else:
        assort = math.nan

    return {
        "max_degree": max(deg) if deg else 0,
        "avg_degree": total / n,
        "largest_cc": max(sizes),
        "wedge_count": wedges,
        "claw_count": claws,
        "triangle_count": triangles,
        "gini": gini,
        "edge_dist_entropy": entropy,
        "clustering_coeff": clustering,
        "assortativity": assort,
        "num_components": len(sizes),
    }


def counterfactual(features, sensitive, xi):
    """Exhaustive nearest opposite-treatment pair over every unordered pair."""
    n = len(sensitive)
    pairs = list(itertools.combinations(range(n), 2))
    t = {p: int(sensitive[p[0]] == sensitive[p[1]]) for p in pairs}
    rep = {p: [features[p[0]][k] + features[p[1]][k] for k in range(len(features[0]))] for p in pairs}
    out = {}
    for p in pairs:
        best = None
        best_d = math.inf
        for q in pairs:  # lexicographic order, strict < keeps the smallest on ties
            if t[q] == t[p]:
                continue
            d2 = 0.0
            for a, b in zip(rep[p], rep[q]):
                d2 += (a - b) * (a - b)
            if d2 < best_d:
                best, best_d = q, d2
        if best is not None and math.sqrt(best_d) <= xi:
            out[p] = t[best]
        else:
            out[p] = t[p]
    return out


def ndcg(scores, relevant, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]
    dcg = sum(relevant[i] / math.log2(r + 2) for r, i in enumerate(order))
    n_rel = int(sum(relevant))
    ideal = sum(1.0 / math.log2(r + 2) for r in range(min(k, n_rel)))
    return dcg / ideal if ideal > 0 else 0.0
