"""Attributed graph model, ingestion, synthetic generation and augmentation."""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import IngestionError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Undirected graph with non-sensitive features, a binary sensitive
    attribute and optional binary labels.

    The constructor does not validate; call :func:`validate` or go through the
    loaders, which reject invalid input.
    """

    adjacency: np.ndarray
    features: np.ndarray
    sensitive: np.ndarray
    labels: np.ndarray | None = None
    name: str = "graph"

    def __post_init__(self):
        object.__setattr__(self, "adjacency", _frozen(np.asarray(self.adjacency, dtype=np.uint8)))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "sensitive", _frozen(np.asarray(self.sensitive, dtype=np.int64)))
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))

    @property
    def n(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def num_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def edges(self) -> np.ndarray:
        """Upper-triangle edges as an ``(m, 2)`` array in lexicographic order."""
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return np.stack([i, j], axis=1).astype(np.int64)

    def with_adjacency(self, adjacency: np.ndarray, name: str | None = None) -> "AttributedGraph":
        """Same node attributes, new structure."""
        return AttributedGraph(adjacency, self.features, self.sensitive, self.labels,
                               name if name is not None else self.name)


def adjacency_from_edges(n: int, edges: Iterable[Sequence[int]]) -> np.ndarray:
    adj = np.zeros((n, n), dtype=np.uint8)
    e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if len(e):
        adj[e[:, 0], e[:, 1]] = 1
        adj[e[:, 1], e[:, 0]] = 1
    np.fill_diagonal(adj, 0)
    return adj


def upper_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """All unordered pairs ``i < j`` in lexicographic order."""
    return np.triu_indices(n, 1)


def validate(graph: AttributedGraph) -> list[str]:
    """List every violated invariant; empty when the graph is valid."""
    problems: list[str] = []
    a = graph.adjacency
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return [f"adjacency is not square: shape {a.shape}"]
    n = a.shape[0]
    if n < 1:
        problems.append("graph has no nodes")
    if not np.isin(a, (0, 1)).all():
        problems.append("adjacency has entries outside {0,1}")
    asym = np.argwhere(np.triu(a != a.T, 1))
    for i, j in asym[:10]:
        problems.append(f"adjacency not symmetric at ({i},{j})")
    if len(asym) > 10:
        problems.append(f"... {len(asym) - 10} more symmetry violations")
    loops = np.flatnonzero(np.diag(a))
    if len(loops):
        problems.append(f"nonzero diagonal at nodes {loops[:10].tolist()}")
    if graph.features.shape[0] != n:
        problems.append(f"features have {graph.features.shape[0]} rows for {n} nodes")
    if not np.isfinite(graph.features).all():
        problems.append("features contain non-finite values")
    if graph.sensitive.shape != (n,):
        problems.append(f"sensitive has shape {graph.sensitive.shape}, expected ({n},)")
    bad = ~np.isin(graph.sensitive, (0, 1))
    if bad.any():
        problems.append(f"sensitive values outside {{0,1}} at nodes {np.flatnonzero(bad)[:10].tolist()}")
    if graph.labels is not None:
        if graph.labels.shape != (n,):
            problems.append(f"labels have shape {graph.labels.shape}, expected ({n},)")
        bad = ~np.isin(graph.labels, (0, 1))
        if bad.any():
            problems.append(f"label values outside {{0,1}} at nodes {np.flatnonzero(bad)[:10].tolist()}")
    return problems


def ensure_valid(graph: AttributedGraph) -> AttributedGraph:
    problems = validate(graph)
    if problems:
        raise ValidationError(f"invalid graph {graph.name!r}: " + "; ".join(problems))
    return graph


# -- canonical JSON -----------------------------------------------------------

def graph_to_dict(graph: AttributedGraph) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": graph.name,
        "n": graph.n,
        "edges": graph.edges().tolist(),
        "features": graph.features.tolist(),
        "sensitive": graph.sensitive.tolist(),
        "labels": None if graph.labels is None else graph.labels.tolist(),
    }


def graph_from_dict(doc: dict[str, Any]) -> AttributedGraph:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported graph schema_version {doc.get('schema_version')!r}")
    try:
        n = int(doc["n"])
        feats = np.asarray(doc["features"], dtype=np.float64).reshape(n, -1)
        graph = AttributedGraph(
            adjacency_from_edges(n, doc["edges"]),
            feats,
            np.asarray(doc["sensitive"]),
            None if doc.get("labels") is None else np.asarray(doc["labels"]),
            str(doc.get("name", "graph")),
        )
    except (KeyError, ValueError, IndexError) as exc:
        raise SchemaError(f"malformed graph document: {exc}") from exc
    return ensure_valid(graph)


def save_graph(graph: AttributedGraph, path: str | Path, extra: dict[str, Any] | None = None) -> Path:
    """Write the canonical JSON form; ``extra`` keys are appended verbatim."""
    doc = graph_to_dict(graph)
    if extra:
        doc.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, separators=(",", ":")) + "\n")
    return path


def read_graph(path: str | Path) -> AttributedGraph:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"{path}: cannot read graph file: {exc}") from exc
    try:
        return graph_from_dict(doc)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


# -- raw CSV ingestion --------------------------------------------------------

@dataclass
class GraphSchema:
    """Column mapping for a raw node table.

    ``sensitive_positive`` / ``label_positive`` binarize raw columns by
    equality with a reference value; when unset the column must already hold
    0/1. Labels equal to one of ``label_missing`` are an error, since the
    graph model has no notion of unlabeled nodes.
    """

    id_column: str
    sensitive_column: str
    label_column: str | None = None
    sensitive_positive: str | None = None
    label_positive: str | None = None
    feature_columns: list[str] | None = None
    drop_columns: list[str] = field(default_factory=list)
    name: str = "graph"

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "GraphSchema":
        try:
            return cls(**doc)
        except TypeError as exc:
            raise SchemaError(f"bad schema mapping: {exc}") from exc


def _norm_id(raw: str) -> str:
    raw = raw.strip()
    try:
        f = float(raw)
    except ValueError:
        return raw
    return str(int(f)) if f.is_integer() else raw


def _binarize(values: list[str], positive: str | None, column: str) -> np.ndarray:
    if positive is not None:
        return np.array([v.strip() == str(positive) for v in values], dtype=np.int64)
    out = np.empty(len(values), dtype=np.int64)
    for k, v in enumerate(values):
        try:
            f = float(v)
        except ValueError:
            f = float("nan")
        if f not in (0.0, 1.0):
            raise ValidationError(
                f"column {column!r} row {k + 2}: value {v!r} is not in {{0,1}}; "
                "supply a positive reference value to binarize it")
        out[k] = int(f)
    return out


_SPLIT = re.compile(r"[,\s]+")


def load_graph(node_table_path: str | Path, edge_list_path: str | Path | None = None,
               schema: GraphSchema | dict[str, Any] | None = None) -> AttributedGraph:
    """Load a graph.

    With a single ``.json`` path this reads the canonical format. Otherwise
    the node table is a CSV with a header and the edge list holds one id pair
    per line, comma or whitespace separated.
    """
    if edge_list_path is None:
        return read_graph(node_table_path)
    if schema is None:
        raise SchemaError("raw ingestion needs a column schema")
    if isinstance(schema, dict):
        schema = GraphSchema.from_dict(schema)

    node_table_path = Path(node_table_path)
    try:
        with node_table_path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except OSError as exc:
        raise IngestionError(f"{node_table_path}: {exc}") from exc
    required = [schema.id_column, schema.sensitive_column]
    if schema.label_column:
        required.append(schema.label_column)
    if schema.feature_columns:
        required.extend(schema.feature_columns)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{node_table_path}: missing column(s) {missing}; header is {header}")

    index: dict[str, int] = {}
    for k, row in enumerate(rows):
        key = _norm_id(row[schema.id_column])
        if key in index:
            raise IngestionError(f"{node_table_path}:{k + 2}: duplicate node id {key!r}")
        index[key] = k
    sensitive = _binarize([r[schema.sensitive_column] for r in rows], schema.sensitive_positive,
                          schema.sensitive_column)
    labels = None
    if schema.label_column:
        labels = _binarize([r[schema.label_column] for r in rows], schema.label_positive,
                           schema.label_column)
    if schema.feature_columns is not None:
        feat_cols = list(schema.feature_columns)
    else:
        skip = {schema.id_column, schema.sensitive_column, schema.label_column, *schema.drop_columns}
        feat_cols = [c for c in header if c not in skip]
    try:
        feats = np.array([[float(r[c]) for c in feat_cols] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise SchemaError(f"{node_table_path}: non-numeric feature value ({exc})") from exc
    feats = feats.reshape(len(rows), len(feat_cols))

    n = len(rows)
    edge_set: set[tuple[int, int]] = set()
    self_loops = 0
    edge_list_path = Path(edge_list_path)
    try:
        lines = edge_list_path.read_text().splitlines()
    except OSError as exc:
        raise IngestionError(f"{edge_list_path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = [p for p in _SPLIT.split(text) if p]
        if len(parts) < 2:
            raise IngestionError(f"{edge_list_path}:{lineno}: expected an id pair, got {text!r}")
        a, b = _norm_id(parts[0]), _norm_id(parts[1])
        if a not in index or b not in index:
            bad = a if a not in index else b
            raise IngestionError(f"{edge_list_path}:{lineno}: unknown node id {bad!r} in {text!r}")
        i, j = index[a], index[b]
        if i == j:
            self_loops += 1
            continue
        edge_set.add((min(i, j), max(i, j)))
    if self_loops:
        logger.warning("%s: dropped %d self-loop(s)", edge_list_path, self_loops)
    graph = AttributedGraph(adjacency_from_edges(n, sorted(edge_set)), feats, sensitive, labels,
                            schema.name)
    return ensure_valid(graph)


# -- synthetic data -----------------------------------------------------------

@dataclass(frozen=True)
class SbmSpec:
    n_per_group: int = 100
    p_intra: float = 0.10
    p_inter: float = 0.02
    feature_dim: int = 4
    feature_group_shift: float = 1.0
    seed: int = 0

    def check(self) -> None:
        if not (0.0 <= self.p_inter <= self.p_intra <= 1.0):
            raise ValueError("need 0 <= p_inter <= p_intra <= 1")
        if self.n_per_group < 2:
            raise ValueError("n_per_group must be at least 2")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")


def gen_homophily_sbm(spec: SbmSpec) -> AttributedGraph:
    """Two-block SBM with planted sensitive-attribute homophily.

    Nodes ``0..m-1`` form group 0 and ``m..2m-1`` group 1. Features are unit
    normal with group 1 shifted by ``feature_group_shift`` in every
    coordinate. A node's label is ``x[0] > shift / 2``: the rule never reads
    the group, though the shifted feature makes base rates differ by group.
    """
    spec.check()
    m = spec.n_per_group
    n = 2 * m
    rng = np.random.default_rng(spec.seed)
    s = np.repeat([0, 1], m)
    iu, ju = upper_pairs(n)
    prob = np.where(s[iu] == s[ju], spec.p_intra, spec.p_inter)
    hit = rng.random(len(iu)) < prob
    adj = np.zeros((n, n), dtype=np.uint8)
    adj[iu[hit], ju[hit]] = 1
    adj = adj | adj.T
    feats = rng.standard_normal((n, spec.feature_dim)) + spec.feature_group_shift * s[:, None]
    labels = (feats[:, 0] > spec.feature_group_shift / 2).astype(np.int64)
    return AttributedGraph(adj, feats, s, labels, f"sbm-{spec.seed}")


def permute_graph(graph: AttributedGraph, perm: np.ndarray) -> AttributedGraph:
    """Relabel so that new node ``k`` is old node ``perm[k]``."""
    adj = graph.adjacency[np.ix_(perm, perm)]
    return AttributedGraph(adj, graph.features[perm], graph.sensitive[perm],
                           None if graph.labels is None else graph.labels[perm], graph.name)


def augment(graph: AttributedGraph, count: int, edge_dropout: float, seed: int,
            permute: bool = True) -> list[AttributedGraph]:
    """``count`` perturbed copies of ``graph``; copy 0 is the input itself.

    Each further copy gets an independent node permutation (unless
    ``permute`` is off) and loses every edge independently with probability
    ``edge_dropout``.
    """
    if not 0.0 <= edge_dropout < 1.0:
        raise ValueError("edge_dropout must lie in [0, 1)")
    if count < 1:
        return []
    rng = np.random.default_rng(seed)
    out = [graph]
    edges = graph.edges()
    for k in range(1, count):
        keep = rng.random(len(edges)) >= edge_dropout
        variant = graph.with_adjacency(adjacency_from_edges(graph.n, edges[keep]),
                                       name=f"{graph.name}-aug{k}")
        if permute:
            variant = permute_graph(variant, rng.permutation(graph.n))
        out.append(variant)
    return out
