"""End-to-end stages: data, treatments, counterfactual adjacency, autoencoder,
diffusion, generation and evaluation.

Each stage is a plain function over in-memory objects. ``Workspace`` persists
their outputs under ``out/{manifests,checkpoints,graphs,reports}`` with the
schema version and config hash embedded in every file.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .autoencoder import AutoencoderParams, train_autoencoder
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .diffusion import CorpusEntry, DenoiserParams, generate_fair_graph, train_diffusion
from .errors import FairGDiffError, SchemaError, UntrainedModelError
from .evaluation import CompareConfig, ComparisonTable, compare_methods, embed_nodes, fairdrop_baseline
from .graph import AttributedGraph, augment, gen_homophily_sbm, load_graph, read_graph, save_graph
from .metrics import graph_stats, relative_diff, topology_bias_ratio
from .treatment import (LinkFormationModel, TreatmentMatrix, auto_xi, counterfactual_adjacency,
                        counterfactual_treatment, factual_treatment, fit_link_model, match_opposite_pairs)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


# -- stages --------------------------------------------------------------------

def load_input(cfg: RunConfig) -> AttributedGraph:
    src = cfg.data.source()
    if src == "sbm":
        return gen_homophily_sbm(cfg.sbm_spec())
    if src == "graph":
        return read_graph(cfg.data.graph)
    return load_graph(cfg.data.node_table, cfg.data.edge_list, cfg.graph_schema())


@dataclass
class TreatmentResult:
    t_factual: TreatmentMatrix
    t_counterfactual: TreatmentMatrix
    xi: float
    link_model: LinkFormationModel
    graph_cf: AttributedGraph
    flipped: int


def build_treatments(cfg: RunConfig, graph: AttributedGraph) -> TreatmentResult:
    t = cfg.treatment
    seed = cfg.seed_for("treatment")
    tf = factual_treatment(graph.sensitive)
    matching = match_opposite_pairs(graph, tf, t.candidate_budget, seed, t.exact)
    xi = auto_xi(matching, t.xi_quantile) if t.xi == "auto" else float(t.xi)
    tcf = counterfactual_treatment(graph, tf, xi, matching=matching)
    model = fit_link_model(graph, tf, epochs=t.link_epochs, lr=t.link_lr, seed=seed)
    draw_seed = [seed, 2] if t.sample_counterfactual else None
    graph_cf = counterfactual_adjacency(model, tcf, graph, seed=draw_seed)
    flipped = int(((tf.values != tcf.values).sum()) // 2)
    return TreatmentResult(tf, tcf, xi, model, graph_cf, flipped)


def training_corpus(cfg: RunConfig, graph: AttributedGraph, graph_cf: AttributedGraph):
    """Edge-dropout variants of the factual and counterfactual graphs. Node
    order is kept so decoded pairs stay aligned with the node attributes."""
    seed = cfg.seed_for("ae")
    a = cfg.augment
    vf = augment(graph, a.count, a.edge_dropout, [seed, 10], permute=False)
    vcf = augment(graph_cf, a.count, a.edge_dropout, [seed, 11], permute=False)
    return vf, vcf


def train_ae_stage(cfg: RunConfig, variants_f, variants_cf) -> AutoencoderParams:
    return train_autoencoder(list(variants_f) + list(variants_cf), cfg.ae_config())


def train_diffusion_stage(cfg: RunConfig, ae: AutoencoderParams, variants_f, variants_cf,
                          tr: TreatmentResult, gamma2: float | None = None) -> DenoiserParams:
    dcfg = cfg.diffusion_config() if gamma2 is None else cfg.diffusion_config(gamma2=gamma2)
    use_cf = dcfg.gamma2 != 0
    corpus = [CorpusEntry(gf, gcf if use_cf else None, tr.t_factual, tr.t_counterfactual if use_cf else None)
              for gf, gcf in zip(variants_f, variants_cf)]
    return train_diffusion(ae, dcfg, corpus)


def generation_seed(cfg: RunConfig) -> list[int]:
    return [cfg.seed_for("diffusion"), 3]


def generate_stage(cfg: RunConfig, ae: AutoencoderParams, params: DenoiserParams,
                   graph: AttributedGraph, treatment: TreatmentMatrix, name: str) -> AttributedGraph:
    out = generate_fair_graph(ae, params, None, graph, treatment, seed=generation_seed(cfg))
    return out.with_adjacency(out.adjacency, name=name)


def compare_config(cfg: RunConfig, ae: AutoencoderParams | None) -> CompareConfig:
    embedder = None if ae is None else (lambda g: embed_nodes(g, ae))
    return CompareConfig(split=cfg.split_spec(), classifier=cfg.classifier_config(),
                         holdout_frac=cfg.eval.holdout_frac, k=cfg.eval.k, seed=cfg.seed_for("eval"),
                         hypervolume_scale=cfg.eval.hypervolume_scale, embedder=embedder)


def evaluate_stage(cfg: RunConfig, entries: Sequence[tuple[str, AttributedGraph]],
                   ae: AutoencoderParams | None) -> ComparisonTable:
    tasks = [t for t in cfg.eval.tasks if ae is not None or t != "link_prediction"]
    return compare_methods(entries, tasks, compare_config(cfg, ae))


def fairdrop_stage(cfg: RunConfig, graph: AttributedGraph) -> AttributedGraph:
    delta = cfg.eval.fairdrop_delta
    g = fairdrop_baseline(graph, delta, seed=cfg.seed_for("eval"))
    return g.with_adjacency(g.adjacency, name=f"fairdrop({delta:g})")


# -- audit ---------------------------------------------------------------------

def _safe_ratio(graph: AttributedGraph, x: int) -> float:
    try:
        return topology_bias_ratio(graph, x)
    except FairGDiffError:
        return float("nan")


def audit_graphs(graphs: Sequence[tuple[str, AttributedGraph]], normalize_entropy: bool = False) -> dict[str, Any]:
    """T0, T1 and structural statistics per graph; relative differences of
    every graph after the first against the first."""
    per: dict[str, dict[str, float]] = {}
    undefined: dict[str, list[str]] = {}
    for name, g in graphs:
        stats = graph_stats(g, normalize_entropy=normalize_entropy)
        row = {"t0": _safe_ratio(g, 0), "t1": _safe_ratio(g, 1)}
        row.update(stats.as_dict())
        per[name] = row
        undefined[name] = list(stats.undefined) + [k for k in ("t0", "t1") if math.isnan(row[k])]
    doc: dict[str, Any] = {"graphs": per, "undefined": undefined}
    if len(graphs) > 1:
        ref_name = graphs[0][0]
        rel: dict[str, dict[str, float]] = {}
        for name, _ in graphs[1:]:
            diffs = {}
            for metric, ref in per[ref_name].items():
                try:
                    diffs[metric] = relative_diff(ref, per[name][metric])
                except ZeroDivisionError:
                    diffs[metric] = float("nan")
            rel[name] = diffs
        doc["reference"] = ref_name
        doc["relative_diff"] = rel
    return doc


def audit_rows(doc: dict[str, Any]) -> list[list[Any]]:
    rows = []
    for name, metrics in doc["graphs"].items():
        rows += [[name, "value", k, v] for k, v in metrics.items()]
    for name, metrics in doc.get("relative_diff", {}).items():
        rows += [[name, "relative_diff", k, v] for k, v in metrics.items()]
    return rows


# -- persistence ----------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _csv_value(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return "" if v is None else v


class Workspace:
    """Output tree rooted at ``root`` with manifests, checkpoints, graphs and
    reports subdirectories."""

    SUBDIRS = ("manifests", "checkpoints", "graphs", "reports")

    def __init__(self, root: str | Path, cfg: RunConfig):
        self.root = Path(root)
        self.cfg = cfg
        self.config_hash = cfg.config_hash()
        for d in self.SUBDIRS:
            (self.root / d).mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def path(self, sub: str, name: str) -> Path:
        return self.root / sub / name

    def _stamp(self) -> dict[str, Any]:
        return {"config_hash": self.config_hash, "seed": self.cfg.seed}

    def _record(self, p: Path) -> Path:
        self.written.append(str(p.relative_to(self.root)))
        return p

    def save_graph(self, graph: AttributedGraph, name: str) -> Path:
        return self._record(save_graph(graph, self.path("graphs", name), extra=self._stamp()))

    def load_graph(self, name: str) -> AttributedGraph:
        p = self.path("graphs", name)
        if not p.exists():
            raise UntrainedModelError(f"missing artifact {p}; run the earlier stage first")
        return read_graph(p)

    def save_json(self, sub: str, name: str, doc: dict[str, Any]) -> Path:
        full = {"schema_version": SCHEMA_VERSION, **self._stamp(), **doc}
        p = self.path(sub, name)
        p.write_text(json.dumps(_jsonable(full), indent=1, sort_keys=False) + "\n")
        return self._record(p)

    def load_json(self, sub: str, name: str) -> dict[str, Any]:
        p = self.path(sub, name)
        if not p.exists():
            raise UntrainedModelError(f"missing artifact {p}; run the earlier stage first")
        doc = json.loads(p.read_text())
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"{p}: unsupported schema_version {doc.get('schema_version')!r}")
        return doc

    def save_csv(self, name: str, header: list[str], rows: list[list[Any]]) -> Path:
        p = self.path("reports", name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_csv_value(v) for v in r])
        return self._record(p)

    def save_checkpoint(self, params, name: str) -> Path:
        return self._record(save_checkpoint(params, self.path("checkpoints", name), extra=self._stamp()))

    def load_checkpoint(self, name: str, kind: str):
        return load_checkpoint(self.path("checkpoints", name), kind)

    def save_treatment(self, t: TreatmentMatrix, name: str) -> Path:
        return self.save_json("graphs", name, t.to_dict())

    def load_treatment(self, name: str) -> TreatmentMatrix:
        return TreatmentMatrix.from_dict(self.load_json("graphs", name))

    def save_table(self, table: ComparisonTable, stem: str = "comparison") -> None:
        # the output location is recorded in the manifest, not in results
        config = {k: v for k, v in self.cfg.to_dict().items() if k != "output_dir"}
        extra = {**self._stamp(), "config": config}
        table.write(self.path("reports", f"{stem}.json"), self.path("reports", f"{stem}.csv"), extra=extra)
        self._record(self.path("reports", f"{stem}.json"))
        self._record(self.path("reports", f"{stem}.csv"))

    def save_audit(self, doc: dict[str, Any], stem: str = "audit") -> None:
        self.save_json("reports", f"{stem}.json", doc)
        self.save_csv(f"{stem}.csv", ["graph", "kind", "metric", "value"], audit_rows(doc))

    def write_manifest(self, command: str, inputs: list[str], started: float, extra: dict | None = None) -> Path:
        """Manifests record wall time, so they are the one output that differs
        between otherwise identical runs."""
        doc = {"command": command, "version": __version__, "inputs": inputs,
               "outputs": sorted(set(self.written)), "config": self.cfg.to_dict(),
               "elapsed_seconds": round(time.perf_counter() - started, 3)}
        if extra:
            doc.update(extra)
        p = self.path("manifests", f"{command}.json")
        p.write_text(json.dumps(_jsonable({"schema_version": SCHEMA_VERSION, **self._stamp(), **doc}),
                                indent=1) + "\n")
        return p


# -- full run ----------------------------------------------------------------------

@dataclass
class PipelineResult:
    graph: AttributedGraph
    treatment: TreatmentResult
    ae: AutoencoderParams
    fair: DenoiserParams
    vanilla: DenoiserParams
    generated: AttributedGraph
    generated_vanilla: AttributedGraph
    fairdrop: AttributedGraph
    table: ComparisonTable
    timings: dict[str, float] = field(default_factory=dict)

    def entries(self) -> list[tuple[str, AttributedGraph]]:
        return [("original", self.graph), ("diffusion", self.generated_vanilla),
                (self.fairdrop.name, self.fairdrop), ("fairgdiff", self.generated)]


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except FairGDiffError as exc:
        exc.args = (f"stage '{name}' failed: {exc}",) + exc.args[1:]
        raise


def run_pipeline(cfg: RunConfig, out: str | Path | None = None) -> PipelineResult:
    """Run every stage; with ``out`` each artifact is written as soon as its
    stage completes, so a failure leaves the earlier ones in place."""
    ws = Workspace(out, cfg) if out is not None else None
    started = time.perf_counter()
    timings: dict[str, float] = {}

    def timed(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        res = _stage(name, fn, *args, **kwargs)
        timings[name] = time.perf_counter() - t0
        logger.info("stage %s done in %.1fs", name, timings[name])
        return res

    graph = timed("data", load_input, cfg)
    if ws:
        ws.save_graph(graph, "input.json")
    tr = timed("treatment", build_treatments, cfg, graph)
    if ws:
        ws.save_treatment(tr.t_factual, "treatment_factual.json")
        ws.save_treatment(tr.t_counterfactual, "treatment_counterfactual.json")
        ws.save_json("checkpoints", "link_model.json", {"kind": "link_model", "xi": tr.xi,
                                                         "flipped_pairs": tr.flipped, **tr.link_model.to_dict()})
        ws.save_graph(tr.graph_cf, "counterfactual.json")
    vf, vcf = training_corpus(cfg, graph, tr.graph_cf)
    ae = timed("train_ae", train_ae_stage, cfg, vf, vcf)
    if ws:
        ws.save_checkpoint(ae, "autoencoder.json")
    fair = timed("train_diffusion", train_diffusion_stage, cfg, ae, vf, vcf, tr)
    if ws:
        ws.save_checkpoint(fair, "diffusion.json")
    vanilla = timed("train_diffusion_vanilla", train_diffusion_stage, cfg, ae, vf, vcf, tr, gamma2=0.0)
    if ws:
        ws.save_checkpoint(vanilla, "diffusion_vanilla.json")
    generated = timed("generate", generate_stage, cfg, ae, fair, graph, tr.t_counterfactual, "fairgdiff")
    generated_vanilla = timed("generate_vanilla", generate_stage, cfg, ae, vanilla, graph, tr.t_factual,
                              "diffusion")
    fd = fairdrop_stage(cfg, graph)
    if ws:
        ws.save_graph(generated, "generated.json")
        ws.save_graph(generated_vanilla, "generated_vanilla.json")
        ws.save_graph(fd, "fairdrop.json")
    entries = [("original", graph), ("diffusion", generated_vanilla), (fd.name, fd), ("fairgdiff", generated)]
    table = timed("evaluate", evaluate_stage, cfg, entries, ae)
    if ws:
        ws.save_table(table)
        ws.save_audit(audit_graphs(entries, cfg.eval.normalize_entropy))
        ws.write_manifest("pipeline", [cfg.source_path] if cfg.source_path else [], started,
                          {"timings": {k: round(v, 3) for k, v in timings.items()}})
    return PipelineResult(graph, tr, ae, fair, vanilla, generated, generated_vanilla, fd, table, timings)
