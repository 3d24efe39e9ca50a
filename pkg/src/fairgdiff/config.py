"""Run configuration: a nested YAML document validated into dataclasses.

Schema (every key optional except that exactly one data source is given)::

    seed: 0
    output_dir: out
    data:
      sbm: {n_per_group, p_intra, p_inter, feature_dim, feature_group_shift}
      # or
      graph: path/to/graph.json
      # or
      node_table: nodes.csv
      edge_list: edges.txt
      schema: {id_column, sensitive_column, label_column, sensitive_positive,
               label_positive, feature_columns, drop_columns, name}
    treatment: {xi, xi_quantile, candidate_budget, exact, link_epochs, link_lr,
                sample_counterfactual}
    augment: {count, edge_dropout}
    autoencoder: {latent_dim, layers, enc_width, hidden, n_max, epochs, lr, kl_weight}
    diffusion: {gamma1, gamma2, epochs, lr, steps, beta_start, beta_end,
                hidden, tau_width, cond_dim, time_dim}
    eval: {split, holdout_frac, k, fairdrop_delta, tasks, classifier,
           hypervolume_scale, normalize_entropy}

``xi`` is a non-negative number or ``auto`` (a quantile of the nearest
opposite-pair distances). Stage seeds are derived from ``seed``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .autoencoder import AutoencoderConfig
from .diffusion import DiffusionConfig
from .errors import ConfigError
from .evaluation import ClassifierConfig, SplitSpec
from .graph import GraphSchema, SbmSpec

STAGES = ("data", "treatment", "ae", "diffusion", "eval")
TASKS = ("node_classification", "link_prediction")


def stage_seed(root: int, stage: str) -> int:
    """Independent 32-bit seed for a named stage."""
    digest = hashlib.sha256(f"{int(root)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class DataConfig:
    sbm: dict[str, Any] | None = None
    graph: str | None = None
    node_table: str | None = None
    edge_list: str | None = None
    schema: dict[str, Any] | None = None

    def source(self) -> str:
        given = [k for k in ("sbm", "graph", "node_table") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ConfigError(f"exactly one data source (sbm, graph, node_table) must be set, got {given or 'none'}")
        if self.edge_list is not None and given[0] != "node_table":
            raise ConfigError("edge_list only goes with node_table")
        return given[0]


@dataclass
class TreatmentConfig:
    xi: float | str = "auto"
    xi_quantile: float = 0.5
    candidate_budget: int = 20000
    exact: bool | None = None
    link_epochs: int = 500
    link_lr: float = 0.1
    sample_counterfactual: bool = True


@dataclass
class AugmentConfig:
    count: int = 8
    edge_dropout: float = 0.1


@dataclass
class EvalConfig:
    split: list[float] = field(default_factory=lambda: [0.5, 0.25, 0.25])
    holdout_frac: float = 0.2
    k: int = 10
    fairdrop_delta: float = 0.5
    tasks: list[str] = field(default_factory=lambda: ["node_classification", "link_prediction"])
    classifier: dict[str, Any] = field(default_factory=dict)
    hypervolume_scale: float = 1.0
    normalize_entropy: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    data: DataConfig = field(default_factory=lambda: DataConfig(sbm={}))
    treatment: TreatmentConfig = field(default_factory=TreatmentConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    autoencoder: dict[str, Any] = field(default_factory=dict)
    diffusion: dict[str, Any] = field(default_factory=dict)
    eval: EvalConfig = field(default_factory=EvalConfig)
    source_path: str | None = field(default=None, compare=False)

    # -- derived, validated views ---------------------------------------

    def seed_for(self, stage: str) -> int:
        if stage not in STAGES:
            raise KeyError(stage)
        return stage_seed(self.seed, stage)

    def sbm_spec(self) -> SbmSpec:
        return _build(SbmSpec, dict(self.data.sbm or {}, seed=self.seed_for("data")), "data.sbm")

    def graph_schema(self) -> GraphSchema | None:
        if self.data.schema is None:
            return None
        return _build(GraphSchema, self.data.schema, "data.schema")

    def ae_config(self) -> AutoencoderConfig:
        return _build(AutoencoderConfig, dict(self.autoencoder, seed=self.seed_for("ae")), "autoencoder")

    def diffusion_config(self, **overrides) -> DiffusionConfig:
        return _build(DiffusionConfig, dict(self.diffusion, seed=self.seed_for("diffusion"), **overrides),
                      "diffusion")

    def split_spec(self) -> SplitSpec:
        if len(self.eval.split) != 3:
            raise ConfigError("eval.split needs three fractions")
        return _build(SplitSpec, {"train_frac": self.eval.split[0], "val_frac": self.eval.split[1],
                                  "test_frac": self.eval.split[2], "seed": self.seed_for("eval")}, "eval.split")

    def classifier_config(self) -> ClassifierConfig:
        return _build(ClassifierConfig, dict(self.eval.classifier, seed=self.seed_for("eval")), "eval.classifier")

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc.pop("source_path")
        return doc

    def config_hash(self) -> str:
        """Digest of everything that affects results (not the output path)."""
        doc = self.to_dict()
        doc.pop("output_dir")
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def validate(self) -> "RunConfig":
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        src = self.data.source()
        if src == "sbm":
            self.sbm_spec()
        self.graph_schema()
        t = self.treatment
        if isinstance(t.xi, str):
            if t.xi != "auto":
                raise ConfigError("treatment.xi must be a number or 'auto'")
        elif not t.xi >= 0:
            raise ConfigError("treatment.xi must be non-negative")
        if not 0.0 <= t.xi_quantile <= 1.0:
            raise ConfigError("treatment.xi_quantile must lie in [0, 1]")
        if t.candidate_budget < 1 or t.link_epochs < 1 or not t.link_lr > 0:
            raise ConfigError("treatment.candidate_budget, link_epochs and link_lr must be positive")
        if self.augment.count < 1 or not 0.0 <= self.augment.edge_dropout < 1.0:
            raise ConfigError("augment.count must be >= 1 and edge_dropout in [0, 1)")
        self.ae_config()
        self.diffusion_config()
        self.split_spec()
        self.classifier_config()
        e = self.eval
        if not 0.0 < e.holdout_frac < 1.0:
            raise ConfigError("eval.holdout_frac must lie in (0, 1)")
        if e.k < 1:
            raise ConfigError("eval.k must be positive")
        if not 0.0 <= e.fairdrop_delta <= 1.0:
            raise ConfigError("eval.fairdrop_delta must lie in [0, 1]")
        bad = [x for x in e.tasks if x not in TASKS]
        if bad or not e.tasks:
            raise ConfigError(f"eval.tasks must be a non-empty subset of {list(TASKS)}")
        return self

    def with_overrides(self, seed=None, xi=None, gamma1=None, gamma2=None, delta=None,
                       normalize_entropy=None, output_dir=None) -> "RunConfig":
        cfg = replace(self, treatment=replace(self.treatment), eval=replace(self.eval),
                      diffusion=dict(self.diffusion))
        if seed is not None:
            cfg.seed = seed
        if xi is not None:
            cfg.treatment.xi = xi
        if gamma1 is not None:
            cfg.diffusion["gamma1"] = gamma1
        if gamma2 is not None:
            cfg.diffusion["gamma2"] = gamma2
        if delta is not None:
            cfg.eval.fairdrop_delta = delta
        if normalize_entropy is not None:
            cfg.eval.normalize_entropy = normalize_entropy
        if output_dir is not None:
            cfg.output_dir = str(output_dir)
        return cfg.validate()


def _build(cls, values: dict[str, Any], where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        obj = cls(**values)
        if hasattr(obj, "check"):
            obj.check()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return obj


def _section(cls, doc: Any, where: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return cls(**doc)


def config_from_dict(doc: dict[str, Any] | None, source_path: str | None = None) -> RunConfig:
    doc = dict(doc or {})
    known = {f.name for f in fields(RunConfig)} - {"source_path"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    for key in ("autoencoder", "diffusion"):
        if not isinstance(doc.get(key) or {}, dict):
            raise ConfigError(f"{key} must be a mapping")
    xi = (doc.get("treatment") or {}).get("xi", "auto")
    if not isinstance(xi, (int, float, str)) or isinstance(xi, bool):
        raise ConfigError("treatment.xi must be a number or 'auto'")
    cfg = RunConfig(
        seed=doc.get("seed", 0),
        output_dir=str(doc.get("output_dir", "out")),
        data=_section(DataConfig, doc.get("data", {"sbm": {}}), "data"),
        treatment=_section(TreatmentConfig, doc.get("treatment"), "treatment"),
        augment=_section(AugmentConfig, doc.get("augment"), "augment"),
        autoencoder=dict(doc.get("autoencoder") or {}),
        diffusion=dict(doc.get("diffusion") or {}),
        eval=_section(EvalConfig, doc.get("eval"), "eval"),
        source_path=source_path,
    )
    if isinstance(cfg.treatment.xi, int):
        cfg.treatment.xi = float(cfg.treatment.xi)
    return cfg.validate()


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = config_from_dict(doc, str(path))
    # relative data paths resolve against the config file
    base = path.parent
    for key in ("graph", "node_table", "edge_list"):
        val = getattr(cfg.data, key)
        if val is not None and not Path(val).is_absolute():
            setattr(cfg.data, key, str(base / val))
    return cfg
