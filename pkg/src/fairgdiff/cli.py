"""Command-line entry point.

Every command takes an optional ``--config`` (YAML, see ``fairgdiff.config``)
and writes under ``--out`` into ``manifests/``, ``checkpoints/``, ``graphs/``
and ``reports/``. Exit codes: 0 success, 2 config error, 3 data error,
4 training divergence, 5 precondition failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import pipeline as pl
from .config import RunConfig, config_from_dict, load_config
from .errors import ConfigError, FairGDiffError, PreconditionError
from .graph import SbmSpec, gen_homophily_sbm, read_graph
from .treatment import LinkFormationModel

logger = logging.getLogger("fairgdiff")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    out = getattr(args, "out", None)
    return cfg.with_overrides(seed=args.seed, xi=getattr(args, "xi", None), gamma1=getattr(args, "gamma1", None),
                              gamma2=getattr(args, "gamma2", None), delta=getattr(args, "delta", None),
                              normalize_entropy=True if getattr(args, "normalize_entropy", False) else None,
                              output_dir=out)


def _workspace(cfg: RunConfig) -> pl.Workspace:
    return pl.Workspace(cfg.output_dir, cfg)


def _inputs(cfg: RunConfig, *extra) -> list[str]:
    return ([cfg.source_path] if cfg.source_path else []) + [str(e) for e in extra]


# -- commands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    base = cfg.sbm_spec() if cfg.data.source() == "sbm" else SbmSpec(seed=cfg.seed_for("data"))
    spec = SbmSpec(
        n_per_group=args.n_per_group if args.n_per_group is not None else base.n_per_group,
        p_intra=args.p_intra if args.p_intra is not None else base.p_intra,
        p_inter=args.p_inter if args.p_inter is not None else base.p_inter,
        feature_dim=args.feature_dim if args.feature_dim is not None else base.feature_dim,
        feature_group_shift=args.shift if args.shift is not None else base.feature_group_shift,
        seed=base.seed,
    )
    try:
        spec.check()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ws = _workspace(cfg)
    p = ws.save_graph(gen_homophily_sbm(spec), args.name)
    ws.write_manifest("synth", _inputs(cfg), started, {"sbm": vars(spec)})
    print(p)
    return 0


def cmd_audit(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    if args.graphs:
        graphs = [(Path(p).stem, read_graph(p)) for p in args.graphs]
    else:
        graphs = [("input", pl.load_input(cfg))]
    names = [n for n, _ in graphs]
    if len(set(names)) != len(names):
        graphs = [(f"{i}:{n}", g) for i, (n, g) in enumerate(graphs)]
    ws = _workspace(cfg)
    doc = pl.audit_graphs(graphs, cfg.eval.normalize_entropy)
    ws.save_audit(doc)
    ws.write_manifest("audit", _inputs(cfg, *args.graphs), started)
    for name, m in doc["graphs"].items():
        print(f"{name}: T0={m['t0']:.6g} T1={m['t1']:.6g}")
    return 0


def cmd_treatment(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    ws = _workspace(cfg)
    graph = pl.load_input(cfg)
    ws.save_graph(graph, "input.json")
    tr = pl.build_treatments(cfg, graph)
    ws.save_treatment(tr.t_factual, "treatment_factual.json")
    ws.save_treatment(tr.t_counterfactual, "treatment_counterfactual.json")
    ws.save_json("checkpoints", "link_model.json", {"kind": "link_model", "xi": tr.xi,
                                                     "flipped_pairs": tr.flipped, **tr.link_model.to_dict()})
    ws.save_graph(tr.graph_cf, "counterfactual.json")
    ws.write_manifest("treatment", _inputs(cfg), started, {"xi": tr.xi, "flipped_pairs": tr.flipped})
    print(f"xi={tr.xi:.6g} flipped={tr.flipped} edges={tr.graph_cf.num_edges}")
    return 0


def _load_treatment_stage(ws: pl.Workspace) -> tuple:
    graph = ws.load_graph("input.json")
    graph_cf = ws.load_graph("counterfactual.json")
    link = ws.load_json("checkpoints", "link_model.json")
    tr = pl.TreatmentResult(ws.load_treatment("treatment_factual.json"),
                            ws.load_treatment("treatment_counterfactual.json"), float(link["xi"]),
                            LinkFormationModel.from_dict(link), graph_cf, int(link["flipped_pairs"]))
    return graph, tr


def cmd_train_ae(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    ws = _workspace(cfg)
    graph, tr = _load_treatment_stage(ws)
    vf, vcf = pl.training_corpus(cfg, graph, tr.graph_cf)
    ae = pl.train_ae_stage(cfg, vf, vcf)
    ws.save_checkpoint(ae, "autoencoder.json")
    ws.write_manifest("train-ae", _inputs(cfg, "graphs/input.json", "graphs/counterfactual.json"), started,
                      {"final_loss": ae.loss_trace[-1] if ae.loss_trace else None})
    return 0


def _diffusion_name(vanilla: bool) -> str:
    return "diffusion_vanilla.json" if vanilla else "diffusion.json"


def cmd_train_diff(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    ws = _workspace(cfg)
    graph, tr = _load_treatment_stage(ws)
    ae = ws.load_checkpoint("autoencoder.json", "autoencoder")
    vf, vcf = pl.training_corpus(cfg, graph, tr.graph_cf)
    params = pl.train_diffusion_stage(cfg, ae, vf, vcf, tr, gamma2=0.0 if args.vanilla else None)
    name = _diffusion_name(args.vanilla)
    ws.save_checkpoint(params, name)
    ws.write_manifest("train-diff-vanilla" if args.vanilla else "train-diff",
                      _inputs(cfg, "checkpoints/autoencoder.json"), started,
                      {"gamma1": params.gamma1, "gamma2": params.gamma2})
    return 0


def cmd_generate(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    ws = _workspace(cfg)
    name = _diffusion_name(args.vanilla)
    params = ws.load_checkpoint(name, "diffusion")
    ae = ws.load_checkpoint("autoencoder.json", "autoencoder")
    graph = ws.load_graph("input.json")
    treatment = ws.load_treatment("treatment_factual.json" if args.vanilla else "treatment_counterfactual.json")
    method = "diffusion" if args.vanilla else "fairgdiff"
    out = pl.generate_stage(cfg, ae, params, graph, treatment, method)
    target = "generated_vanilla.json" if args.vanilla else "generated.json"
    p = ws.save_graph(out, target)
    ws.write_manifest("generate-vanilla" if args.vanilla else "generate",
                      _inputs(cfg, f"checkpoints/{name}", "checkpoints/autoencoder.json"), started)
    print(p)
    return 0


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    ws = _workspace(cfg)
    entries = []
    inputs = []
    if args.graph:
        for spec in args.graph:
            name, sep, path = spec.partition("=")
            if not sep:
                name, path = Path(spec).stem, spec
            entries.append((name, read_graph(path)))
            inputs.append(path)
    else:
        graph = ws.load_graph("input.json")
        entries.append(("original", graph))
        inputs.append("graphs/input.json")
        for name, fname in (("diffusion", "generated_vanilla.json"), ("fairgdiff", "generated.json")):
            if ws.path("graphs", fname).exists():
                entries.append((name, ws.load_graph(fname)))
                inputs.append(f"graphs/{fname}")
        fd = pl.fairdrop_stage(cfg, graph)
        ws.save_graph(fd, "fairdrop.json")
        entries.insert(min(2, len(entries)), (fd.name, fd))
    if len(entries) < 2:
        raise PreconditionError("evaluate needs at least two graphs")
    ae = None
    if ws.path("checkpoints", "autoencoder.json").exists():
        ae = ws.load_checkpoint("autoencoder.json", "autoencoder")
        inputs.append("checkpoints/autoencoder.json")
    table = pl.evaluate_stage(cfg, entries, ae)
    ws.save_table(table)
    ws.save_audit(pl.audit_graphs(entries, cfg.eval.normalize_entropy))
    ws.write_manifest("evaluate", _inputs(cfg, *inputs), started)
    _print_table(table)
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    res = pl.run_pipeline(cfg, cfg.output_dir)
    _print_table(res.table)
    return 0


def _print_table(table) -> None:
    for r in table.rows:
        print(f"{r['method']:<16} {r['task']:<20} {r['utility_name']}={r['utility']:.4f} "
              f"dp={r['delta_dp']:.4f} eo={r['delta_eo']:.4f} t1={r['t1']:.4f} hv={r['hypervolume']:.4g}")


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairgdiff", description="Topology-debiasing graph diffusion toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, gammas=False):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--xi", type=float, help="counterfactual distance threshold")
        p.add_argument("--delta", type=float, help="FairDrop drop probability")
        p.add_argument("--normalize-entropy", action="store_true", help="report degree entropy divided by log n")
        if gammas:
            p.add_argument("--gamma1", type=float, help="factual loss weight")
            p.add_argument("--gamma2", type=float, help="counterfactual loss weight")
        return p

    p = common(sub.add_parser("synth", help="generate a homophilic SBM graph"))
    p.add_argument("--n-per-group", type=int)
    p.add_argument("--p-intra", type=float)
    p.add_argument("--p-inter", type=float)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--shift", type=float, help="feature mean shift of group 1")
    p.add_argument("--name", default="synth.json", help="file name under graphs/")
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("audit", help="topology bias ratios and graph statistics"))
    p.add_argument("graphs", nargs="*", help="graph JSON files; the first is the reference")
    p.set_defaults(func=cmd_audit)

    common(sub.add_parser("treatment", help="factual/counterfactual treatments and A^CF")).set_defaults(
        func=cmd_treatment)
    common(sub.add_parser("train-ae", help="train the graph autoencoder")).set_defaults(func=cmd_train_ae)

    p = common(sub.add_parser("train-diff", help="train the latent diffusion model"), gammas=True)
    p.add_argument("--vanilla", action="store_true", help="train with gamma2 = 0")
    p.set_defaults(func=cmd_train_diff)

    p = common(sub.add_parser("generate", help="sample a graph from a trained diffusion model"))
    p.add_argument("--vanilla", action="store_true", help="use the gamma2 = 0 model and the factual treatment")
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("evaluate", help="compare methods on downstream tasks"))
    p.add_argument("--graph", action="append", metavar="NAME=PATH",
                   help="graph to compare (repeatable); defaults to the pipeline outputs")
    p.set_defaults(func=cmd_evaluate)

    common(sub.add_parser("pipeline", help="run every stage"), gammas=True).set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FairGDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return PreconditionError.exit_code


if __name__ == "__main__":
    sys.exit(main())
