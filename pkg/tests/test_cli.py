import csv
import json
import subprocess
import sys

import pytest

from fairgdiff.cli import main

SMALL_CONFIG = """\
seed: 1
data:
  sbm: {n_per_group: 15, p_intra: 0.3, p_inter: 0.06}
treatment: {link_epochs: 30}
augment: {count: 3}
autoencoder: {n_max: 30, epochs: 15, latent_dim: 4, enc_width: 8, hidden: 16}
diffusion: {epochs: 15, steps: 10, hidden: 16, tau_width: 8, cond_dim: 8, time_dim: 4}
eval:
  classifier: {epochs: 10}
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(SMALL_CONFIG)
    return p


def primary_outputs(root):
    files = {}
    for sub in ("graphs", "checkpoints", "reports"):
        for f in sorted((root / sub).glob("*")):
            files[f"{sub}/{f.name}"] = f.read_bytes()
    return files


def test_synth_then_audit_equal_probabilities(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["synth", "--out", str(out), "--n-per-group", "200", "--p-intra", "0.05",
                 "--p-inter", "0.05", "--seed", "3"]) == 0
    graph = out / "graphs" / "synth.json"
    assert main(["audit", str(graph), "--out", str(out)]) == 0
    doc = json.loads((out / "reports" / "audit.json").read_text())
    assert abs(doc["graphs"]["synth"]["t1"] - 1.0) <= 0.15
    assert (out / "manifests" / "audit.json").exists()


def test_audit_graph_against_itself_has_zero_relative_diffs(tmp_path):
    out = tmp_path / "o"
    main(["synth", "--out", str(out), "--n-per-group", "30"])
    g = str(out / "graphs" / "synth.json")
    assert main(["audit", g, g, "--out", str(out)]) == 0
    doc = json.loads((out / "reports" / "audit.json").read_text())
    diffs = [v for per in doc["relative_diff"].values() for v in per.values() if v is not None]
    assert diffs and all(v == 0 for v in diffs)
    with (out / "reports" / "audit.csv").open() as fh:
        assert len(list(csv.reader(fh))) > 1


def test_pipeline_is_byte_reproducible(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pipeline", "--config", str(config), "--out", str(a)]) == 0
    assert main(["pipeline", "--config", str(config), "--out", str(b)]) == 0
    fa, fb = primary_outputs(a), primary_outputs(b)
    assert "graphs/generated.json" in fa and "reports/comparison.csv" in fa
    assert fa == fb
    manifest = json.loads((a / "manifests" / "pipeline.json").read_text())
    assert {"config_hash", "seed", "elapsed_seconds"} <= set(manifest)
    with (a / "reports" / "comparison.csv").open() as fh:
        methods = {row["method"] for row in csv.DictReader(fh)}
    assert methods == {"original", "diffusion", "fairdrop(0.5)", "fairgdiff"}


def test_stagewise_commands_match_pipeline(tmp_path, config):
    whole, staged = tmp_path / "whole", tmp_path / "staged"
    assert main(["pipeline", "--config", str(config), "--out", str(whole)]) == 0
    common = ["--config", str(config), "--out", str(staged)]
    for cmd in (["treatment"], ["train-ae"], ["train-diff"], ["train-diff", "--vanilla"],
                ["generate"], ["generate", "--vanilla"], ["evaluate"]):
        assert main(cmd + common) == 0, cmd
    for name in ("generated.json", "generated_vanilla.json", "counterfactual.json"):
        assert (staged / "graphs" / name).read_bytes() == (whole / "graphs" / name).read_bytes()
    assert (staged / "reports" / "comparison.csv").read_bytes() == (whole / "reports" / "comparison.csv").read_bytes()
    for cmd in ("treatment", "train-ae", "train-diff", "generate", "evaluate"):
        assert (staged / "manifests" / f"{cmd}.json").exists()


def test_generate_without_checkpoint_exits_5(tmp_path, config, capsys):
    out = tmp_path / "o"
    assert main(["treatment", "--config", str(config), "--out", str(out)]) == 0
    assert main(["generate", "--config", str(config), "--out", str(out)]) == 5
    assert "checkpoint" in capsys.readouterr().err


def test_evaluate_two_named_graphs(tmp_path, config):
    out = tmp_path / "o"
    main(["synth", "--out", str(out), "--n-per-group", "30", "--name", "a.json"])
    main(["synth", "--out", str(out), "--n-per-group", "30", "--seed", "5", "--name", "b.json"])
    rc = main(["evaluate", "--config", str(config), "--out", str(out),
               "--graph", f"first={out / 'graphs' / 'a.json'}", "--graph", f"second={out / 'graphs' / 'b.json'}"])
    assert rc == 0
    with (out / "reports" / "comparison.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) >= 2 and {r["method"] for r in rows} == {"first", "second"}


@pytest.mark.parametrize("argv, code", [
    (["audit", "/nonexistent/graph.json"], 3),
    (["synth", "--p-intra", "0.01", "--p-inter", "0.5"], 2),
    (["pipeline", "--config", "/nonexistent.yaml"], 2),
    (["evaluate", "--graph", "only=/nonexistent.json"], 3),
])
def test_error_exit_codes(tmp_path, argv, code):
    assert main(argv + ["--out", str(tmp_path / "o")]) == code


def test_bad_config_value_exit_code(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("treatment: {xi: -1}\n")
    assert main(["treatment", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point_runs(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fairgdiff.cli", "synth", "--out", str(tmp_path / "o"),
                          "--n-per-group", "10"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "graphs" / "synth.json").exists()
