import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from hetinject.attack import AttackBudget, PerturbedGraph
from hetinject.cli import main
from hetinject.evaluate import train_targets, transfer_attack, validate_report
from hetinject.graph import recover_ledger
from hetinject.io import load_graph
from hetinject.surrogate import TrainConfig

PIPELINE = """\
seed = 3

[dataset]
path = "synth"

[attack]
rho = 0.05
surrogate = "train/surrogate.json"
ablations = ["random-edges"]

[eval]
attacked = "attack/attacked"
random = "attack/random"
drop_relation_study = true
surrogate = "train/surrogate.json"

[adapt]
generators = "attack/generators.json"
path = "synth"
"""

SYNTH = """\
seed = 3

[dataset.synthetic]
preset = "standard"
"""


def run(*argv):
    return main([str(a) for a in argv])


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def build(root: Path):
    (root / "synth.toml").write_text(SYNTH)
    (root / "cfg.toml").write_text(PIPELINE)
    assert run("synth", "--config", root / "synth.toml", "--out", root / "synth") == 0
    cfg = root / "cfg.toml"
    assert run("train", "--config", cfg, "--out", root / "train") == 0
    assert run("attack", "--config", cfg, "--out", root / "attack") == 0
    assert run("eval", "--config", cfg, "--out", root / "eval") == 0
    assert run("adapt", "--config", cfg, "--rho", 0.01, "--out", root / "adapt") == 0
    assert run("check-grad", "--config", cfg, "--instances", 3, "--out", root / "checkgrad") == 0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    build(root)
    return root


def load(path):
    return json.loads(Path(path).read_text())


class TestDeterminism:
    def test_every_command_byte_identical(self, pipeline, tmp_path):
        for name in ("synth.toml", "cfg.toml"):
            shutil.copy(pipeline / name, tmp_path / name)
        build(tmp_path)
        for out in ("synth", "train", "attack", "eval", "adapt", "checkgrad"):
            assert tree_bytes(pipeline / out) == tree_bytes(tmp_path / out), out

    def test_reports_embed_hash_and_seed(self, pipeline):
        for path in ("synth/spec.json", "train/train_report.json", "attack/trace.json", "adapt/adapt_report.json",
                     "checkgrad/checkgrad.json"):
            rep = load(pipeline / path)
            assert rep["seed"] == 3 and len(rep["config_hash"]) == 64, path
        assert load(pipeline / "eval/report.json")["seeds"]["seed"] == 3


class TestSynth:
    def test_three_relations(self, pipeline):
        names = {line.split("\t")[2] for line in (pipeline / "synth/edges.tsv").read_text().splitlines()[1:]}
        assert names == {"writes", "cites", "reviews"}

    def test_round_trip(self, pipeline):
        g = load_graph(pipeline / "synth")
        assert g.fingerprint() == load(pipeline / "synth/spec.json")["fingerprint"]

    def test_rejects_path_source(self, pipeline, tmp_path):
        assert run("synth", "--config", pipeline / "cfg.toml", "--out", tmp_path / "x") == 2


class TestTrain:
    def test_separable(self, tmp_path):
        (tmp_path / "c.toml").write_text("""\
seed = 0
[dataset.synthetic]
num_classes = 3
target_type = "p"
feature_signal = 1.0
feature_noise = 0.0
node_types = [{name = "p", count = 150, feature_dim = 8}, {name = "a", count = 150, feature_dim = 8}]
relations = [{name = "pa", head = "p", tail = "a", edges = 300, homophily = 1.0},
             {name = "pp", head = "p", tail = "p", edges = 150, homophily = 1.0}]
""")
        assert run("train", "--config", tmp_path / "c.toml", "--out", tmp_path / "t") == 0
        assert load(tmp_path / "t/train_report.json")["val_micro_f1"] >= 0.99

    def test_missing_labels(self, pipeline, tmp_path, capsys):
        shutil.copytree(pipeline / "synth", tmp_path / "synth")
        (tmp_path / "synth/labels.tsv").unlink()
        (tmp_path / "c.toml").write_text('seed = 1\n[dataset]\npath = "synth"\n')
        assert run("train", "--config", tmp_path / "c.toml", "--out", tmp_path / "t") == 3
        assert "labels.tsv" in capsys.readouterr().err

    def test_missing_seed(self, tmp_path, capsys):
        (tmp_path / "c.toml").write_text('[dataset]\npath = "synth"\n')
        assert run("train", "--config", tmp_path / "c.toml", "--out", tmp_path / "t") == 2
        assert "seed" in capsys.readouterr().err

    def test_unknown_keys(self, pipeline, tmp_path):
        (tmp_path / "c.toml").write_text('seed = 1\n[dataset]\npath = "x"\n[surrogate]\nlearning_rate = 1\n')
        assert run("train", "--config", tmp_path / "c.toml", "--out", tmp_path / "t") == 2
        (tmp_path / "d.toml").write_text('seed = 1\n[extras]\n')
        assert run("train", "--config", tmp_path / "d.toml", "--out", tmp_path / "t") == 2


class TestAttack:
    def test_trace_steps(self, pipeline):
        trace = load(pipeline / "attack/trace.json")
        assert len(trace["steps"]) == 30 == trace["budget"]["injected"]
        assert trace["variants"] == ["attacked", "random", "ablation-random-edges"]

    def test_gradient_beats_random_edges(self, pipeline):
        f1 = load(pipeline / "attack/trace.json")["surrogate_micro_f1"]
        assert f1["attacked"] < f1["ablation-random-edges"]

    def test_edge_strategy_flag(self, pipeline, tmp_path):
        assert run("attack", "--config", pipeline / "cfg.toml", "--edge-strategy", "random",
                   "--out", tmp_path / "r") == 0
        trace = load(tmp_path / "r/trace.json")
        assert trace["attack_config"]["edge_strategy"] == "random"
        default = load(pipeline / "attack/trace.json")["surrogate_micro_f1"]["attacked"]
        assert default < trace["surrogate_micro_f1"]["attacked"]

    def test_zero_rate_identity(self, pipeline, tmp_path):
        assert run("attack", "--config", pipeline / "cfg.toml", "--rho", 0, "--out", tmp_path / "z") == 0
        assert tree_bytes(tmp_path / "z/attacked") == {k: v for k, v in tree_bytes(pipeline / "synth").items()
                                                       if k != "spec.json"}

    def test_oversized_M(self, pipeline, tmp_path):
        cfg = (pipeline / "cfg.toml").read_text().replace("rho = 0.05", "rho = 0.05\nM = 100")
        (pipeline / "big.toml").write_text(cfg)
        assert run("attack", "--config", pipeline / "big.toml", "--out", tmp_path / "b") == 5


class TestEval:
    def test_schema(self, pipeline):
        rep = load(pipeline / "eval/report.json")
        validate_report(rep)
        assert rep["variants"] == ["clean", "attacked", "random"]
        assert rep["models"] == ["rgcn-lite", "surrogate-clone"]

    def test_matches_library(self, pipeline):
        rep = load(pipeline / "eval/report.json")
        g = load_graph(pipeline / "synth")
        attacked = load_graph(pipeline / "attack/attacked")
        rnd = load_graph(pipeline / "attack/random")
        budget = AttackBudget(rho=0.05)
        targets = train_targets(g, ["rgcn-lite", "surrogate-clone"], 3, TrainConfig())
        pert = PerturbedGraph(g, recover_ledger(g, attacked), budget.max_nodes(g.num_nodes), budget.K)
        base = PerturbedGraph(g, recover_ledger(g, rnd), budget.max_nodes(g.num_nodes), budget.K)
        direct = transfer_attack(targets, pert, base, seeds=rep["seeds"])
        assert json.loads(json.dumps(direct)) == rep

    def test_clean_only(self, pipeline, tmp_path):
        (tmp_path / "c.toml").write_text(f'seed = 3\n[dataset]\npath = "{pipeline / "synth"}"\n'
                                         '[eval]\ntargets = ["rgcn-lite"]\n')
        assert run("eval", "--config", tmp_path / "c.toml", "--out", tmp_path / "e") == 0
        rep = load(tmp_path / "e/report.json")
        validate_report(rep)
        assert rep["variants"] == ["clean"] and "deltas" not in rep["metrics"]["rgcn-lite"]

    def test_relation_study(self, pipeline):
        study = load(pipeline / "eval/relation_study.json")
        assert set(study["models"]) == {"surrogate", "rgcn-lite", "surrogate-clone"}
        assert study["relations"] == ["writes", "cites", "reviews"]


class TestAdapt:
    def test_self_adaptation(self, pipeline):
        rep = load(pipeline / "adapt/adapt_report.json")
        assert rep["self_adaptation"] is True
        assert rep["drop_full"] == rep["drop_adapted"]

    def test_fresh_graph_reports_criterion(self, pipeline, tmp_path):
        (tmp_path / "c.toml").write_text(f"""\
seed = 3
[attack]
rho = 0.01
[adapt]
generators = "{pipeline / 'attack/generators.json'}"
synthetic = {{preset = "standard"}}
synthetic_seed = 40
""")
        assert run("adapt", "--config", tmp_path / "c.toml", "--out", tmp_path / "a") == 0
        rep = load(tmp_path / "a/adapt_report.json")
        assert rep["self_adaptation"] is False
        assert rep["within_3_points"] == (abs(rep["drop_full"] - rep["drop_adapted"]) <= 0.03)

    def test_incompatible_dims(self, pipeline, tmp_path, capsys):
        (tmp_path / "c.toml").write_text(f"""\
seed = 3
[attack]
rho = 0.01
[adapt]
generators = "{pipeline / 'attack/generators.json'}"
allow_adapter = false
synthetic = {{preset = "standard", node_types = [{{name = "paper", count = 300, feature_dim = 32, role = "content"}},
                                               {{name = "author", count = 300, feature_dim = 64, role = "attribute"}}]}}
""")
        assert run("adapt", "--config", tmp_path / "c.toml", "--out", tmp_path / "a") == 3
        assert "compatibility" in capsys.readouterr().err


class TestCheckGrad:
    def test_pass(self, pipeline):
        rep = load(pipeline / "checkgrad/checkgrad.json")
        assert rep["passed"] and len(rep["instances"]) == 3

    def test_sign_flip_fails(self, tmp_path, capsys):
        assert run("check-grad", "--seed", 0, "--instances", 2, "--inject-sign-flip", "--out", tmp_path) == 4
        assert "gradient check failed" in capsys.readouterr().err
        assert not load(tmp_path / "checkgrad.json")["passed"]

    def test_zero_tolerance_fails(self, tmp_path):
        assert run("check-grad", "--seed", 0, "--instances", 2, "--tol", 0, "--out", tmp_path) == 4


def test_console_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hetinject", "check-grad", "--seed", "1", "--instances", "1",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["passed"] is True
