import numpy as np
import pytest
import yaml

from daepinn._version import version
from daepinn.checkpoint import load_checkpoint
from daepinn.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main, parse_floats, parse_params
from daepinn.dae_model import descriptor_to_semi_explicit
from daepinn.errors import ConfigError
from daepinn.experiment import ExperimentConfig
from daepinn.tableau import read_tableau
from daepinn.trajectory import Trajectory

TINY = """
model: {name: linear}
tableau: {scheme: gauss, nu: 2}
h: 0.1
network:
  y: {width: 4, depth: 1}
  z: {width: 4, depth: 1}
train: {epochs_per_outer: 3, K: 0, train_size: 4, test_size: 3}
evaluation:
  steps: 2
  ensemble: 2
  oracle: {h_ref: 0.01}
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    yield str(path)


@pytest.fixture
def trained(tmp_path, tiny_config, global_config):
    out = tmp_path / "train"
    assert main(["train", "--config", tiny_config, "--out", str(out)]) == EXIT_OK
    yield out / "checkpoint.yaml"


class TestParsing:
    def test_floats(self):
        assert parse_floats("0.1, 0,0.02,", "--ic") == [0.1, 0.0, 0.02]
        with pytest.raises(ConfigError) as e:
            parse_floats("0.1,x", "--ic")
        assert str(e.value) == "--ic: expected comma-separated numbers, found '0.1,x'"

    def test_params(self):
        assert parse_params(["Pl=2.5", " Ql = 0.2"]) == {"Pl": 2.5, "Ql": 0.2}
        with pytest.raises(ConfigError) as e:
            parse_params(["Pl"])
        assert str(e.value) == "--param: expected NAME=VALUE, found 'Pl'"


class TestExitCodes:
    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == f"daepinn {version}"

    def test_usage_errors(self, capsys):
        assert main([]) == EXIT_CONFIG
        assert main(["nonsense"]) == EXIT_CONFIG
        assert main(["tableau"]) == EXIT_CONFIG

    def test_bad_config(self, tmp_path, global_config):
        path = tmp_path / "bad.yaml"
        path.write_text("train: {bta: 3}\n")
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
        path.write_text("train: [1\n")
        assert main(["datagen", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
        assert not (tmp_path / "out").exists()

    def test_missing_files(self, tmp_path, global_config):
        assert main(["train", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG
        assert main(["simulate", "--ckpt", str(tmp_path / "absent.yaml"), "--ic", "1", "--out", "x"]) == EXIT_CONFIG

    def test_invalid_stage_count(self, tmp_path, global_config):
        assert main(["tableau", "--stages", "0", "--out", str(tmp_path / "g0.txt")]) == EXIT_CONFIG

    def test_numerical_failure(self, tmp_path, global_config):
        args = ["oracle", "--ic", "0,0,0,0", "--zguess", "0", "--tend", "0.01", "--out", str(tmp_path / "o.csv")]
        assert main(args) == EXIT_RUNTIME

    @pytest.mark.parametrize(
        "mass,error",
        [
            (np.eye(2), "NotADAEError"),
            (np.diag([1.0, 1e-9]), "AmbiguousRankError"),
        ],
    )
    def test_rank_failures_are_runtime_failures(self, tmp_path, global_config, monkeypatch, mass, error):
        def reduce_then_solve(*args, **kwargs):
            return descriptor_to_semi_explicit(mass, lambda u: u)

        monkeypatch.setattr("daepinn.cli.solve", reduce_then_solve)
        args = ["oracle", "--model", "linear", "--ic", "1.0", "--tend", "0.1", "--out", str(tmp_path / "o.csv")]
        with pytest.raises(ValueError) as e:
            reduce_then_solve()
        assert type(e.value).__name__ == error
        assert main(args) == EXIT_RUNTIME
        assert not (tmp_path / "o.csv").exists()


class TestTableauCommand:
    def test_writes_the_tableau_and_its_manifest(self, tmp_path, global_config):
        out = tmp_path / "tables" / "gauss3.txt"
        assert main(["tableau", "--stages", "3", "--out", str(out)]) == EXIT_OK
        t = read_tableau(out)
        assert (t.nu, t.order) == (3, 6)
        manifest = yaml.safe_load((out.parent / "gauss3.manifest.yaml").read_text())
        assert manifest["manifest"]["command"] == "tableau"
        assert manifest["tableau"]["file"] == str(out)

    def test_backward_euler(self, tmp_path, global_config):
        out = tmp_path / "be.txt"
        assert main(["tableau", "--scheme", "backward_euler", "--out", str(out)]) == EXIT_OK
        assert out.read_text().splitlines()[0] == "1 1"


class TestOracleCommand:
    def test_linear_trajectory(self, tmp_path, global_config):
        out = tmp_path / "oracle" / "linear.csv"
        args = ["oracle", "--model", "linear", "--ic", "1.0", "--tend", "0.5", "--h-ref", "0.1", "--out", str(out)]
        assert main(args) == EXIT_OK
        traj = Trajectory.read_csv(out, n=1)
        assert len(traj) == 6
        assert traj.Y[-1, 0] == pytest.approx(0.6065306597, rel=1e-8)
        cfg = ExperimentConfig.load(out.parent / "linear.manifest.yaml")
        assert cfg.model.name == "linear"
        assert cfg.evaluation.oracle.h_ref == 0.1
        assert cfg.evaluation.z_guess == [0.0]

    def test_initial_condition_length(self, tmp_path, global_config):
        args = ["oracle", "--ic", "0.1,0.2", "--tend", "0.01", "--out", str(tmp_path / "o.csv")]
        assert main(args) == EXIT_CONFIG

    def test_parameter_override(self, tmp_path, global_config):
        args = ["oracle", "--model", "linear", "--param", "a=1", "--ic", "1", "--tend", "0.1"]
        assert main(args + ["--out", str(tmp_path / "o.csv")]) == EXIT_CONFIG


class TestPipeline:
    def test_datagen_under_the_output_root(self, tmp_path, tiny_config, global_config):
        root = tmp_path / "root"
        assert main(["--output-root", str(root), "datagen", "--config", tiny_config, "--train-size", "5"]) == EXIT_OK
        assert len((root / "experiment" / "train_ics.csv").read_text().splitlines()) == 6

    def test_train_writes_a_checkpoint(self, trained):
        ckpt = load_checkpoint(trained)
        assert ckpt.model == "linear"
        assert (trained.parent / "training_log.csv").is_file()
        assert yaml.safe_load((trained.parent / "manifest.yaml").read_text())["manifest"]["command"] == "train"

    def test_overrides_reach_the_run(self, tmp_path, tiny_config, global_config):
        out = tmp_path / "seeded"
        args = ["train", "--config", tiny_config, "--out", str(out), "--init-seed", "4", "--epochs", "2"]
        assert main(args) == EXIT_OK
        cfg = ExperimentConfig.load(out / "manifest.yaml")
        assert (cfg.seeds.init, cfg.train.epochs_per_outer) == (4, 2)
        assert load_checkpoint(out / "checkpoint.yaml").seeds["init"] == 4

    def test_evaluate(self, trained, tiny_config, tmp_path):
        out = tmp_path / "eval"
        assert main(["evaluate", "--ckpt", str(trained), "--config", tiny_config, "--out", str(out)]) == EXIT_OK
        assert (out / "ensemble_summary.csv").is_file()
        assert (out / "ensemble_members.csv").is_file()

    def test_simulate(self, trained, tiny_config, tmp_path):
        out = tmp_path / "sim"
        args = ["simulate", "--ckpt", str(trained), "--config", tiny_config, "--ic", "1.0", "--out", str(out)]
        assert main(args + ["--no-plots"]) == EXIT_OK
        assert (out / "errors.csv").is_file()
        assert not list(out.glob("*.svg"))
        assert main(["simulate", "--ckpt", str(trained), "--ic", "1.0,2.0", "--out", str(out)]) == EXIT_CONFIG

    def test_compare(self, trained, tiny_config, tmp_path):
        out = tmp_path / "cmp"
        args = ["compare", "--ckpt", f"a={trained}", "--ckpt", f"b={trained}", "--config", tiny_config]
        assert main(args + ["--ic", "1.0", "--out", str(out)]) == EXIT_OK
        assert len((out / "curves.csv").read_text().splitlines()) == 5

    def test_grid_needs_a_grid_section(self, tiny_config, tmp_path):
        assert main(["grid", "--config", tiny_config, "--out", str(tmp_path / "grid")]) == EXIT_CONFIG
