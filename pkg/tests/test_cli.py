"""Command line: exit codes, output shapes, and configuration loading."""

from __future__ import annotations

import json

import pytest

from issuetriage.analyzers import SeverityModel
from issuetriage.cli import main
from issuetriage.config import (
    SECRET_ENV,
    TOKEN_ENV,
    ConfigError,
    load_config,
)
from issuetriage.sim import SimForge, SimServer
from tests.conftest import CLASS_TEXTS
from tests.test_metrics import CONFUSION_PAIRS


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(TOKEN_ENV, raising=False)
    monkeypatch.delenv(SECRET_ENV, raising=False)


@pytest.fixture
def sim_server():
    sim = SimForge()
    sim.create_repo("acme", "shop", files=["src/app.py"])
    for i in range(25):
        sim.seed_issue("acme", "shop", f"historic issue number{i} topic{i}")
    server = SimServer(sim)
    server.start()
    try:
        yield server
    finally:
        server.stop()


def write_config(tmp_path, sim_server=None, extra: str = "") -> str:
    lines = ["[storage]", f'path = "{tmp_path / "store.sqlite"}"']
    if sim_server is not None:
        lines += [
            "[forge]",
            f'base_url = "{sim_server.base_url}"',
            'token = "sim-token"',
        ]
    text = "\n".join(lines) + "\n" + extra
    path = tmp_path / "config.toml"
    path.write_text(text, encoding="utf-8")
    return str(path)


def write_duplicate_dataset(tmp_path) -> str:
    path = tmp_path / "pairs.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for pair in CONFUSION_PAIRS:
            fh.write(
                json.dumps(
                    {
                        "a": {"title": pair.a_title, "body": pair.a_body},
                        "b": {"title": pair.b_title, "body": pair.b_body},
                        "duplicate": pair.duplicate,
                    }
                )
                + "\n"
            )
    return str(path)


def write_severity_dataset(tmp_path) -> str:
    path = tmp_path / "severity.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for cls, (title, body) in CLASS_TEXTS.items():
            fh.write(json.dumps({"title": title, "body": body, "severity": cls.value}) + "\n")
    return str(path)


def write_localization_dataset(tmp_path) -> str:
    path = tmp_path / "loc.jsonl"
    row = {
        "issue": {"title": "alpha one", "body": ""},
        "files": ["alpha/one.py", "beta/two.py", "gamma/three.py"],
        "relevant": ["alpha/one.py", "beta/two.py"],
    }
    path.write_text(json.dumps(row) + "\n", encoding="utf-8")
    return str(path)


class TestUsageErrors:
    def test_no_command_is_a_usage_error(self, capsys):
        assert main([]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_command_is_a_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_install_requires_owner_slash_name(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["--config", config, "install", "justaname"]) == 1
        assert "OWNER/NAME" in capsys.readouterr().err

    def test_eval_requires_a_kind(self, tmp_path):
        config = write_config(tmp_path)
        assert main(["--config", config, "eval"]) == 1


class TestConfigLoading:
    def test_missing_config_file_is_a_data_error(self, capsys):
        assert main(["--config", "/nonexistent/config.toml", "status"]) == 2
        assert "config file not found" in capsys.readouterr().err

    def test_invalid_toml_is_a_data_error(self, tmp_path, capsys):
        path = tmp_path / "broken.toml"
        path.write_text("this is not toml [", encoding="utf-8")
        assert main(["--config", str(path), "status"]) == 2

    def test_out_of_range_page_size_refused(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("page_size = 500\n", encoding="utf-8")
        with pytest.raises(ConfigError, match=r"page_size"):
            load_config(path)

    def test_zero_consensus_runs_refused(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("[analyzers]\nconsensus_runs = 0\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="consensus_runs"):
            load_config(path)

    def test_defaults_without_a_file(self):
        config = load_config(None, env={})
        assert config.page_size == 100
        assert config.analyzers.threshold == 0.6
        assert config.gateway.queue_limit == 1000
        assert config.retry.max_attempts == 6

    def test_environment_overrides_file_secrets(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text('[forge]\ntoken = "from-file"\n', encoding="utf-8")
        config = load_config(
            path, env={TOKEN_ENV: "from-env", SECRET_ENV: "hook-secret"}
        )
        assert config.forge.token == "from-env"
        assert config.forge.webhook_secret == "hook-secret"

    def test_file_values_survive_without_env(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text(
            '[forge]\ntoken = "from-file"\nwebhook_secret = "file-secret"\n', encoding="utf-8"
        )
        config = load_config(path, env={})
        assert config.forge.token == "from-file"
        assert config.forge.webhook_secret == "file-secret"


class TestInstallAndStatus:
    def test_install_backfills_and_reports_pages(self, tmp_path, sim_server, capsys):
        config = write_config(tmp_path, sim_server)
        code = main(["--config", config, "install", "acme/shop", "--page-size", "10"])
        out = capsys.readouterr().out
        assert code == 0
        assert "page 1: 10 issues" in out
        assert "page 3: 5 issues" in out
        assert "acme/shop: indexed 25 issues over 3 pages" in out

    def test_second_install_is_a_noop(self, tmp_path, sim_server, capsys):
        config = write_config(tmp_path, sim_server)
        main(["--config", config, "install", "acme/shop", "--page-size", "10"])
        capsys.readouterr()
        assert main(["--config", config, "install", "acme/shop"]) == 0
        assert "already installed" in capsys.readouterr().out

    def test_status_reports_inventory_and_queue(self, tmp_path, sim_server, capsys):
        config = write_config(tmp_path, sim_server)
        main(["--config", config, "install", "acme/shop", "--page-size", "10"])
        capsys.readouterr()
        assert main(["--config", config, "status"]) == 0
        out = capsys.readouterr().out
        assert "acme/shop: 25 issues indexed, 0 issues with feedback, backfill complete" in out
        assert "queue: 0 pending deliveries" in out

    def test_status_with_nothing_installed(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["--config", config, "status"]) == 0
        assert "no repositories installed" in capsys.readouterr().out

    def test_install_without_token_is_a_data_error(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["--config", config, "install", "acme/shop"]) == 2
        assert "token" in capsys.readouterr().err

    def test_unreachable_forge_is_a_runtime_error(self, tmp_path, capsys):
        extra = (
            '[forge]\nbase_url = "http://127.0.0.1:9"\ntoken = "x"\n'
            "[retry]\ninitial_delay = 0.001\nmax_delay = 0.001\nmax_attempts = 2\n"
        )
        config = write_config(tmp_path, extra=extra)
        assert main(["--config", config, "install", "acme/shop"]) == 3
        assert "error" in capsys.readouterr().err

    def test_unopenable_storage_is_a_runtime_error(self, tmp_path, capsys):
        path = tmp_path / "config.toml"
        path.write_text('[storage]\npath = "/nonexistent-dir/x/store.sqlite"\n', encoding="utf-8")
        assert main(["--config", str(path), "status"]) == 3


class TestTrainSeverity:
    def test_writes_a_loadable_model(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = write_severity_dataset(tmp_path)
        out = str(tmp_path / "model.json")
        assert main(["--config", config, "train-severity", dataset, "--out", out]) == 0
        stdout = capsys.readouterr().out
        assert "trained on 5 examples" in stdout
        model = SeverityModel.load(out)
        assert len(model.centroids) == 5

    def test_missing_class_is_a_data_error(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = tmp_path / "partial.jsonl"
        dataset.write_text(
            json.dumps({"title": "boom", "severity": "Critical"}) + "\n", encoding="utf-8"
        )
        assert main(["--config", config, "train-severity", str(dataset)]) == 2
        assert "no training examples for class" in capsys.readouterr().err

    def test_malformed_dataset_names_the_line(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = tmp_path / "bad.jsonl"
        dataset.write_text('{"title": "x", "severity": "Critical"}\n{oops\n', encoding="utf-8")
        assert main(["--config", config, "train-severity", str(dataset)]) == 2
        assert ":2:" in capsys.readouterr().err


class TestEval:
    def test_duplicates_text_output(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = write_duplicate_dataset(tmp_path)
        assert main(["--config", config, "eval", "duplicates", dataset]) == 0
        out = capsys.readouterr().out
        assert "accuracy: 0.6000" in out
        assert "precision: 0.6667" in out
        assert "recall: 0.6667" in out
        assert "examples: 5" in out

    def test_duplicates_json_output(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = write_duplicate_dataset(tmp_path)
        assert main(["--config", config, "eval", "duplicates", dataset, "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload) == {
            "accuracy", "precision", "recall", "p_at_k", "r_at_k",
            "map", "n_examples", "flags",
        }
        assert payload["accuracy"] == pytest.approx(0.6)
        assert payload["n_examples"] == 5
        assert payload["p_at_k"] is None

    def test_duplicates_threshold_flag(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = write_duplicate_dataset(tmp_path)
        code = main(
            ["--config", config, "eval", "duplicates", dataset, "--threshold", "0.0", "--json"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["recall"] == pytest.approx(1.0)

    def test_severity_with_a_trained_model(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = write_severity_dataset(tmp_path)
        model_path = str(tmp_path / "model.json")
        main(["--config", config, "train-severity", dataset, "--out", model_path])
        capsys.readouterr()
        code = main(
            ["--config", config, "eval", "severity", dataset, "--model", model_path, "--json"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["accuracy"] == 1.0
        assert payload["precision"] == 1.0 and payload["recall"] == 1.0

    def test_severity_falls_back_to_builtin_model(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = write_severity_dataset(tmp_path)
        assert main(["--config", config, "eval", "severity", dataset]) == 0
        assert "examples: 5" in capsys.readouterr().out

    def test_localization_with_rank_cutoffs(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = write_localization_dataset(tmp_path)
        code = main(
            [
                "--config", config, "eval", "localization", dataset,
                "--k", "1", "--k", "2", "--json",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["p_at_k"] == {"1": 1.0, "2": 0.5}
        assert payload["r_at_k"] == {"1": 0.5, "2": 0.5}
        assert payload["map"] == pytest.approx(0.5)
        assert payload["accuracy"] == 1.0

    def test_missing_dataset_file_is_a_data_error(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["--config", config, "eval", "duplicates", "/nope.jsonl"]) == 2

    def test_malformed_dataset_is_a_data_error(self, tmp_path, capsys):
        config = write_config(tmp_path)
        dataset = tmp_path / "bad.jsonl"
        dataset.write_text("{not json\n", encoding="utf-8")
        assert main(["--config", config, "eval", "duplicates", str(dataset)]) == 2
        assert ":1:" in capsys.readouterr().err


class TestServe:
    def test_missing_webhook_secret_is_a_data_error(self, tmp_path, capsys):
        config = write_config(tmp_path, extra='[forge]\ntoken = "x"\n')
        assert main(["--config", config, "serve"]) == 2
        assert "secret" in capsys.readouterr().err
