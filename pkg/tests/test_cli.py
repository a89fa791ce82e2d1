import json
import os

import pytest

from contrex.cli import EXIT_CONFIG_ERROR, EXIT_OK, main

SMALL_CONFIG = """\
[dataset]
n_tasks = 2
relations_per_task = 2
train_per_relation = 12
test_per_relation = 6
vocab_size = 80
seq_len = 10

[model]
dim = 16
pool_size = 4
top_k = 2
head_hidden = 32

[replay]
samples_per_relation = 40

[training]
pool_epochs = 3
classifier_epochs = 40
seed = 1
seeds = 1,2
"""


@pytest.fixture
def small_config_path(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_CONFIG)
    return str(path)


class TestTrain:
    def test_writes_state_reports_and_figures(self, small_config_path, tmp_path, capsys):
        out = str(tmp_path / "run")
        code = main(["train", "--config", small_config_path, "--out", out])
        assert code == EXIT_OK
        for name in ("state.bin", "stage_reports.csv", "stage_reports.json",
                     "effective_config.ini", "figures/accuracy.png",
                     "figures/task_precision.png"):
            assert os.path.exists(os.path.join(out, name)), name
        text = capsys.readouterr().out
        assert "final average accuracy" in text

    def test_seed_override_recorded(self, small_config_path, tmp_path):
        out = str(tmp_path / "run")
        main(["train", "--config", small_config_path, "--out", out, "--seed", "9",
              "--no-plots"])
        effective = open(os.path.join(out, "effective_config.ini")).read()
        assert "seed = 9" in effective

    def test_lr_grid_override_recorded(self, tmp_path):
        cfgpath = tmp_path / "lr.ini"
        cfgpath.write_text(SMALL_CONFIG + "pool_lr = 5e-05\n")
        out = str(tmp_path / "data")
        code = main(["gen-data", "--config", str(cfgpath), "--out", out])
        assert code == EXIT_OK
        effective = open(os.path.join(out, "effective_config.ini")).read()
        assert "pool_lr = 5e-05" in effective

    def test_rerun_byte_identical_reports(self, small_config_path, tmp_path):
        out_a = str(tmp_path / "a")
        out_b = str(tmp_path / "b")
        main(["train", "--config", small_config_path, "--out", out_a, "--no-plots"])
        main(["train", "--config", small_config_path, "--out", out_b, "--no-plots"])
        for name in ("stage_reports.csv", "stage_reports.json"):
            a = open(os.path.join(out_a, name), "rb").read()
            b = open(os.path.join(out_b, name), "rb").read()
            assert a == b, name

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[model]\ndim = -3\n")
        code = main(["train", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert code == EXIT_CONFIG_ERROR

    def test_missing_config_exit_code(self, tmp_path):
        code = main(["train", "--config", "/nope/none.ini", "--out", str(tmp_path)])
        assert code == EXIT_CONFIG_ERROR


class TestEval:
    def test_eval_saved_state(self, small_config_path, tmp_path):
        out = str(tmp_path / "run")
        main(["train", "--config", small_config_path, "--out", out, "--no-plots"])
        out2 = str(tmp_path / "eval")
        code = main(["eval", "--state", os.path.join(out, "state.bin"),
                     "--config", small_config_path, "--out", out2, "--no-plots"])
        assert code == EXIT_OK
        payload = json.loads(open(os.path.join(out2, "eval_report.json")).read())
        assert payload[0]["stage"] == 2

    def test_task_incremental_flag(self, small_config_path, tmp_path):
        out = str(tmp_path / "run")
        main(["train", "--config", small_config_path, "--out", out, "--no-plots"])
        out2 = str(tmp_path / "eval_ti")
        code = main(["eval", "--state", os.path.join(out, "state.bin"),
                     "--config", small_config_path, "--out", out2,
                     "--task-incremental", "--no-plots"])
        assert code == EXIT_OK
        payload = json.loads(open(os.path.join(out2, "eval_report.json")).read())
        assert all(p == 1.0 for p in payload[0]["task_precision"])


class TestAblate:
    def test_grid_of_two_points(self, small_config_path, tmp_path):
        out = str(tmp_path / "ab")
        grid = json.dumps([
            {"label": "full"},
            {"label": "tiny-pool", "model.pool_size": 1, "model.top_k": 1},
        ])
        code = main(["ablate", "--config", small_config_path, "--out", out,
                     "--grid", grid, "--no-plots"])
        assert code == EXIT_OK
        lines = open(os.path.join(out, "ablation.csv")).read().strip().splitlines()
        assert len(lines) == 3  # header + 2 rows
        assert lines[1].startswith("full,")
        assert lines[2].startswith("tiny-pool,model.pool_size=1;model.top_k=1,")

    def test_experts_preset_structure(self, small_config_path, tmp_path):
        # mirrors the experts-per-prompt table: four (L, K) pairs
        out = str(tmp_path / "ab")
        cfgpath = tmp_path / "tiny.ini"
        cfgpath.write_text(SMALL_CONFIG.replace("seeds = 1,2", "seeds = 1")
                           .replace("pool_epochs = 3", "pool_epochs = 1")
                           .replace("classifier_epochs = 40", "classifier_epochs = 5")
                           .replace("pool_size = 4", "pool_size = 8"))
        code = main(["ablate", "--config", str(cfgpath), "--out", out,
                     "--preset", "experts", "--no-plots"])
        assert code == EXIT_OK
        rows = json.loads(open(os.path.join(out, "ablation.json")).read())
        assert [r["label"] for r in rows] == ["L8-K1", "L4-K2", "L2-K4", "L1-K8"]

    def test_bad_grid_json(self, small_config_path, tmp_path):
        code = main(["ablate", "--config", small_config_path,
                     "--out", str(tmp_path), "--grid", "not-json"])
        assert code == EXIT_CONFIG_ERROR

    def test_missing_grid_and_preset(self, small_config_path, tmp_path):
        code = main(["ablate", "--config", small_config_path, "--out", str(tmp_path)])
        assert code == EXIT_CONFIG_ERROR


class TestVerifyCommand:
    def test_verify_passes_on_fresh_checkout(self, capsys):
        code = main(["verify"])
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "moe-duality" in text
        assert "FAIL" not in text

    def test_verify_deterministic(self, capsys):
        main(["verify"])
        a = capsys.readouterr().out
        main(["verify"])
        b = capsys.readouterr().out
        assert a == b


class TestDataCommands:
    def test_gen_data(self, small_config_path, tmp_path):
        out = str(tmp_path / "data")
        code = main(["gen-data", "--config", small_config_path, "--out", out])
        assert code == EXIT_OK
        lines = open(os.path.join(out, "stream.jsonl")).read().splitlines()
        assert json.loads(lines[0])["record"] == "header"
        assert len(lines) > 1

    def test_ingest_fewrel(self, tmp_path):
        fixture = tmp_path / "fewrel.json"
        sample = {"tokens": ["a", "works", "for", "b"], "h": ["a", "Q1", [[0]]],
                  "t": ["b", "Q2", [[3]]]}
        fixture.write_text(json.dumps({
            "rel_a": [sample, sample, sample],
            "rel_b": [sample, sample, sample],
        }))
        out = str(tmp_path / "ing")
        code = main(["ingest-fewrel", "--json", str(fixture), "--tasks", "2",
                     "--out", out])
        assert code == EXIT_OK
        assert os.path.exists(os.path.join(out, "fewrel_stream.jsonl"))

    def test_ingest_parse_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        code = main(["ingest-fewrel", "--json", str(bad), "--tasks", "2",
                     "--out", str(tmp_path)])
        assert code == EXIT_CONFIG_ERROR


class TestReportCommand:
    def test_rerender_from_existing_run(self, small_config_path, tmp_path):
        out = str(tmp_path / "run")
        main(["train", "--config", small_config_path, "--out", out, "--no-plots"])
        assert not os.path.exists(os.path.join(out, "figures", "accuracy.png"))
        code = main(["report", "--run", out])
        assert code == EXIT_OK
        assert os.path.exists(os.path.join(out, "figures", "accuracy.png"))

    def test_missing_run_dir(self, tmp_path):
        code = main(["report", "--run", str(tmp_path / "nope")])
        assert code == EXIT_CONFIG_ERROR


class TestEnvOverride:
    def test_out_dir_env_var(self, small_config_path, tmp_path, monkeypatch):
        target = tmp_path / "from_env"
        monkeypatch.setenv("CONTREX_OUT_DIR", str(target))
        code = main(["gen-data", "--config", small_config_path])
        assert code == EXIT_OK
        assert (target / "stream.jsonl").exists()
