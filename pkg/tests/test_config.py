import pytest

from contrex.config import (
    RunConfig,
    load_config,
    save_config,
    write_default_config,
)
from contrex.errors import ConfigError


class TestDefaults:
    def test_default_validates(self):
        cfg = RunConfig().validate()
        assert cfg.dataset.n_tasks == 5
        assert cfg.model.pool_size == 10
        assert cfg.replay.n_components == 1
        assert cfg.training.seeds == (1, 2, 3, 4, 5)

    def test_committed_default_file_matches_defaults(self, tmp_path):
        path = tmp_path / "default.ini"
        write_default_config(path)
        assert load_config(path) == RunConfig()


class TestRoundTrip:
    def test_save_load_lossless(self, tmp_path):
        cfg = RunConfig()
        cfg.training.pool_lr = 5e-05
        cfg.model.surrogate_weight = 0.30000000000000004
        cfg.dataset.context_overlap = 1.0 / 3.0
        cfg.mode.no_replay = True
        cfg.training.seeds = (7, 11)
        path = tmp_path / "cfg.ini"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_grid_value_override_honored(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[training]\npool_lr = 5e-05\n")
        cfg = load_config(path)
        assert cfg.training.pool_lr == 5e-05


class TestValidation:
    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/nowhere.ini")

    def test_unknown_option(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[model]\nbogus = 3\n")
        with pytest.raises(ConfigError, match="unknown option"):
            load_config(path)

    def test_bad_value_type(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[model]\ndim = banana\n")
        with pytest.raises(ConfigError, match="model.dim"):
            load_config(path)

    def test_semantic_violations(self):
        cfg = RunConfig()
        cfg.model.top_k = 99
        with pytest.raises(ConfigError, match="top_k"):
            cfg.validate()
        cfg = RunConfig()
        cfg.model.dim = 30
        cfg.model.n_heads = 4
        with pytest.raises(ConfigError, match="divisible"):
            cfg.validate()
        cfg = RunConfig()
        cfg.dataset.source = "fewrel"
        with pytest.raises(ConfigError, match="fewrel_path"):
            cfg.validate()
        cfg = RunConfig()
        cfg.training.pool_optimizer = "rmsprop"
        with pytest.raises(ConfigError, match="optimizer"):
            cfg.validate()
