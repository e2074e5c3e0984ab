"""
Tests for run configuration.
"""

import tempfile
from pathlib import Path

import pytest

from codelnet.config import (
    SEED_ENV,
    ConfigError,
    RunConfig,
    get_config,
    load_config_file,
    set_config,
)


class TestRunConfig:
    """Tests for RunConfig defaults and layering."""

    def test_defaults(self, monkeypatch):
        """Test the built-in defaults."""
        monkeypatch.delenv(SEED_ENV, raising=False)
        config = RunConfig()
        assert config.seed == 0
        assert config.optimizer == "sgd"
        assert config.lr == 0.001
        assert config.channel_names == ("t1c", "t2")
        config.validate()

    def test_seed_from_environment(self, monkeypatch):
        """Test CODELNET_SEED fills an unset seed."""
        monkeypatch.setenv(SEED_ENV, "42")
        assert RunConfig().seed == 42
        assert RunConfig(seed=7).seed == 7

    def test_bad_environment_seed(self, monkeypatch):
        """Test a non-integer environment seed."""
        monkeypatch.setenv(SEED_ENV, "forty")
        with pytest.raises(ConfigError, match=SEED_ENV):
            RunConfig()

    def test_file_then_overrides(self, monkeypatch):
        """Test flags beat the file and the file beats the environment."""
        monkeypatch.setenv(SEED_ENV, "9")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.conf"
            path.write_text("# comment\nseed = 3\noptimizer = adam\nlr = 0.01\n")
            config = RunConfig.from_sources(path, {"lr": 0.5, "epochs": None})
        assert config.seed == 3
        assert config.optimizer == "adam"
        assert config.lr == 0.5
        assert config.epochs == 100

    def test_overrides_are_coerced(self):
        """Test string flag values take the field's type."""
        config = RunConfig.from_sources(None, {"epochs": "7", "lr": "0.25", "seed": "1"})
        assert (config.epochs, config.lr, config.seed) == (7, 0.25, 1)

    def test_unknown_override(self):
        """Test overrides must name a setting."""
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_sources(None, {"bogus": 1})

    def test_write_and_reload(self):
        """Test a written config reloads to an equal one."""
        config = RunConfig(seed=5, optimizer="rmsprop", lr=0.0003, kernels="8,4", manifest="m.csv")
        with tempfile.TemporaryDirectory() as tmp:
            path = config.write(Path(tmp) / "run.conf")
            reloaded = RunConfig.from_sources(path)
        assert reloaded == config

    def test_with_overrides(self):
        """Test copies replace only the given settings."""
        config = RunConfig(seed=1)
        updated = config.with_overrides(channels="t2", epochs=None)
        assert updated.channels == "t2"
        assert updated.epochs == config.epochs
        assert config.channels == "both"

    @pytest.mark.parametrize(
        "overrides,match",
        [
            ({"channels": "flair"}, "channels"),
            ({"optimizer": "lbfgs"}, "optimizer"),
            ({"batch_size": 0}, "batch_size"),
            ({"lr": 0.0}, "lr"),
            ({"validation_fraction": 1.0}, "validation_fraction"),
            ({"kernels": "8,x"}, "kernels"),
            ({"canvas": 32, "max_shift": 20}, "shift"),
        ],
    )
    def test_invalid_values(self, overrides, match):
        """Test validation names the bad setting."""
        with pytest.raises(ConfigError, match=match):
            RunConfig.from_sources(None, overrides)

    def test_network_config(self):
        """Test the desk preset follows kernels, filters and canvas."""
        config = RunConfig(channels="t1c", canvas=32, kernels="5,3", filters=4, fc_sizes="8",
                           max_shift=4)
        network = config.network_config()
        assert network.input_channels == 1
        assert network.canvas == 32
        assert len(network.branches) == 2

    def test_paper_preset_canvas(self):
        """Test the paper preset fixes its own canvas."""
        config = RunConfig(preset="paper", canvas=16)
        assert config.resolved_canvas == 205
        assert config.network_config().canvas == 205

    def test_train_config(self):
        """Test training settings carry over with the seed."""
        train = RunConfig(seed=4, lr=0.1, epochs=3, augment_fold=2).train_config()
        assert (train.base_lr, train.max_epochs, train.augmentation_fold) == (0.1, 3, 2)
        assert train.master_seed == 4

    def test_split_spec_largest_draw(self):
        """Test train_per_class=0 means the largest balanced draw."""
        assert RunConfig().split_spec().train_per_class is None
        assert RunConfig(train_per_class=20).split_spec().train_per_class == 20


class TestConfigFile:
    """Tests for the key = value file format."""

    def test_unknown_key(self):
        """Test unknown keys report their line."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.conf"
            path.write_text("seed = 1\nlearning_rate = 0.1\n")
            with pytest.raises(ConfigError, match=":2: unknown setting"):
                load_config_file(path)

    def test_malformed_line(self):
        """Test lines without '=' are rejected."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.conf"
            path.write_text("epochs 5\n")
            with pytest.raises(ConfigError, match="key = value"):
                load_config_file(path)

    def test_bad_value_type(self):
        """Test values that do not parse as the field's type."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.conf"
            path.write_text("epochs = many\n")
            with pytest.raises(ConfigError, match="epochs expects int"):
                load_config_file(path)

    def test_missing_file(self):
        """Test an unreadable file."""
        with pytest.raises(ConfigError, match="Cannot read"):
            load_config_file("/nonexistent/run.conf")


class TestGlobalConfig:
    """Tests for the global config instance."""

    def test_set_and_reset(self):
        """Test set_config replaces and None resets."""
        custom = RunConfig(seed=11)
        set_config(custom)
        try:
            assert get_config() is custom
        finally:
            set_config(None)
        assert get_config() is not custom
