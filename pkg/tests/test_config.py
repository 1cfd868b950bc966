import argparse
import json

import pytest

from simfex.config import ColumnMapping, RunConfig, config_hash, from_args, load_defaults, parse_list
from simfex.exceptions import ConfigError


def _namespace(**values):
    return argparse.Namespace(**values)


class TestParseList:
    def test_values(self):
        assert parse_list("0.5, 1,1.5") == (0.5, 1.0, 1.5)
        assert parse_list(None) == ()
        assert parse_list("w1,w2", str) == ("w1", "w2")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_list("0.5,x", float, "--eta-grid")


class TestRunConfig:
    def test_data_command_needs_one_category_option(self):
        columns = ColumnMapping(response="y", covariate="w", replicates=("w1", "w2"))
        with pytest.raises(ConfigError):
            RunConfig("fit", input="data.csv", columns=columns)
        with pytest.raises(ConfigError):
            RunConfig("fit", input="data.csv", columns=columns, categories=3, cutpoints=(1.0, 2.0))
        RunConfig("fit", input="data.csv", columns=columns, categories=3)

    def test_replicates_needed_for_correction(self):
        columns = ColumnMapping(response="y", covariate="w")
        with pytest.raises(ConfigError):
            RunConfig("fit", input="data.csv", columns=columns, categories=3)
        RunConfig("fit", input="data.csv", columns=columns, categories=3, methods=("naive",))

    def test_unknown_values(self):
        with pytest.raises(ConfigError):
            RunConfig("simulate", link="log")
        with pytest.raises(ConfigError):
            RunConfig("simulate", methods=("naive", "oracle"))
        with pytest.raises(ConfigError):
            RunConfig("explode")

    def test_covariate_adjusted_method_is_study_only(self):
        RunConfig("simulate", methods=("naive", "simfex_z"))
        columns = ColumnMapping(response="y", covariate="w", replicates=("w1", "w2"))
        with pytest.raises(ConfigError):
            RunConfig("fit", input="data.csv", columns=columns, categories=3, methods=("simfex_z",))

    def test_sweep_needs_nsr_values(self):
        with pytest.raises(ConfigError):
            RunConfig("sweep")


class TestConfigHash:
    def test_changes_with_results_relevant_fields(self):
        base = RunConfig("simulate", study={"nsr": 1.0})
        assert config_hash(base) == config_hash(RunConfig("simulate", study={"nsr": 1.0}))
        assert config_hash(base) != config_hash(RunConfig("simulate", study={"nsr": 0.5}))
        assert config_hash(base) != config_hash(RunConfig("simulate", study={"nsr": 1.0}, seed=1))

    def test_ignores_output_fields(self):
        base = RunConfig("simulate")
        other = RunConfig("simulate", out="x.csv", format="table", parallelism=4, verbosity="debug")
        assert config_hash(base) == config_hash(other)


class TestFromArgs:
    def test_study_layers(self, tmp_path):
        path = tmp_path / "study.json"
        path.write_text(json.dumps({"n": 300, "nsr": 0.2, "model": "probit"}))
        config = from_args(_namespace(command="simulate", config=str(path), nsr=0.5, categories=4, verbose=True))
        assert config.study["n"] == 300
        assert config.study["nsr"] == 0.5
        assert config.study["model"] == "probit"
        assert config.study["n_categories"] == 4
        assert config.study["noise_sd"] == load_defaults()["generation"]["noise_sd"]
        assert config.verbosity == "debug"
        assert config.eta_grid == (0.5, 1.0, 1.5, 2.0)

    def test_covariate_flags(self):
        config = from_args(_namespace(command="simulate", config=None, z_covariate="sex", z_shift=1.5))
        assert config.study["covariate"] == "sex"
        assert config.study["z_shift"] == 1.5
        assert config.study["sex_prob"] == 0.5

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            from_args(_namespace(command="simulate", config=str(tmp_path / "missing.json")))

    def test_defaults_are_copies(self):
        first = load_defaults()
        first["generation"]["n"] = -1
        assert load_defaults()["generation"]["n"] != -1
