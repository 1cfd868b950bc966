import numpy as np
import pandas as pd
import pytest

from simfex.config import ColumnMapping
from simfex.exceptions import DataError
from simfex.report import read_report
from simfex.simfex import ingest, main
from simfex.simulate import GenConfig, generate, true_theta


@pytest.fixture
def generated_csv(tmp_path):
    """Linear-model sample at NSR 1 with two replicates and the analytic cutpoints."""
    config = GenConfig(nsr=1.0, n=3000, n_categories=5, seed=1)
    sample = generate(config, np.random.default_rng(123))
    frame = pd.DataFrame({"y": sample.y, "w1": sample.replicates[:, 0], "w2": sample.replicates[:, 1]})
    path = tmp_path / "generated.csv"
    frame.to_csv(path, index=False)
    theta, _ = true_theta(config)
    return path, config.scheme.cutpoints, theta


class TestIngest:
    def test_mapping(self, replicate_csv):
        mapping = ColumnMapping(response="y", covariate="w1", replicates=("w1", "w2"), covariates=("age",), group="sex")
        ingested = ingest(str(replicate_csv), mapping)
        assert ingested.dataset.n == 300
        assert ingested.dataset.z.shape == (300, 1)
        assert ingested.replicates.values.shape == (300, 2)
        assert ingested.replicate_groups.shape == (300,)
        assert ingested.n_dropped == 0 and ingested.rejected == ()

    def test_dropped_and_rejected_rows(self, tmp_path):
        rng = np.random.default_rng(0)
        frame = pd.DataFrame({"y": rng.normal(size=60), "w": rng.uniform(1.0, 5.0, 60)})
        frame.loc[5, "w"] = 0.0
        frame.loc[7, "y"] = np.nan
        path = tmp_path / "data.csv"
        frame.to_csv(path, index=False)
        ingested = ingest(str(path), ColumnMapping(response="y", covariate="w"))
        assert ingested.n_dropped == 1
        assert ingested.rejected == (5,)
        assert ingested.dataset.n == 58

    def test_semicolon_delimiter(self, tmp_path):
        rng = np.random.default_rng(1)
        frame = pd.DataFrame({"y": rng.normal(size=60), "w": rng.uniform(1.0, 5.0, 60)})
        path = tmp_path / "data.txt"
        frame.to_csv(path, index=False, sep=";")
        assert ingest(str(path), ColumnMapping(response="y", covariate="w")).dataset.n == 60

    def test_too_few_rows(self, tmp_path):
        path = tmp_path / "small.csv"
        pd.DataFrame({"y": np.ones(10), "w": np.arange(1.0, 11.0)}).to_csv(path, index=False)
        with pytest.raises(DataError):
            ingest(str(path), ColumnMapping(response="y", covariate="w"))


class TestMain:
    def test_misclass_without_error_is_identity(self, replicate_csv, tmp_path):
        out = tmp_path / "misclass.csv"
        code = main(["misclass", "--input", str(replicate_csv), "--covariate", "w1", "--replicates", "w1,w2", "--categories", "3", "--out", str(out)])
        assert code == 0
        frame, metadata = read_report(out)
        pi = frame[frame["section"] == "pi"]["value"].to_numpy().reshape(3, 3)
        np.testing.assert_array_equal(pi, np.eye(3))
        assert metadata["command"] == "misclass"
        assert len(metadata["config_hash"]) == 64

    def test_fit_and_bootstrap_agree(self, replicate_csv, tmp_path):
        common = ["--input", str(replicate_csv), "--response", "y", "--covariate", "w1", "--replicates", "w1,w2", "--categories", "3"]
        fit_out, boot_out = tmp_path / "fit.csv", tmp_path / "boot.csv"
        assert main(["fit", *common, "--methods", "naive,simfex", "--out", str(fit_out)]) == 0
        assert main(["bootstrap", *common, "--boot", "50", "--out", str(boot_out)]) == 0
        fitted, _ = read_report(fit_out)
        booted, metadata = read_report(boot_out)
        simfex = fitted[fitted["method"] == "simfex"].set_index("target")["estimate"]
        np.testing.assert_allclose(booted.set_index("target")["estimate"].loc[simfex.index], simfex, rtol=0, atol=1e-12)
        assert metadata["n_resamples"] == "50"

    def test_simfex_beats_naive_end_to_end(self, generated_csv, tmp_path):
        path, cutpoints, theta = generated_csv
        out = tmp_path / "fit.csv"
        args = ["fit", "--input", str(path), "--response", "y", "--covariate", "w1", "--replicates", "w1,w2"]
        args += ["--cutpoints", ",".join(str(c) for c in cutpoints), "--methods", "naive,simfex", "--out", str(out)]
        assert main(args) == 0
        frame, _ = read_report(out)
        rd = frame[frame["target"] == "theta_5-theta_1"].set_index("method")["estimate"]
        truth = theta[-1] - theta[0]
        assert abs(rd["simfex"] - truth) < abs(rd["naive"] - truth)
        assert rd["naive"] < truth

    def test_missing_column_exit_code(self, replicate_csv):
        code = main(["fit", "--input", str(replicate_csv), "--response", "y", "--covariate", "weight", "--replicates", "w1,w2", "--categories", "3"])
        assert code == 2

    def test_conflicting_category_options(self, replicate_csv):
        code = main(["fit", "--input", str(replicate_csv), "--response", "y", "--covariate", "w1", "--replicates", "w1,w2", "--categories", "3", "--cutpoints", "5,9"])
        assert code == 2

    def test_data_error_exit_code(self, tmp_path):
        path = tmp_path / "small.csv"
        pd.DataFrame({"y": np.ones(10), "w": np.arange(1.0, 11.0)}).to_csv(path, index=False)
        code = main(["fit", "--input", str(path), "--response", "y", "--covariate", "w", "--categories", "2", "--methods", "naive"])
        assert code == 3

    def test_study_needs_enough_repetitions(self):
        assert main(["simulate", "--reps", "10", "--quiet"]) == 2

    def test_covariate_adjusted_study_needs_sex(self):
        assert main(["simulate", "--reps", "50", "--methods", "simfex_z", "--quiet"]) == 2

    def test_no_command(self):
        with pytest.raises(SystemExit):
            main([])
