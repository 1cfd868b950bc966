import numpy as np
import pandas as pd
import pytest

from simfex.error_model import ErrorModelParams, ReplicateData
from simfex.glm import Dataset
from simfex.misclass import CategoryScheme
from simfex.simulate import noise_variance, true_scheme
from simfex.stochastic_matrix import StochasticMatrix


def draw_replicates(rng, n0, mu=10.0, sigma2_x=4.0, sigma2_u=2.0, r=2):
    """lam = 1 replicate data: W = X + U with X - 1 ~ N(mu, sigma2_x)."""
    values = np.empty((n0, r))
    todo = np.arange(n0)
    while todo.size:
        t = rng.normal(mu, np.sqrt(sigma2_x), todo.size)
        values[todo] = (t[:, None] + 1.0) + np.sqrt(sigma2_u) * rng.standard_normal((todo.size, r))
        todo = todo[np.any(values[todo] <= 0, axis=1)]
    return values


# transformed-scale (mu, sigma2) per lam, far enough inside the Box-Cox support that truncation is negligible
TRANSFORMED_MOMENTS = {0.0: (2.0, 0.16), 0.5: (4.0, 0.25), 1.0: (10.0, 4.0)}
ERROR_CELLS = [(lam, nsr, j) for lam in (0.0, 0.5, 1.0) for nsr in (0.2, 0.8, 1.0) for j in (3, 5)]


def error_cell(lam, nsr, n_categories):
    """Error model reaching the original-scale NSR, with cutpoints at the quantiles of X."""
    mu, sigma2 = TRANSFORMED_MOMENTS[lam]
    sigma2_u = noise_variance(lam, mu, sigma2, nsr, draws=200_000)
    return ErrorModelParams(lam, mu, sigma2, sigma2_u), true_scheme(lam, mu, sigma2, n_categories)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def normal_params():
    return ErrorModelParams(lam=1.0, mu_lambda_x=10.0, sigma2_lambda_x=4.0, sigma2_u=2.0)


@pytest.fixture
def tertiles():
    # tertiles of X = 1 + N(10, 4)
    return CategoryScheme((11.0 - 2.0 * 0.4307272992954576, 11.0 + 2.0 * 0.4307272992954576))


@pytest.fixture
def pi3():
    return StochasticMatrix(
        np.array(
            [
                [0.80, 0.15, 0.05],
                [0.15, 0.70, 0.15],
                [0.05, 0.15, 0.80],
            ]
        )
    )


@pytest.fixture
def linear_sample():
    """n = 400 linear data with lam = 1 replicates, sigma2_u = 2."""
    rng = np.random.default_rng(7)
    reps = draw_replicates(rng, 400)
    x_proxy = reps.mean(axis=1)
    y = 0.5 * x_proxy + rng.normal(0.0, 0.75, 400)
    return Dataset(y, reps[:, 0]), ReplicateData(reps)


@pytest.fixture
def replicate_csv(tmp_path):
    """CSV with y, w1, w2, age and sex columns and no measurement error between replicates."""
    rng = np.random.default_rng(11)
    n = 300
    x = np.exp(rng.normal(2.0, 0.4, n))
    frame = pd.DataFrame(
        {
            "y": 0.3 * x + rng.normal(0.0, 1.0, n),
            "w1": x,
            "w2": x,
            "age": rng.normal(35.0, 5.0, n),
            "sex": rng.integers(0, 2, n),
        }
    )
    path = tmp_path / "replicates.csv"
    frame.to_csv(path, index=False)
    return path
