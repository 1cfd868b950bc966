__copyright__ = """

    Copyright 2024 The simfex authors

    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.

"""
__license__ = "Apache 2.0"
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from logzero import logger

from . import glm
from .estimator import EtaGrid, ExtrapolantKind, fit_extrapolant
from .exceptions import ConfigError, EmptyCategoryError, EstimationError
from .misclass import categorize
from .parallel import map_ordered, spawn_seeds
from .stochastic_matrix import StochasticMatrix, fractional_power


@dataclass(frozen=True)
class McsimexConfig:
    n_sim: int = 100
    grid: EtaGrid = field(default_factory=EtaGrid)
    kind: ExtrapolantKind = ExtrapolantKind.QUADRATIC
    seed: int = 0
    max_retries: int = 10

    def __post_init__(self):
        if int(self.n_sim) < 1:
            raise ConfigError(f"n_sim must be at least 1, got {self.n_sim}")
        if int(self.max_retries) < 0:
            raise ConfigError("max_retries must be non-negative")
        object.__setattr__(self, "kind", ExtrapolantKind(self.kind))
        self.grid.check(self.kind)


@dataclass(frozen=True, eq=False)
class McsimexResult:
    theta: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    pseudo_sequence: np.ndarray
    extrapolant: object
    theta_naive: np.ndarray
    n_redraws: int = 0

    @property
    def relative_difference(self):
        return float(self.theta[-1] - self.theta[0])

    @property
    def relative_difference_se(self):
        c = np.zeros(self.theta.size)
        c[-1], c[0] = 1.0, -1.0
        return float(np.sqrt(max(c @ self.cov @ c, 0.0)))


def misclassify(categories, pi_eta, rng):
    """
    Resample every category index from the row of pi_eta it indexes.

    Args:
        categories (array): 0-based category indices.
        pi_eta (StochasticMatrix): misclassification matrix.
        rng (numpy.random.Generator): random source.

    Returns:
        ndarray: new 0-based category indices.
    """
    categories = np.asarray(categories, dtype=int)
    entries = np.asarray(pi_eta)
    cumulative = np.cumsum(entries, axis=1)
    cumulative[:, -1] = 1.0
    u = rng.random(categories.size)
    drawn = (u[:, None] >= cumulative[categories]).sum(axis=1)
    return np.minimum(drawn, entries.shape[0] - 1)


def _simulate_one(task, y, categories, n_categories, link, z, matrices, max_retries):
    k, seed = task
    rng = np.random.default_rng(seed)
    theta_size = n_categories
    for attempt in range(max_retries + 1):
        pseudo = misclassify(categories, matrices[k], rng)
        try:
            result = glm.fit_categories(y, pseudo, n_categories, link, z)
        except EmptyCategoryError:
            continue
        return result.theta, result.cov[:theta_size, :theta_size], attempt
    raise EstimationError(f"Pseudo-dataset at eta index {k} kept an empty category after {max_retries} redraws")


def _jackknife_cov(thetas, covs):
    """Mean model covariance minus the between-simulation covariance."""
    within = covs.mean(axis=0)
    if thetas.shape[0] < 2:
        return within
    return within - np.atleast_2d(np.cov(thetas, rowvar=False, ddof=1))


def mcsimex_estimate(data, scheme, link, pi, config=None, parallelism=1):
    """
    MCSIMEX estimate of theta using simulated misclassification with Pi**eta.

    For each eta on the grid, config.n_sim pseudo-datasets are drawn by
    misclassifying the observed categories, the naive model is refit and the
    estimates are averaged before extrapolating to eta = -1. Variances follow
    the jackknife construction: per eta, the averaged model covariance minus
    the empirical covariance of the simulated estimates, extrapolated entrywise.

    Args:
        data (glm.Dataset): observed data.
        scheme (CategoryScheme): categories.
        link (glm.Link): link of the categorized model.
        pi (StochasticMatrix): estimated misclassification matrix.
        config (McsimexConfig, optional): simulation settings.
        parallelism (int): worker processes.

    Returns:
        McsimexResult
    """
    config = config or McsimexConfig()
    link = glm.Link(link)
    data.check_response(link)
    pi = pi if isinstance(pi, StochasticMatrix) else StochasticMatrix(pi)
    n_categories = scheme.n_categories
    if pi.size != n_categories:
        raise ConfigError(f"Pi has {pi.size} rows but the scheme has {n_categories} categories")
    categories = categorize(data.w, scheme)
    naive = glm.fit_categories(data.y, categories, n_categories, link, data.z)

    matrices = [fractional_power(pi, eta).matrix for eta in config.grid.values]
    n_eta, n_sim = len(config.grid), int(config.n_sim)
    seeds = spawn_seeds(config.seed, n_eta * n_sim)
    tasks = [(k, seeds[k * n_sim + b]) for k in range(n_eta) for b in range(n_sim)]
    worker = partial(
        _simulate_one,
        y=data.y,
        categories=categories,
        n_categories=n_categories,
        link=link,
        z=data.z,
        matrices=matrices,
        max_retries=int(config.max_retries),
    )
    outcomes = map_ordered(worker, tasks, parallelism)

    sequence = np.zeros((n_eta, n_categories))
    variance = np.zeros((n_eta, n_categories * n_categories))
    redraws = 0
    for k in range(n_eta):
        block = outcomes[k * n_sim : (k + 1) * n_sim]
        thetas = np.vstack([theta for theta, _, _ in block])
        covs = np.stack([cov for _, cov, _ in block])
        redraws += sum(attempt for _, _, attempt in block)
        sequence[k] = thetas.mean(axis=0)
        variance[k] = _jackknife_cov(thetas, covs).ravel()
    if redraws:
        logger.warning(f"Redrew {redraws} pseudo-datasets with an empty category")

    extrapolant = fit_extrapolant(config.grid, sequence, config.kind)
    cov = fit_extrapolant(config.grid, variance, config.kind).at_minus_one().reshape(n_categories, n_categories)
    cov = (cov + cov.T) / 2.0
    diagonal = np.diag(cov)
    if np.any(diagonal < 0):
        logger.warning("Extrapolated jackknife variance is negative for some components, flooring at zero")
    return McsimexResult(
        theta=extrapolant.at_minus_one(),
        se=np.sqrt(np.clip(diagonal, 0.0, None)),
        cov=cov,
        pseudo_sequence=sequence,
        extrapolant=extrapolant,
        theta_naive=naive.theta,
        n_redraws=redraws,
    )
