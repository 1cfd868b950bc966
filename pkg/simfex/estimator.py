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
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import partial

import numpy as np
from logzero import logger
from scipy import stats

from . import glm
from .error_model import fit_error_params
from .exceptions import ConfigError, DataError, EstimationError, SimfexError
from .misclass import estimate_pi_p
from .parallel import map_ordered, spawn_seeds
from .stochastic_matrix import fractional_power, naive_map_matrix

Z_95 = 1.96
MIN_RESAMPLES = 50
MAX_DISCARD_FRACTION = 0.2


class ExtrapolantKind(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"

    @property
    def degree(self):
        return 1 if self is ExtrapolantKind.LINEAR else 2


@dataclass(frozen=True)
class EtaGrid:
    """Strictly increasing, non-negative grid of misclassification powers."""

    values: tuple = (0.5, 1.0, 1.5, 2.0)

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if len(values) < 2:
            raise ConfigError("The eta grid needs at least two values")
        if any(v < 0 or not np.isfinite(v) for v in values):
            raise ConfigError(f"Eta values must be finite and non-negative, got {values}")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError(f"Eta values must be strictly increasing, got {values}")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def check(self, kind):
        kind = ExtrapolantKind(kind)
        if len(self.values) < kind.degree + 1:
            raise ConfigError(f"A {kind.value} extrapolant needs at least {kind.degree + 1} eta values")


@dataclass(frozen=True, eq=False)
class Extrapolant:
    """Per-component polynomial in eta; gamma[j] holds (intercept, slope[, curvature])."""

    kind: ExtrapolantKind
    gamma: np.ndarray

    def evaluate(self, eta):
        powers = np.power(float(eta), np.arange(self.gamma.shape[1]))
        return self.gamma @ powers

    def at_minus_one(self):
        return self.evaluate(-1.0)


@dataclass(frozen=True, eq=False)
class BootstrapSummary:
    theta_simfex: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    relative_difference: float
    relative_difference_se: float
    relative_difference_ci: tuple
    p_value: float
    n_resamples: int
    n_discarded: int
    reestimated: bool
    ci_method: str
    estimates: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class SimfexResult:
    theta_simfex: np.ndarray
    relative_difference: float
    pseudo_sequence: np.ndarray
    extrapolant: Extrapolant
    theta_naive: np.ndarray
    grid: EtaGrid
    clip_mass: float = 0.0
    naive: object = None
    bootstrap: BootstrapSummary = None


@dataclass(frozen=True, eq=False)
class ContrastResult:
    """SIMFEX estimates of theta_j - theta_1 for j = 2..J."""

    theta_tilde_simfex: np.ndarray
    theta_tilde_naive: np.ndarray
    pseudo_sequence: np.ndarray
    extrapolant: Extrapolant
    weights: dict


def naive_map(pi, p, theta):
    """f(Pi, p, theta) = A(Pi, p) theta."""
    return naive_map_matrix(pi, p) @ np.asarray(theta, dtype=float)


def contrast_map_matrix(pi, p):
    """Matrix of the contrast map: (theta_j - theta_1)_naive = sum_{j'>=2} (A[j, j'] - A[1, j']) (theta_j' - theta_1)."""
    a = naive_map_matrix(pi, p)
    return a[1:, 1:] - a[0, 1:][None, :]


def contrast_map(pi, p, theta_tilde):
    return contrast_map_matrix(pi, p) @ np.asarray(theta_tilde, dtype=float)


def _powers(pi, grid):
    results = [fractional_power(pi, eta) for eta in grid.values]
    return [r.matrix for r in results], max(r.clip_mass for r in results)


def pseudo_sequence(pi, p, theta_naive, grid):
    """
    Pseudo-estimates f(Pi**eta_k, p, theta_naive) for every eta_k on the grid.

    Returns:
        ndarray: K x J matrix, row k for eta_k.
    """
    matrices, _ = _powers(pi, grid)
    theta_naive = np.asarray(theta_naive, dtype=float)
    return np.vstack([naive_map(m, p, theta_naive) for m in matrices])


def fit_extrapolant(grid, sequence, kind=ExtrapolantKind.QUADRATIC):
    """
    Least squares polynomial fit of each column of sequence against eta.

    Args:
        grid (EtaGrid or array): eta values.
        sequence (array): K x J pseudo-estimates.
        kind (ExtrapolantKind): linear or quadratic.

    Returns:
        Extrapolant
    """
    kind = ExtrapolantKind(kind)
    eta = np.asarray(grid.values if isinstance(grid, EtaGrid) else grid, dtype=float)
    sequence = np.asarray(sequence, dtype=float)
    sequence = sequence.reshape(-1, 1) if sequence.ndim == 1 else sequence
    vander = np.vander(eta, kind.degree + 1, increasing=True)
    if np.linalg.matrix_rank(vander) < kind.degree + 1:
        raise EstimationError(f"The eta grid {eta.tolist()} cannot identify a {kind.value} extrapolant")
    gamma, *_ = np.linalg.lstsq(vander, sequence, rcond=None)
    return Extrapolant(kind=kind, gamma=gamma.T)


def simfex_from_naive(theta_naive, pi, p, grid=None, kind=ExtrapolantKind.QUADRATIC):
    """Simulation-free pseudo-estimates and extrapolation to eta = -1 from a naive estimate."""
    grid = grid or EtaGrid()
    grid.check(kind)
    theta_naive = np.asarray(theta_naive, dtype=float)
    matrices, clip_mass = _powers(pi, grid)
    sequence = np.vstack([naive_map(m, p, theta_naive) for m in matrices])
    extrapolant = fit_extrapolant(grid, sequence, kind)
    theta = extrapolant.at_minus_one()
    return SimfexResult(
        theta_simfex=theta,
        relative_difference=float(theta[-1] - theta[0]),
        pseudo_sequence=sequence,
        extrapolant=extrapolant,
        theta_naive=theta_naive,
        grid=grid,
        clip_mass=clip_mass,
    )


def simfex_estimate(data, scheme, link, pi, p, grid=None, kind=ExtrapolantKind.QUADRATIC):
    """
    SIMFEX estimate of theta from observed data and a misclassification model.

    Args:
        data (glm.Dataset): observed data.
        scheme (CategoryScheme): categories.
        link (glm.Link): link of the categorized model.
        pi (StochasticMatrix): misclassification matrix.
        p (CategoryProbs): category probabilities.
        grid (EtaGrid, optional): eta grid, 0.5, 1, 1.5, 2 by default.
        kind (ExtrapolantKind): extrapolant, quadratic by default.

    Returns:
        SimfexResult
    """
    naive = glm.fit(data, scheme, link)
    result = simfex_from_naive(naive.theta, pi, p, grid, kind)
    logger.debug(f"SIMFEX relative difference {result.relative_difference:.4f} (naive {naive.relative_difference:.4f})")
    return replace(result, naive=naive)


def _level_weights(data, levels):
    if data.groups is None:
        if len(levels) != 1:
            raise DataError("Group labels are required when more than one level is modelled")
        return {levels[0]: 1.0}
    labels, counts = np.unique(data.groups, return_counts=True)
    observed = dict(zip(labels.tolist(), counts.tolist()))
    unknown = [level for level in observed if level not in levels]
    if unknown:
        raise EstimationError(f"No misclassification model for group levels {unknown}")
    total = float(sum(observed.values()))
    return {level: observed.get(level, 0) / total for level in levels}


def simfex_contrast_estimate(data, scheme, link, group_models, grid=None, kind=ExtrapolantKind.QUADRATIC):
    """
    SIMFEX estimates of theta_j - theta_1 when the misclassification model depends on a discrete Z.

    The per-level pseudo-sequences of the contrast map are averaged with the
    level frequencies of data.groups before extrapolation.

    Args:
        group_models (dict): level -> (StochasticMatrix, CategoryProbs).

    Returns:
        ContrastResult
    """
    if not group_models:
        raise EstimationError("No group misclassification models supplied")
    grid = grid or EtaGrid()
    grid.check(kind)
    levels = list(group_models)
    weights = _level_weights(data, levels)
    naive = glm.fit(data, scheme, link)
    theta_tilde = naive.theta[1:] - naive.theta[0]
    sequence = np.zeros((len(grid), theta_tilde.size))
    for level in levels:
        if weights[level] == 0:
            continue
        pi, p = group_models[level]
        matrices, _ = _powers(pi, grid)
        sequence += weights[level] * np.vstack([contrast_map(m, p, theta_tilde) for m in matrices])
    extrapolant = fit_extrapolant(grid, sequence, kind)
    return ContrastResult(
        theta_tilde_simfex=extrapolant.at_minus_one(),
        theta_tilde_naive=theta_tilde,
        pseudo_sequence=sequence,
        extrapolant=extrapolant,
        weights=weights,
    )


def wald_p_value(estimate, se):
    """Two-sided normal-approximation p-value for H0: parameter = 0."""
    if not se > 0:
        return float("nan")
    return float(2.0 * stats.norm.sf(abs(estimate) / se))


def _one_resample(seed, data, replicates, scheme, link, grid, kind, lam, fixed):
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, data.n, size=data.n)
    subjects = rng.integers(0, replicates.n_subjects, size=replicates.n_subjects)
    sample = data.take(rows)
    try:
        if fixed is None:
            params = fit_error_params(sample.w, replicates.take(subjects), lam=lam)
            pi, p = estimate_pi_p(params, scheme)
        else:
            pi, p = fixed
        naive = glm.fit(sample, scheme, link)
        if naive.flagged:
            return None, "flagged naive fit"
        return simfex_from_naive(naive.theta, pi, p, grid, kind).theta_simfex, None
    except SimfexError as error:
        return None, str(error)


def bootstrap_inference(
    data,
    replicates,
    scheme,
    link,
    grid=None,
    kind=ExtrapolantKind.QUADRATIC,
    n_resamples=500,
    seed=0,
    reestimate_pi=True,
    lam=None,
    ci_method="normal",
    parallelism=1,
):
    """
    Bootstrap standard errors and 95% confidence intervals for SIMFEX.

    Each resample draws primary rows and replicate subjects with replacement,
    re-estimates (Pi, p) unless reestimate_pi is False, refits the naive model
    and reruns the extrapolation. Resamples with flagged or failed fits are
    discarded and counted.

    Returns:
        BootstrapSummary
    """
    if n_resamples < MIN_RESAMPLES:
        raise ConfigError(f"At least {MIN_RESAMPLES} bootstrap resamples are required, got {n_resamples}")
    if ci_method not in ("normal", "percentile"):
        raise ConfigError(f"Unknown confidence interval method {ci_method!r}")
    grid = grid or EtaGrid()
    grid.check(kind)
    params = fit_error_params(data.w, replicates, lam=lam)
    pi, p = estimate_pi_p(params, scheme)
    point = simfex_estimate(data, scheme, link, pi, p, grid, kind)

    worker = partial(
        _one_resample,
        data=data,
        replicates=replicates,
        scheme=scheme,
        link=glm.Link(link),
        grid=grid,
        kind=ExtrapolantKind(kind),
        lam=params.lam if lam is None and not reestimate_pi else lam,
        fixed=None if reestimate_pi else (pi, p),
    )
    outcomes = map_ordered(worker, spawn_seeds(seed, n_resamples), parallelism)
    kept = [theta for theta, _ in outcomes if theta is not None]
    discarded = n_resamples - len(kept)
    for _, reason in outcomes:
        if reason is not None:
            logger.debug(f"Discarded bootstrap resample: {reason}")
    if discarded > MAX_DISCARD_FRACTION * n_resamples:
        raise EstimationError(f"{discarded} of {n_resamples} bootstrap resamples were discarded")
    if discarded:
        logger.warning(f"Discarded {discarded} of {n_resamples} bootstrap resamples")

    estimates = np.vstack(kept)
    se = estimates.std(axis=0, ddof=1)
    differences = estimates[:, -1] - estimates[:, 0]
    rd_se = float(differences.std(ddof=1))
    rd = point.relative_difference
    if ci_method == "normal":
        lower, upper = point.theta_simfex - Z_95 * se, point.theta_simfex + Z_95 * se
        rd_ci = (rd - Z_95 * rd_se, rd + Z_95 * rd_se)
    else:
        lower, upper = np.percentile(estimates, [2.5, 97.5], axis=0)
        rd_ci = tuple(float(v) for v in np.percentile(differences, [2.5, 97.5]))
    return BootstrapSummary(
        theta_simfex=point.theta_simfex,
        se=se,
        ci_lower=lower,
        ci_upper=upper,
        relative_difference=rd,
        relative_difference_se=rd_se,
        relative_difference_ci=(float(rd_ci[0]), float(rd_ci[1])),
        p_value=wald_p_value(rd, rd_se),
        n_resamples=n_resamples,
        n_discarded=discarded,
        reestimated=bool(reestimate_pi),
        ci_method=ci_method,
        estimates=estimates,
    )
