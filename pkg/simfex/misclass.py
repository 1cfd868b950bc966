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
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from logzero import logger
from scipy import integrate, stats

from .error_model import (
    ReplicateData,
    box_cox_support,
    box_cox_transform,
    fit_error_params,
    fit_lambda,
)
from .exceptions import DataError, DomainError, EstimationError
from .stochastic_matrix import StochasticMatrix

MIN_CATEGORY_PROB = 1e-6
QUAD_EPSABS = 1e-9
TAIL_SIGMAS = 10.0
SUPPORT_MASS_WARN = 1e-4
PROB_SUM_TOL = 1e-10


@dataclass(frozen=True)
class CategoryScheme:
    """
    Categories C_1 = (0, c_1), C_2 = [c_1, c_2), ..., C_J = [c_{J-1}, inf).

    Categories are numbered 0..J-1 in code.
    """

    cutpoints: tuple

    def __post_init__(self):
        cuts = tuple(float(c) for c in np.atleast_1d(self.cutpoints))
        if len(cuts) < 1:
            raise DataError("A category scheme needs at least one cutpoint (J >= 2)")
        if not all(np.isfinite(cuts)) or cuts[0] <= 0:
            raise DataError("Cutpoints must be finite and strictly positive")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise DataError(f"Cutpoints must be strictly increasing, got {cuts}")
        object.__setattr__(self, "cutpoints", cuts)

    @property
    def n_categories(self):
        return len(self.cutpoints) + 1

    def bounds(self, j):
        """(lower, upper) bounds of category j on the original scale."""
        edges = (0.0,) + self.cutpoints + (np.inf,)
        return edges[j], edges[j + 1]

    def transformed_edges(self, lam):
        """Category edges on the Box-Cox scale; the outer edges are -inf and inf."""
        inner = np.atleast_1d(box_cox_transform(np.array(self.cutpoints), lam))
        return np.concatenate(([-np.inf], inner, [np.inf]))

    def categorize(self, x):
        return categorize(x, self)


@dataclass(frozen=True, eq=False)
class CategoryProbs:
    """Category distribution p_j = P(X in C_j)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise DataError("Category probabilities must be a finite non-negative vector")
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
            raise DataError(f"Category probabilities must sum to 1, got {probs.sum()}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self):
        return self.probs.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


class PiP(NamedTuple):
    pi: StochasticMatrix
    p: CategoryProbs


@dataclass(frozen=True)
class GroupMisclass:
    """Per-level misclassification estimates and their deviation from the pooled estimate."""

    by_group: dict
    pooled: PiP
    pi_deviation: dict
    p_deviation: dict


def categorize(x, scheme):
    """
    Category index of x under the half-open convention [c_{j-1}, c_j).

    Args:
        x (float or array): strictly positive values.
        scheme (CategoryScheme): categories.

    Returns:
        int or ndarray: 0-based category indices.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("Only strictly positive values can be categorized")
    idx = np.searchsorted(np.asarray(scheme.cutpoints), arr, side="right")
    return int(idx) if idx.ndim == 0 else idx


def quantile_cutpoints(w, n_categories):
    """Cutpoints at the empirical j/J quantiles of the observations."""
    if n_categories < 2:
        raise DataError("At least two categories are needed")
    w = np.asarray(w, dtype=float)
    cuts = np.quantile(w, np.arange(1, n_categories) / n_categories)
    return CategoryScheme(tuple(cuts))


def cell_prob_w_given_x(x, j, params, scheme):
    """
    P(W in C_j | X = x) under the transformed-scale additive normal error.

    Returns the category indicator when sigma2_u is zero.
    """
    edges = scheme.transformed_edges(params.lam)
    if params.sigma2_u == 0:
        return float(categorize(x, scheme) == j)
    t = box_cox_transform(x, params.lam)
    return float(
        stats.norm.cdf((edges[j + 1] - t) / params.sigma_u) - stats.norm.cdf((edges[j] - t) / params.sigma_u)
    )


def _support_mass(params):
    lo, hi = box_cox_support(params.lam)
    dist = stats.norm(params.mu_lambda_x, params.sigma_lambda_x)
    return float(dist.cdf(lo) + dist.sf(hi))


def estimate_pi_p(params, scheme):
    """
    Misclassification matrix Pi and category probabilities p implied by an error model.

    The inner integral over w is a normal CDF difference, so each entry of Pi is
    a one dimensional integral over the transformed true value, evaluated by
    adaptive Gauss-Kronrod quadrature on each transformed category interval.

    Args:
        params (ErrorModelParams): error model.
        scheme (CategoryScheme): categories.

    Returns:
        PiP: (StochasticMatrix, CategoryProbs).
    """
    mu, sigma_x, sigma_u = params.mu_lambda_x, params.sigma_lambda_x, params.sigma_u
    edges = scheme.transformed_edges(params.lam)
    size = scheme.n_categories

    outside = _support_mass(params)
    if outside > SUPPORT_MASS_WARN:
        logger.warning(f"Normal model puts mass {outside:.3g} outside the Box-Cox support (lambda={params.lam:.3f})")

    z = (edges - mu) / sigma_x
    mass = np.diff(stats.norm.cdf(z))
    if np.any(mass < MIN_CATEGORY_PROB):
        empty = [j + 1 for j in np.flatnonzero(mass < MIN_CATEGORY_PROB)]
        raise EstimationError(f"Categories {empty} have probability below {MIN_CATEGORY_PROB}")
    p = CategoryProbs(mass / mass.sum())

    if params.sigma2_u == 0:
        return PiP(StochasticMatrix.identity(size), p)

    def integrand(t):
        observed = np.diff(stats.norm.cdf((edges - t) / sigma_u))
        return observed * stats.norm.pdf((t - mu) / sigma_x) / sigma_x

    rows = np.empty((size, size))
    for jp in range(size):
        a = max(edges[jp], mu - TAIL_SIGMAS * sigma_x)
        b = min(edges[jp + 1], mu + TAIL_SIGMAS * sigma_x)
        values, _ = integrate.quad_vec(integrand, a, b, epsabs=QUAD_EPSABS, quadrature="gk21")
        rows[jp] = values / mass[jp]
        logger.debug(f"Pi row {jp + 1}: sum before rescaling {rows[jp].sum():.12f}")
    return PiP(StochasticMatrix.from_rows(rows), p)


def fit_error_params_by_group(replicates, groups, lam=None, primary_w=None):
    """
    Error-model estimates within each level of a discrete covariate, sharing one lambda.

    Args:
        replicates (ReplicateData): replicate measurements.
        groups (array): level of each replicate subject.
        lam (float, optional): Box-Cox exponent; estimated from primary_w (or the
            first replicate column) when omitted.

    Returns:
        dict: level -> ErrorModelParams.
    """
    if not isinstance(replicates, ReplicateData):
        replicates = ReplicateData(replicates)
    groups = np.asarray(groups)
    if groups.shape[0] != replicates.n_subjects:
        raise DataError("One group label per replicate subject is required")
    if lam is None:
        source = replicates.values[:, 0] if primary_w is None else primary_w
        lam = fit_lambda(source).lam
    out = {}
    for level in sorted(np.unique(groups).tolist(), key=str):
        rows = np.flatnonzero(groups == level)
        if rows.size < 2:
            raise EstimationError(f"Group {level!r} has fewer than 2 subjects with replicates")
        out[level] = fit_error_params(None, replicates.take(rows), lam=lam)
    return out


def _mixture(estimates, weights):
    p = sum(w * np.asarray(e.p) for e, w in zip(estimates, weights))
    joint = sum(w * np.asarray(e.p)[:, None] * np.asarray(e.pi) for e, w in zip(estimates, weights))
    return PiP(StochasticMatrix.from_rows(joint / p[:, None]), CategoryProbs(p / p.sum()))


def estimate_pi_p_by_group(params_by_group, scheme, pooled=None, weights=None):
    """
    Apply estimate_pi_p within each level and compare with the pooled estimate.

    Args:
        params_by_group (dict): level -> ErrorModelParams.
        scheme (CategoryScheme): categories.
        pooled (ErrorModelParams, optional): pooled error model. When omitted the
            pooled (Pi, p) is the weighted mixture of the per-level estimates.
        weights (dict, optional): level -> weight for the mixture; equal by default.

    Returns:
        GroupMisclass
    """
    if not params_by_group:
        raise EstimationError("No groups supplied")
    missing = [level for level, params in params_by_group.items() if params is None]
    if missing:
        raise EstimationError(f"Groups without error-model parameters: {missing}")
    by_group = {level: estimate_pi_p(params, scheme) for level, params in params_by_group.items()}
    if pooled is not None:
        pooled_est = estimate_pi_p(pooled, scheme)
    else:
        levels = list(by_group)
        raw = np.array([1.0 if weights is None else float(weights[level]) for level in levels])
        pooled_est = _mixture([by_group[level] for level in levels], raw / raw.sum())
    pi_dev = {
        level: float(np.max(np.abs(np.asarray(est.pi) - np.asarray(pooled_est.pi)))) for level, est in by_group.items()
    }
    p_dev = {
        level: float(np.max(np.abs(np.asarray(est.p) - np.asarray(pooled_est.p)))) for level, est in by_group.items()
    }
    for level in by_group:
        logger.debug(f"Group {level}: |Pi(z) - Pi|_inf = {pi_dev[level]:.4f}, |p(z) - p|_inf = {p_dev[level]:.4f}")
    return GroupMisclass(by_group=by_group, pooled=pooled_est, pi_deviation=pi_dev, p_deviation=p_dev)
