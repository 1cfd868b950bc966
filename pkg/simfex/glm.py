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
from enum import Enum
from typing import NamedTuple

import numpy as np
import statsmodels.api as sm
from logzero import logger

from .exceptions import DataError, EmptyCategoryError, EstimationError
from .misclass import categorize

MAX_ITER = 100
MAX_HALVINGS = 20
TOL = 1e-8
SEPARATION_BOUND = 30.0


class Link(str, Enum):
    IDENTITY = "identity"
    LOGIT = "logit"
    PROBIT = "probit"

    @property
    def is_binary(self):
        return self is not Link.IDENTITY


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Observed data {Y, W, Z}.

    Args:
        y (array): response; 0/1 for binary links.
        w (array): contaminated covariate, strictly positive.
        z (array, optional): n x q precisely measured covariates.
        groups (array, optional): discrete covariate level of each row.
    """

    y: np.ndarray
    w: np.ndarray
    z: np.ndarray = None
    groups: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        w = np.asarray(self.w, dtype=float).ravel()
        if y.shape != w.shape:
            raise DataError(f"y and w must have equal length, got {y.size} and {w.size}")
        if np.any(~np.isfinite(y)) or np.any(~np.isfinite(w)):
            raise DataError("y and w must be finite")
        if np.any(w <= 0):
            raise DataError("The contaminated covariate must be strictly positive")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)
        if self.z is not None:
            z = np.asarray(self.z, dtype=float)
            z = z.reshape(-1, 1) if z.ndim == 1 else z
            if z.shape[0] != y.size or np.any(~np.isfinite(z)):
                raise DataError("z must be a finite matrix with one row per observation")
            object.__setattr__(self, "z", z)
        if self.groups is not None:
            groups = np.asarray(self.groups).ravel()
            if groups.size != y.size:
                raise DataError("groups must have one label per observation")
            object.__setattr__(self, "groups", groups)

    @property
    def n(self):
        return self.y.size

    def take(self, rows):
        rows = np.asarray(rows)
        return Dataset(
            y=self.y[rows],
            w=self.w[rows],
            z=None if self.z is None else self.z[rows],
            groups=None if self.groups is None else self.groups[rows],
        )

    def check_response(self, link):
        if Link(link).is_binary and not np.all(np.isin(self.y, (0.0, 1.0))):
            raise DataError(f"The {Link(link).value} link needs a 0/1 response")


@dataclass(frozen=True, eq=False)
class FitResult:
    """No-intercept fit of the categorized model."""

    theta: np.ndarray
    theta_z: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    converged: bool
    iterations: int
    link: Link
    separation: bool = False
    warnings: tuple = field(default=())

    @property
    def n_categories(self):
        return self.theta.size

    @property
    def se_theta(self):
        return self.se[: self.theta.size]

    @property
    def flagged(self):
        return self.separation or not self.converged

    @property
    def relative_difference(self):
        return float(self.theta[-1] - self.theta[0])

    def contrast_se(self, hi, lo):
        """Standard error of theta[hi] - theta[lo]."""
        c = np.zeros(self.cov.shape[0])
        c[hi], c[lo] = 1.0, -1.0
        return float(np.sqrt(max(c @ self.cov @ c, 0.0)))


def indicator_block(categories, n_categories):
    """One-hot indicator columns for 0-based category indices; empty categories are an error."""
    categories = np.asarray(categories, dtype=int)
    counts = np.bincount(categories, minlength=n_categories)
    if np.any(counts == 0):
        raise EmptyCategoryError(np.flatnonzero(counts == 0))
    block = np.zeros((categories.size, n_categories))
    block[np.arange(categories.size), categories] = 1.0
    return block


def build_design(w, scheme, z=None):
    """
    Design matrix [W^c, Z]: J indicator columns followed by the z columns, no intercept.

    Args:
        w (array): contaminated covariate.
        scheme (CategoryScheme): categories.
        z (array, optional): precisely measured covariates.

    Returns:
        ndarray: n x (J + q) design.
    """
    block = indicator_block(categorize(np.asarray(w, dtype=float), scheme), scheme.n_categories)
    if z is None:
        return block
    z = np.asarray(z, dtype=float)
    return np.column_stack([block, z.reshape(-1, 1) if z.ndim == 1 else z])


def family_for(link):
    """statsmodels family of the categorized model for link."""
    link = Link(link)
    if link is Link.IDENTITY:
        return sm.families.Gaussian()
    if link is Link.LOGIT:
        return sm.families.Binomial(link=sm.families.links.Logit())
    return sm.families.Binomial(link=sm.families.links.Probit())


class IrlsPath(NamedTuple):
    params: np.ndarray
    converged: bool
    iterations: int
    separation: bool
    deviance: tuple


def _irls(model, n_categories):
    """
    IRLS on model.family with step-halving.

    Each iteration solves the weighted least squares problem for the working
    response; when the new deviance exceeds the previous one the step towards
    it is halved up to MAX_HALVINGS times. Iteration stops once the parameters
    move by at most TOL, once every fitted mean reproduces the response, or once
    an indicator coefficient passes SEPARATION_BOUND.
    """
    family, y, design = model.family, model.endog, model.exog
    mu = family.starting_mu(y)
    eta = family.predict(mu)
    params, deviance, path = None, np.inf, []
    for iteration in range(1, MAX_ITER + 1):
        working = eta + family.link.deriv(mu) * (y - mu)
        proposal = np.asarray(sm.WLS(working, design, weights=family.weights(mu)).fit().params, dtype=float)
        step = proposal if params is None else proposal - params
        base = np.zeros_like(proposal) if params is None else params
        for _ in range(MAX_HALVINGS + 1):
            candidate = base + step
            eta_new = design @ candidate
            mu_new = family.fitted(eta_new)
            deviance_new = float(family.deviance(y, mu_new))
            if params is None or (np.isfinite(deviance_new) and deviance_new <= deviance * (1.0 + 1e-12)):
                break
            step = step / 2.0
        moved = np.inf if params is None else float(np.max(np.abs(candidate - params)))
        params, eta, mu, deviance = candidate, eta_new, mu_new, deviance_new
        path.append(deviance)
        if np.allclose(mu - y, 0.0) or np.any(np.abs(params[:n_categories]) > SEPARATION_BOUND):
            return IrlsPath(params, False, iteration, True, tuple(path))
        if moved <= TOL:
            return IrlsPath(params, True, iteration, False, tuple(path))
    return IrlsPath(params, False, MAX_ITER, False, tuple(path))


def fit_design(y, design, n_categories, link):
    """
    Fit g(E(Y)) = design @ beta where the first n_categories columns are indicators.

    Identity link uses ordinary least squares. Logit and probit use IRLS with
    step-halving on the binomial likelihood, and their covariance is the inverse
    observed information. Non-convergence and separation are flagged on the
    result rather than raised.
    """
    link = Link(link)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise EstimationError("Design matrix is not of full column rank")
    notes = []
    if link is Link.IDENTITY:
        result = sm.OLS(y, design).fit()
        params = np.asarray(result.params, dtype=float)
        cov = np.asarray(result.cov_params(), dtype=float)
        converged, iterations, separation = True, 1, False
    else:
        model = sm.GLM(y, design, family=family_for(link))
        path = _irls(model, n_categories)
        params, converged, iterations, separation = path.params, path.converged, path.iterations, path.separation
        constant = [j for j in range(n_categories) if np.ptp(y[design[:, j] == 1]) == 0]
        if constant:
            notes.append(f"constant response in categories {[j + 1 for j in constant]}")
            separation = True
        try:
            cov = np.linalg.inv(-model.hessian(params, scale=1.0, observed=True))
        except np.linalg.LinAlgError:
            notes.append("observed information is singular")
            cov = np.full((params.size, params.size), np.nan)
            separation = True
    if separation:
        notes.append("separation detected")
        logger.debug(f"{link.value} fit flagged for separation")
    elif not converged:
        notes.append(f"no convergence in {MAX_ITER} iterations")
        logger.debug(f"{link.value} fit did not converge in {MAX_ITER} iterations")
    return FitResult(
        theta=params[:n_categories],
        theta_z=params[n_categories:],
        se=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        cov=cov,
        converged=converged,
        iterations=iterations,
        link=link,
        separation=separation,
        warnings=tuple(notes),
    )


def fit(data, scheme, link):
    """
    Fit the naive categorized model g(E(Y | W, Z)) = theta_naive' W^c + theta_z' Z.

    Args:
        data (Dataset): observed data.
        scheme (CategoryScheme): categories.
        link (Link or str): identity, logit or probit.

    Returns:
        FitResult
    """
    link = Link(link)
    data.check_response(link)
    design = build_design(data.w, scheme, data.z)
    return fit_design(data.y, design, scheme.n_categories, link)


def fit_categories(y, categories, n_categories, link, z=None):
    """Fit the categorized model from category indices directly."""
    block = indicator_block(categories, n_categories)
    design = block if z is None else np.column_stack([block, z])
    return fit_design(y, design, n_categories, link)
