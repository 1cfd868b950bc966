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

import numpy as np
from logzero import logger
from scipy import optimize, special, stats

from .exceptions import DataError, DomainError, EstimationError

LAMBDA_BOUNDS = (-2.0, 2.0)
LAMBDA_GRID_STEP = 0.01
LAMBDA_TOL = 1e-5
SIGMA2_FLOOR = 1e-8
GRID_CHUNK_CELLS = 2_000_000


@dataclass(frozen=True)
class BoxCoxParam:
    """Box-Cox exponent together with its profile log-likelihood."""

    lam: float
    loglik: float = float("nan")


@dataclass(frozen=True)
class ErrorModelParams:
    """Transformed-scale description of the measurement-error mechanism.

    Lambda(W, lam) = Lambda(X, lam) + U with Lambda(X, lam) ~ N(mu_lambda_x, sigma2_lambda_x)
    and U ~ N(0, sigma2_u).
    """

    lam: float
    mu_lambda_x: float
    sigma2_lambda_x: float
    sigma2_u: float
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not self.sigma2_lambda_x > 0:
            raise DataError(f"sigma2_lambda_x must be positive, got {self.sigma2_lambda_x}")
        if self.sigma2_u < 0:
            raise DataError(f"sigma2_u must be non-negative, got {self.sigma2_u}")

    @property
    def sigma_lambda_x(self):
        return float(np.sqrt(self.sigma2_lambda_x))

    @property
    def sigma_u(self):
        return float(np.sqrt(self.sigma2_u))

    def support(self):
        """Interval of attainable values of Lambda(., lam) for positive arguments."""
        return box_cox_support(self.lam)


@dataclass(frozen=True, eq=False)
class ReplicateData:
    """Replicate measurements W_{i'r}: one row per subject, one column per replicate."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("Replicate data must be a two dimensional array (subjects x replicates)")
        n0, r = values.shape
        if r < 2:
            raise DataError(f"At least 2 replicates per subject are required, got R={r}")
        if n0 < 2:
            raise DataError(f"At least 2 subjects with replicates are required, got n0={n0}")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DomainError("Replicate measurements must be finite and strictly positive")
        object.__setattr__(self, "values", values)

    @property
    def n_subjects(self):
        return self.values.shape[0]

    @property
    def n_replicates(self):
        return self.values.shape[1]

    def take(self, rows):
        return ReplicateData(self.values[np.asarray(rows)])


def _check_positive(x):
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("Box-Cox transform is only defined for strictly positive values")
    return arr


def box_cox_transform(x, lam):
    """
    Box-Cox transform Lambda(x, lam).

    Args:
        x (float or array): strictly positive values.
        lam (float): transformation exponent.

    Returns:
        float or ndarray: (x**lam - 1)/lam, or log(x) when lam == 0.
    """
    arr = _check_positive(x)
    out = special.boxcox(arr, lam)
    return float(out) if np.ndim(out) == 0 else out


def inverse_box_cox(t, lam):
    """Inverse of box_cox_transform; values outside the transform's range map to nan."""
    out = special.inv_boxcox(np.asarray(t, dtype=float), lam)
    return float(out) if np.ndim(out) == 0 else out


def box_cox_support(lam):
    """Range of Lambda(x, lam) over x > 0 as a (lower, upper) pair."""
    if lam > 0:
        return -1.0 / lam, np.inf
    if lam < 0:
        return -np.inf, -1.0 / lam
    return -np.inf, np.inf


def _loglik_curve(w, lams):
    """Profile log-likelihood at every exponent in lams, broadcasting boxcox over (exponent, observation)."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    rows = max(1, GRID_CHUNK_CELLS // w.size)
    blocks = np.split(lams, np.arange(rows, lams.size, rows))
    spread = np.concatenate([special.boxcox(w[None, :], block[:, None]).var(axis=1) for block in blocks])
    with np.errstate(divide="ignore", invalid="ignore"):
        return -0.5 * w.size * np.log(spread) + (lams - 1.0) * np.log(w).sum()


def profile_loglik(w, lam):
    """
    Profile log-likelihood L_n(lam) of the Box-Cox normal model.

    Evaluated as -(n/2) log var(Lambda(w, lam)) + (lam - 1) sum(log w), which
    stays accurate for lam arbitrarily close to zero.
    """
    w = np.asarray(w, dtype=float).ravel()
    return float(_loglik_curve(w, lam)[0])


def fit_lambda(w):
    """
    Maximum likelihood estimate of the Box-Cox exponent.

    A coarse grid over [-2, 2] locates the optimum, which is then refined by a
    bounded golden-section search to within 1e-5.

    Args:
        w (array): strictly positive observations, at least 10 of them.

    Returns:
        BoxCoxParam: the maximiser and its log-likelihood.
    """
    w = _check_positive(w).ravel()
    if w.size < 10:
        raise DataError(f"At least 10 observations are needed to estimate lambda, got {w.size}")
    if np.ptp(np.log(w)) == 0:
        raise EstimationError("Cannot estimate lambda from constant observations")

    grid = np.round(np.arange(LAMBDA_BOUNDS[0], LAMBDA_BOUNDS[1] + LAMBDA_GRID_STEP / 2, LAMBDA_GRID_STEP), 10)
    llf = _loglik_curve(w, grid)
    if not np.any(np.isfinite(llf)):
        raise EstimationError("Box-Cox log-likelihood is not finite anywhere on the search grid")
    best = int(np.nanargmax(llf))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    refined = optimize.minimize_scalar(
        lambda lam: -profile_loglik(w, lam),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": LAMBDA_TOL},
    )
    lam_hat, ll_hat = float(grid[best]), float(llf[best])
    if refined.success and -refined.fun >= ll_hat:
        lam_hat, ll_hat = float(refined.x), float(-refined.fun)
    logger.debug(f"Box-Cox lambda estimate {lam_hat:.5f} (log-likelihood {ll_hat:.4f})")
    return BoxCoxParam(lam=lam_hat, loglik=ll_hat)


def replicate_moments(replicates, lam):
    """Per-subject replicate means and within-subject sample variances on the transformed scale."""
    transformed = box_cox_transform(replicates.values, lam)
    return transformed.mean(axis=1), transformed.var(axis=1, ddof=1)


def fit_error_params(primary_w, replicates, lam=None):
    """
    Method-of-moments estimates of (mu_lambda_x, sigma2_u, sigma2_lambda_x).

    sigma2_u is the mean within-subject sample variance and sigma2_lambda_x the sample
    variance (ddof=1) of the subject means less sigma2_u / R.

    Args:
        primary_w (array or None): primary observations used to estimate lam when lam is None.
            When None, the first replicate column is used instead.
        replicates (ReplicateData): replicate measurements.
        lam (float, optional): known Box-Cox exponent.

    Returns:
        ErrorModelParams: estimates with any floor warnings recorded.
    """
    if not isinstance(replicates, ReplicateData):
        replicates = ReplicateData(replicates)
    if lam is None:
        source = replicates.values[:, 0] if primary_w is None else primary_w
        lam = fit_lambda(source).lam
    means, within = replicate_moments(replicates, lam)
    r = replicates.n_replicates
    mu = float(means.mean())
    sigma2_u = float(within.mean())
    sigma2_x = float(means.var(ddof=1) - sigma2_u / r)
    notes = []
    if sigma2_x <= 0:
        message = f"Estimated sigma2_lambda_x = {sigma2_x:.3g} is not positive; floored at {SIGMA2_FLOOR}"
        logger.warning(message)
        notes.append(message)
        sigma2_x = SIGMA2_FLOOR
    logger.debug(
        f"Error model: lambda={lam:.4f} mu_lambda_x={mu:.4f} "
        f"sigma2_lambda_x={sigma2_x:.4f} sigma2_u={sigma2_u:.4f}"
    )
    return ErrorModelParams(
        lam=float(lam),
        mu_lambda_x=mu,
        sigma2_lambda_x=sigma2_x,
        sigma2_u=sigma2_u,
        warnings=tuple(notes),
    )


def estimating_equation_residuals(params, replicates):
    """Residuals of the three moment equations at params; all zero at an unfloored estimate."""
    means, within = replicate_moments(replicates, params.lam)
    r = replicates.n_replicates
    return np.array(
        [
            np.mean(means - params.mu_lambda_x),
            np.mean(within / r - params.sigma2_u / r),
            np.sum((means - params.mu_lambda_x) ** 2) / (means.size - 1) - params.sigma2_lambda_x - params.sigma2_u / r,
        ]
    )


def density_x(x, params):
    """Density of X implied by a normal Lambda(X, lam), including the Jacobian x**(lam - 1)."""
    x = _check_positive(x)
    z = (special.boxcox(x, params.lam) - params.mu_lambda_x) / params.sigma_lambda_x
    return stats.norm.pdf(z) * x ** (params.lam - 1) / params.sigma_lambda_x


def density_w_given_x(w, x, params):
    """Conditional density f(w | x) under additive normal error on the transformed scale."""
    w = _check_positive(w)
    x = _check_positive(x)
    if params.sigma2_u == 0:
        raise DataError("f(w | x) is degenerate when sigma2_u is zero")
    z = (special.boxcox(w, params.lam) - special.boxcox(x, params.lam)) / params.sigma_u
    return stats.norm.pdf(z) * w ** (params.lam - 1) / params.sigma_u


def normality_diagnostics(w, lam, replicates=None):
    """
    Skewness/kurtosis of W and Lambda(W, lam), plus a mean-zero check of replicate differences.

    Returns:
        dict: keys skewness_w, kurtosis_w, skewness_transformed, kurtosis_transformed and,
        with replicates, diff_mean, diff_t_pvalue.
    """
    w = _check_positive(w).ravel()
    t = special.boxcox(w, lam)
    out = {
        "skewness_w": float(stats.skew(w)),
        "kurtosis_w": float(stats.kurtosis(w, fisher=False)),
        "skewness_transformed": float(stats.skew(t)),
        "kurtosis_transformed": float(stats.kurtosis(t, fisher=False)),
    }
    if replicates is not None:
        transformed = box_cox_transform(replicates.values, lam)
        diff = transformed[:, 0] - transformed[:, 1]
        out["diff_mean"] = float(diff.mean())
        out["diff_t_pvalue"] = float(stats.ttest_1samp(diff, 0.0).pvalue)
    return out
