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
import time
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from functools import lru_cache, partial
from typing import NamedTuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from logzero import logger
from scipy import integrate, optimize, special, stats

from . import glm
from .config import load_defaults
from .error_model import ErrorModelParams, ReplicateData, box_cox_support, fit_error_params, inverse_box_cox
from .estimator import Z_95, EtaGrid, ExtrapolantKind, bootstrap_inference, simfex_contrast_estimate, simfex_estimate
from .exceptions import ConfigError, EstimationError, SimfexError
from .mcsimex import McsimexConfig, mcsimex_estimate
from .misclass import CategoryScheme, estimate_pi_p, estimate_pi_p_by_group, fit_error_params_by_group
from .parallel import map_ordered, spawn_seeds

MIN_REPS = 50
MAX_REJECTION = 0.01
SETTING_LAMBDA = {"normal": 1.0, "right_skewed": 0.26, "heavy_tailed": 0.95}
COVARIATE_BETA = {"none": 0.0, "age": 0.02, "sex": 0.5}


class Setting(str, Enum):
    NORMAL = "normal"
    RIGHT_SKEWED = "right_skewed"
    HEAVY_TAILED = "heavy_tailed"

    @property
    def lam(self):
        return SETTING_LAMBDA[self.value]


class ResponseModel(str, Enum):
    LOGISTIC = "logistic"
    LINEAR = "linear"
    PROBIT = "probit"

    @property
    def link(self):
        return {
            ResponseModel.LOGISTIC: glm.Link.LOGIT,
            ResponseModel.LINEAR: glm.Link.IDENTITY,
            ResponseModel.PROBIT: glm.Link.PROBIT,
        }[self]

    def mean(self, eta):
        if self is ResponseModel.LINEAR:
            return eta
        if self is ResponseModel.LOGISTIC:
            return special.expit(eta)
        return stats.norm.cdf(eta)

    def link_value(self, mu):
        if self is ResponseModel.LINEAR:
            return mu
        if self is ResponseModel.LOGISTIC:
            return special.logit(mu)
        return stats.norm.ppf(mu)

    def link_slope(self, mu):
        if self is ResponseModel.LINEAR:
            return np.ones_like(mu)
        if self is ResponseModel.LOGISTIC:
            return 1.0 / (mu * (1.0 - mu))
        return 1.0 / stats.norm.pdf(stats.norm.ppf(mu))


class Method(str, Enum):
    NAIVE = "naive"
    MCSIMEX = "mcsimex"
    SIMFEX = "simfex"

    SIMFEX_Z = "simfex_z"

    @property
    def label(self):
        return {"naive": "Naive", "mcsimex": "MCSIMEX*", "simfex": "SIMFEX", "simfex_z": "SIMFEX(Z)"}[self.value]


@dataclass(frozen=True)
class GenConfig:
    """
    Generating model of a simulation study.

    Lambda(X, lam) ~ N(mu_lambda_x, sigma2_lambda_x) truncated to the Box-Cox
    support, Lambda(W, lam) = Lambda(X, lam) + U with U ~ N(0, sigma2_u) and
    sigma2_u chosen so that (var(W) - var(X)) / var(X) = nsr on the original
    scale. Unset mu_lambda_x / sigma2_lambda_x come from the shipped setting
    defaults; unset beta0 / beta1 are derived so that theta_J - theta_1 is close
    to target_relative_difference.

    covariate adds a precisely measured Z to the linear predictor: "age" draws
    N(age_mean, age_var) for the linear model, "sex" draws Bernoulli(sex_prob).
    A non-zero z_shift makes X depend on sex: the transformed mean is moved by
    z_shift between the two levels while the overall mean stays at mu_lambda_x.
    beta_z defaults to 0.02 for age and 0.5 for sex.
    """

    setting: Setting = Setting.NORMAL
    model: ResponseModel = ResponseModel.LINEAR
    nsr: float = 1.0
    n: int = 1000
    n_categories: int = 5
    mu_lambda_x: float = None
    sigma2_lambda_x: float = None
    beta0: float = None
    beta1: float = None
    noise_sd: float = 0.75
    n_replicates: int = 2
    covariate: str = "none"
    beta_z: float = None
    age_mean: float = 35.0
    age_var: float = 25.0
    sex_prob: float = 0.5
    z_shift: float = 0.0
    target_relative_difference: float = 1.0
    oracle_draws: int = None
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "setting", Setting(self.setting))
            object.__setattr__(self, "model", ResponseModel(self.model))
        except ValueError as error:
            raise ConfigError(str(error))
        defaults = load_defaults()
        setting = defaults["settings"][self.setting.value]
        if self.mu_lambda_x is None:
            object.__setattr__(self, "mu_lambda_x", float(setting["mu_lambda_x"]))
        if self.sigma2_lambda_x is None:
            object.__setattr__(self, "sigma2_lambda_x", float(setting["sigma2_lambda_x"]))
        if self.oracle_draws is None:
            object.__setattr__(self, "oracle_draws", int(defaults["oracle"]["draws"]))
        if self.nsr < 0:
            raise ConfigError(f"nsr must be non-negative, got {self.nsr}")
        if self.sigma2_lambda_x <= 0:
            raise ConfigError("sigma2_lambda_x must be positive")
        if self.n < 10 or self.n_categories < 2 or self.n_replicates < 2:
            raise ConfigError("Need n >= 10, at least 2 categories and at least 2 replicates")
        if self.covariate not in COVARIATE_BETA:
            raise ConfigError(f"Unknown covariate {self.covariate!r}; choose from {', '.join(COVARIATE_BETA)}")
        if self.covariate == "age" and self.model is not ResponseModel.LINEAR:
            raise ConfigError("The age covariate is only available for the linear model")
        if not 0 < self.sex_prob < 1:
            raise ConfigError(f"sex_prob must lie in (0, 1), got {self.sex_prob}")
        if self.z_shift != 0 and self.covariate != "sex":
            raise ConfigError("z_shift correlates X with the sex covariate; set covariate to sex")
        if self.beta_z is None:
            object.__setattr__(self, "beta_z", COVARIATE_BETA[self.covariate])
        if self.beta0 is None or self.beta1 is None:
            beta0, beta1 = derive_betas(self.lam, self.mu_lambda_x, self.sigma2_lambda_x, self.n_categories, self.target_relative_difference)
            object.__setattr__(self, "beta0", beta0 if self.beta0 is None else float(self.beta0))
            object.__setattr__(self, "beta1", beta1 if self.beta1 is None else float(self.beta1))

    @classmethod
    def from_mapping(cls, values):
        """GenConfig from the shipped generation defaults overlaid with values."""
        merged = {**load_defaults()["generation"], **values}
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigError(f"Unknown generation settings: {', '.join(unknown)}")
        return cls(**merged)

    @property
    def lam(self):
        return self.setting.lam

    @property
    def link(self):
        return self.model.link

    @property
    def sigma2_u(self):
        return noise_variance(self.lam, self.mu_lambda_x, self.sigma2_lambda_x, self.nsr)

    @property
    def level_means(self):
        """Transformed-scale mean of X at sex = 0 and sex = 1."""
        low = self.mu_lambda_x - self.sex_prob * self.z_shift
        return low, low + self.z_shift

    @property
    def scheme(self):
        return true_scheme(self.lam, self.mu_lambda_x, self.sigma2_lambda_x, self.n_categories, self.z_shift, self.sex_prob)

    def error_params(self):
        """The generating error model on the transformed scale."""
        return ErrorModelParams(self.lam, self.mu_lambda_x, self.sigma2_lambda_x, self.sigma2_u)

    def level_params(self):
        """Generating error model within each sex level."""
        return {
            level: ErrorModelParams(self.lam, mean, self.sigma2_lambda_x, self.sigma2_u)
            for level, mean in enumerate(self.level_means)
        }

    def true_misclass(self):
        """(Pi, p) of the generating model; a sex-weighted mixture when X depends on sex."""
        if self.z_shift == 0:
            return estimate_pi_p(self.error_params(), self.scheme)
        weights = {0: 1.0 - self.sex_prob, 1: self.sex_prob}
        return estimate_pi_p_by_group(self.level_params(), self.scheme, weights=weights).pooled


class Sample(NamedTuple):
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    true_theta: np.ndarray
    replicates: np.ndarray
    z: np.ndarray
    scheme: CategoryScheme
    rejection_rate: float


@lru_cache(maxsize=None)
def true_scheme(lam, mu, sigma2, n_categories, shift=0.0, prob=0.5):
    """
    Cutpoints at the quantiles of X.

    With shift == 0 these are analytic normal quantiles on the transformed scale.
    Otherwise Lambda(X, lam) is the two-component mixture of the sex levels and
    its quantiles are found by root finding.
    """
    probs = np.arange(1, n_categories) / n_categories
    sigma = np.sqrt(sigma2)
    if shift == 0:
        t = mu + sigma * stats.norm.ppf(probs)
    else:
        means = np.array([mu - prob * shift, mu + (1.0 - prob) * shift])
        weights = np.array([1.0 - prob, prob])
        lo, hi = means.min() - 12 * sigma, means.max() + 12 * sigma

        def excess(t, q):
            return float(weights @ stats.norm.cdf((t - means) / sigma)) - q

        t = np.array([optimize.brentq(excess, lo, hi, args=(q,), xtol=1e-12) for q in probs])
    return CategoryScheme(tuple(np.atleast_1d(inverse_box_cox(t, lam))))


def _transformed_bounds(lam, mu, sigma):
    lo, hi = box_cox_support(lam)
    return max(lo, mu - 12 * sigma), min(hi, mu + 12 * sigma)


def conditional_means(lam, mu, sigma2, n_categories):
    """
    E(X) and E(X | X in C_j) for the truncated Box-Cox normal X and analytic quantile categories.

    Returns:
        tuple: (overall mean, ndarray of J conditional means).
    """
    sigma = np.sqrt(sigma2)
    lo, hi = _transformed_bounds(lam, mu, sigma)
    edges = np.concatenate(([lo], mu + sigma * stats.norm.ppf(np.arange(1, n_categories) / n_categories), [hi]))
    edges = np.clip(edges, lo, hi)

    def moment(a, b, power):
        value, _ = integrate.quad(lambda t: inverse_box_cox(t, lam) ** power * stats.norm.pdf(t, mu, sigma), a, b, limit=200)
        return value

    masses = np.array([moment(a, b, 0) for a, b in zip(edges[:-1], edges[1:])])
    firsts = np.array([moment(a, b, 1) for a, b in zip(edges[:-1], edges[1:])])
    return float(firsts.sum() / masses.sum()), firsts / masses


@lru_cache(maxsize=None)
def derive_betas(lam, mu, sigma2, n_categories, target):
    """Slope and intercept giving theta_J - theta_1 close to target with a centred linear predictor."""
    overall, means = conditional_means(lam, mu, sigma2, n_categories)
    beta1 = float(target / (means[-1] - means[0]))
    return float(-beta1 * overall), beta1


def _inside(values, lam):
    lo, hi = box_cox_support(lam)
    return (values > lo) & (values < hi)


@lru_cache(maxsize=None)
def noise_variance(lam, mu, sigma2, nsr, draws=None, seed=None, rtol=None):
    """
    Transformed-scale error variance sigma2_u giving the original-scale noise-to-signal ratio nsr.

    For lam == 1 the transform is a shift and sigma2_u = nsr * sigma2. Otherwise
    sigma2_u is found by bisection on a common-random-number estimate of
    var(W) / var(X) - 1.
    """
    if nsr == 0:
        return 0.0
    if lam == 1:
        return float(nsr * sigma2)
    solver = load_defaults()["nsr_solver"]
    draws = int(draws or solver["draws"])
    rng = np.random.default_rng(solver["seed"] if seed is None else seed)
    t = mu + np.sqrt(sigma2) * rng.standard_normal(draws)
    e = rng.standard_normal(draws)
    t = t[_inside(t, lam)]
    e = e[: t.size]
    var_x = np.var(inverse_box_cox(t, lam))

    def excess(s2):
        wt = t + np.sqrt(s2) * e
        ok = _inside(wt, lam)
        return np.var(inverse_box_cox(wt[ok], lam)) / var_x - 1.0 - nsr

    hi = nsr * sigma2
    while excess(hi) < 0:
        hi *= 2.0
        if hi > 1e6 * sigma2:
            raise ConfigError(f"Could not reach NSR {nsr} for lambda={lam}")
    s2 = optimize.bisect(excess, 0.0, hi, rtol=float(rtol or solver["rtol"]), xtol=1e-12 * sigma2)
    logger.debug(f"sigma2_u={s2:.5f} gives NSR {nsr} at lambda={lam}")
    return float(s2)


@lru_cache(maxsize=32)
def _oracle(lam, mu, sigma2, cutpoints, model, beta0, beta1, draws, chunk, seed, sex=None):
    model = ResponseModel(model)
    scheme = CategoryScheme(cutpoints)
    size = scheme.n_categories
    totals, squares, counts = np.zeros(size), np.zeros(size), np.zeros(size)
    cell_totals, cell_counts = np.zeros(2 * size), np.zeros(2 * size)
    rng = np.random.default_rng(seed)
    remaining = draws
    while remaining > 0:
        m = min(chunk, remaining)
        if sex is None:
            z = np.zeros(m)
            t = rng.normal(mu, np.sqrt(sigma2), m)
        else:
            prob, shift, beta_z = sex
            z = (rng.random(m) < prob).astype(float)
            t = rng.normal(mu - prob * shift + shift * z, np.sqrt(sigma2))
        inside = _inside(t, lam)
        t, z = t[inside], z[inside]
        x = inverse_box_cox(t, lam)
        eta = beta0 + beta1 * x
        if sex is not None:
            eta = eta + beta_z * z
        values = model.mean(eta)
        cats = scheme.categorize(x)
        totals += np.bincount(cats, weights=values, minlength=size)
        squares += np.bincount(cats, weights=values**2, minlength=size)
        counts += np.bincount(cats, minlength=size)
        cells = cats + size * z.astype(int)
        cell_totals += np.bincount(cells, weights=values, minlength=2 * size)
        cell_counts += np.bincount(cells, minlength=2 * size)
        remaining -= m
    means = totals / counts
    se_means = np.sqrt(np.maximum(squares / counts - means**2, 0.0) / counts)
    se = se_means * np.abs(model.link_slope(means))
    if sex is None:
        return model.link_value(means), se
    # population fit of the categorized model on the (category, sex) cell means
    design = np.column_stack([np.vstack([np.eye(size), np.eye(size)]), np.repeat([0.0, 1.0], size)])
    family = glm.family_for(model.link)
    result = sm.GLM(cell_totals / cell_counts, design, family=family, var_weights=cell_counts).fit()
    return np.asarray(result.params[:size], dtype=float), se


def true_theta(config, draws=None, seed=None):
    """
    Monte Carlo oracle for the categorized-model parameters.

    Without a sex covariate theta_j = g(E(Y | X in C_j)). With one, theta is
    the population fit of g(E(Y)) = theta' X^c + theta_z sex over the
    (category, sex) cells, since X may depend on sex.

    Args:
        config (GenConfig): generating model.
        draws (int, optional): number of X draws, config.oracle_draws by default.
        seed (int, optional): oracle seed, the shipped default by default.

    Returns:
        tuple: (theta, standard errors of theta) as ndarrays.
    """
    oracle = load_defaults()["oracle"]
    sex = (config.sex_prob, config.z_shift, config.beta_z) if config.covariate == "sex" else None
    theta, se = _oracle(
        config.lam,
        config.mu_lambda_x,
        config.sigma2_lambda_x,
        config.scheme.cutpoints,
        config.model.value,
        config.beta0,
        config.beta1,
        int(draws or config.oracle_draws),
        int(oracle["chunk"]),
        int(oracle["seed"] if seed is None else seed),
        sex,
    )
    return theta.copy(), se.copy()


def generate(config, rng):
    """
    Draw one dataset from the generating model.

    Draws whose true value or any replicate falls outside the Box-Cox support
    are rejected and redrawn.

    Args:
        config (GenConfig): generating model.
        rng (numpy.random.Generator): random source.

    Returns:
        Sample: x, w (first replicate), y, true theta, the n x R replicates,
        the optional age or sex covariate, the analytic scheme and the rejection rate.
    """
    lam, n, reps = config.lam, config.n, config.n_replicates
    sigma_x, sigma_u = np.sqrt(config.sigma2_lambda_x), np.sqrt(config.sigma2_u)
    with_sex = config.covariate == "sex"
    low, high = config.level_means
    kept_t, kept_w, kept_z = [], [], []
    have = drawn = 0
    while have < n:
        m = n - have
        if with_sex:
            sex = (rng.random(m) < config.sex_prob).astype(float)
            t = rng.normal(np.where(sex == 1.0, high, low), sigma_x)
        else:
            sex = np.zeros(m)
            t = rng.normal(config.mu_lambda_x, sigma_x, m)
        wt = t[:, None] + sigma_u * rng.standard_normal((m, reps))
        ok = _inside(t, lam) & _inside(wt, lam).all(axis=1)
        kept_t.append(t[ok])
        kept_w.append(wt[ok])
        kept_z.append(sex[ok])
        have += int(ok.sum())
        drawn += m
        if drawn > 100 * n:
            break
    rejection = 1.0 - have / drawn
    if rejection > MAX_REJECTION:
        raise ConfigError(
            f"{rejection:.1%} of draws fell outside the Box-Cox support; "
            f"mu_lambda_x={config.mu_lambda_x} sigma2_lambda_x={config.sigma2_lambda_x} are inconsistent with positive X"
        )
    t = np.concatenate(kept_t)[:n]
    x = inverse_box_cox(t, lam)
    replicates = inverse_box_cox(np.vstack(kept_w)[:n], lam)
    eta = config.beta0 + config.beta1 * x
    z = None
    if config.covariate == "age":
        z = rng.normal(config.age_mean, np.sqrt(config.age_var), n)
        eta = eta + config.beta_z * z
    elif with_sex:
        z = np.concatenate(kept_z)[:n]
        eta = eta + config.beta_z * z
    if config.model is ResponseModel.LINEAR:
        y = eta + rng.normal(0.0, config.noise_sd, n)
    else:
        y = (rng.random(n) < config.model.mean(eta)).astype(float)
    theta, _ = true_theta(config)
    return Sample(x, replicates[:, 0], y, theta, replicates, z, config.scheme, rejection)


def default_contrasts(n_categories):
    """(hi, lo) category pairs reported besides the components, 0-based."""
    pairs = [(n_categories - 1, 0)]
    if n_categories >= 5:
        pairs += [(4, 2), (3, 1), (2, 0)]
    return tuple(pairs)


def targets(n_categories, contrasts):
    """Ordered mapping of target label to its weight vector over theta."""
    out = {}
    for j in range(n_categories):
        c = np.zeros(n_categories)
        c[j] = 1.0
        out[f"theta_{j + 1}"] = c
    for hi, lo in contrasts:
        c = np.zeros(n_categories)
        c[hi], c[lo] = 1.0, -1.0
        out[f"theta_{hi + 1}-theta_{lo + 1}"] = c
    return out


@dataclass(frozen=True)
class StudyPlan:
    methods: tuple
    boot_resamples: int
    n_sim: int
    grid: EtaGrid
    kind: ExtrapolantKind
    contrasts: tuple
    ci_method: str
    n_reps: int


@dataclass(frozen=True, eq=False)
class StudyReport:
    """
    Monte Carlo summary of a study.

    table has one row per (method, target) with bias, se (mean estimated
    standard error), sd (empirical, ddof 0), rmse, coverage, mc_se and the
    number n of successful repetitions.
    """

    table: pd.DataFrame
    metadata: dict = field(default_factory=dict)

    def cell(self, method, target):
        rows = self.table[(self.table["method"] == Method(method).value) & (self.table["target"] == target)]
        if rows.empty:
            raise KeyError(f"No cell for {method} / {target}")
        return rows.iloc[0]

    def tidy(self):
        """table with the configuration columns prepended."""
        frame = self.table.copy()
        for position, key in enumerate(("setting", "model", "nsr", "n_categories")):
            if key in self.metadata:
                frame.insert(position, key, self.metadata[key])
        return frame


def _target_values(theta, weights):
    return {label: float(c @ theta) for label, c in weights.items()}


def _records(method, theta, se_of, weights, interval=None):
    records = []
    for label, c in weights.items():
        estimate = float(c @ theta)
        se = se_of(c)
        if interval is not None:
            lower, upper = interval(c, estimate, se)
        elif np.isfinite(se):
            lower, upper = estimate - Z_95 * se, estimate + Z_95 * se
        else:
            lower = upper = float("nan")
        records.append({"method": method, "target": label, "estimate": estimate, "se": se, "lower": lower, "upper": upper})
    return records


def _cov_se(cov):
    return lambda c: float(np.sqrt(max(c @ cov @ c, 0.0)))


def _run_repetition(task, config, plan, truth_pi, truth_p):
    index, seq = task
    gen_seq, mc_seq, boot_seq = seq.spawn(3)
    try:
        sample = generate(config, np.random.default_rng(gen_seq))
        scheme, link = sample.scheme, config.link
        size = scheme.n_categories
        weights = targets(size, plan.contrasts)
        data = glm.Dataset(sample.y, sample.w, sample.z)
        replicates = ReplicateData(sample.replicates)
        records = []

        if Method.NAIVE.value in plan.methods:
            naive = glm.fit(data, scheme, link)
            records += _records(Method.NAIVE.value, naive.theta, _cov_se(naive.cov[:size, :size]), weights)

        params = fit_error_params(sample.w, replicates)
        pi, p = estimate_pi_p(params, scheme)
        extra = {
            "pi_error": float(np.linalg.norm(np.asarray(pi) - np.asarray(truth_pi), "fro")),
            "p_error": float(np.linalg.norm(np.asarray(p) - np.asarray(truth_p))),
        }

        if Method.MCSIMEX.value in plan.methods:
            mc_config = McsimexConfig(
                n_sim=plan.n_sim,
                grid=plan.grid,
                kind=plan.kind,
                seed=int(mc_seq.generate_state(1, np.uint64)[0]),
            )
            mc = mcsimex_estimate(data, scheme, link, pi, mc_config)
            records += _records(Method.MCSIMEX.value, mc.theta, _cov_se(mc.cov), weights)

        if Method.SIMFEX.value in plan.methods:
            if plan.boot_resamples > 0:
                summary = bootstrap_inference(
                    data,
                    replicates,
                    scheme,
                    link,
                    plan.grid,
                    plan.kind,
                    plan.boot_resamples,
                    seed=int(boot_seq.generate_state(1, np.uint64)[0]),
                    ci_method=plan.ci_method,
                )

                def se_of(c):
                    return float(np.std(summary.estimates @ c, ddof=1))

                def interval(c, estimate, se):
                    if plan.ci_method == "percentile":
                        return tuple(np.percentile(summary.estimates @ c, [2.5, 97.5]))
                    return estimate - Z_95 * se, estimate + Z_95 * se

                records += _records(Method.SIMFEX.value, summary.theta_simfex, se_of, weights, interval)
            else:
                result = simfex_estimate(data, scheme, link, pi, p, plan.grid, plan.kind)
                records += _records(Method.SIMFEX.value, result.theta_simfex, lambda c: float("nan"), weights)

        if Method.SIMFEX_Z.value in plan.methods:
            levels = sample.z.astype(int)
            by_params = fit_error_params_by_group(replicates, levels, lam=params.lam)
            by_group = estimate_pi_p_by_group(by_params, scheme)
            extra["pi_z_deviation"] = max(by_group.pi_deviation.values())
            grouped = glm.Dataset(sample.y, sample.w, sample.z, groups=levels)
            contrast = simfex_contrast_estimate(grouped, scheme, link, dict(by_group.by_group), plan.grid, plan.kind)
            differences = {label: c for label, c in weights.items() if abs(c.sum()) < 1e-12}
            anchored = np.concatenate(([0.0], contrast.theta_tilde_simfex))
            records += _records(Method.SIMFEX_Z.value, anchored, lambda c: float("nan"), differences)
    except SimfexError as error:
        logger.debug(f"Repetition {index + 1} failed: {error}")
        return index, None, None, str(error)
    step = max(1, plan.n_reps // 10)
    if (index + 1) % step == 0:
        logger.info(f"Repetition {index + 1}/{plan.n_reps} done")
    return index, records, extra, None


def _summarise(frame, truth):
    rows = []
    for (method, target), group in frame.groupby(["method", "target"], sort=False):
        estimates = group["estimate"].to_numpy(dtype=float)
        errors = estimates - truth[target]
        hits = (group["lower"] <= truth[target]) & (truth[target] <= group["upper"])
        covered = group["lower"].notna()
        sd = float(np.std(estimates))
        rows.append(
            {
                "method": method,
                "target": target,
                "truth": float(truth[target]),
                "bias": float(errors.mean()),
                "se": float(group["se"].mean()),
                "sd": sd,
                "rmse": float(np.sqrt(np.mean(errors**2))),
                "coverage": float(hits[covered].mean()) if covered.any() else float("nan"),
                "mc_se": sd / np.sqrt(estimates.size),
                "n": int(estimates.size),
            }
        )
    return pd.DataFrame(rows)


def run_study(
    config,
    n_reps,
    methods=("naive", "mcsimex", "simfex"),
    boot_resamples=500,
    parallelism=1,
    n_sim=100,
    grid=None,
    kind=ExtrapolantKind.QUADRATIC,
    ci_method="normal",
    contrasts=None,
    max_failure_fraction=0.05,
):
    """
    Monte Carlo study of the naive, MCSIMEX* and SIMFEX estimators.

    Each repetition generates data from config, estimates (Pi, p) from the
    replicates, runs every requested method and records estimates and 95%
    confidence interval hits for each theta_j and each contrast. Repetition
    index i uses the i-th child of SeedSequence(config.seed).

    simfex_z fits the error model within each sex level and reports the
    frequency-weighted contrast estimates theta_j - theta_k only, without
    standard errors.

    Args:
        config (GenConfig): generating model.
        n_reps (int): Monte Carlo repetitions, at least 50.
        methods (iterable): any of naive, mcsimex, simfex, simfex_z.
        boot_resamples (int): bootstrap resamples for SIMFEX SEs; 0 skips the bootstrap.
        parallelism (int): worker processes over repetitions.
        n_sim (int): MCSIMEX pseudo-datasets per eta.

    Returns:
        StudyReport
    """
    if n_reps < MIN_REPS:
        raise ConfigError(f"A study needs at least {MIN_REPS} repetitions, got {n_reps}")
    try:
        methods = tuple(Method(m).value for m in methods)
    except ValueError as error:
        raise ConfigError(str(error))
    if not methods:
        raise ConfigError("No methods requested")
    if Method.SIMFEX_Z.value in methods and config.covariate != "sex":
        raise ConfigError("simfex_z needs the sex covariate to define the levels of Z")
    grid = grid or EtaGrid()
    kind = ExtrapolantKind(kind)
    grid.check(kind)
    contrasts = tuple(contrasts) if contrasts is not None else default_contrasts(config.n_categories)
    plan = StudyPlan(methods, int(boot_resamples), int(n_sim), grid, kind, contrasts, ci_method, int(n_reps))

    started = time.perf_counter()
    truth_theta, truth_se = true_theta(config)
    truth_pi, truth_p = config.true_misclass()
    weights = targets(config.n_categories, contrasts)
    truth = _target_values(truth_theta, weights)
    logger.info(
        f"Study: {config.model.value} {config.setting.value} NSR={config.nsr} J={config.n_categories} "
        f"n={config.n} reps={n_reps} methods={','.join(methods)}"
    )

    worker = partial(_run_repetition, config=config, plan=plan, truth_pi=truth_pi, truth_p=truth_p)
    tasks = list(enumerate(spawn_seeds(config.seed, n_reps)))
    outcomes = map_ordered(worker, tasks, parallelism)

    failed = [(index, reason) for index, records, _, reason in outcomes if records is None]
    if len(failed) > max_failure_fraction * n_reps:
        raise EstimationError(f"{len(failed)} of {n_reps} repetitions failed; first error: {failed[0][1]}")
    if failed:
        logger.warning(f"{len(failed)} of {n_reps} repetitions failed and were excluded")

    records, pi_errors, p_errors, z_deviations = [], [], [], []
    for index, rep_records, extra, _ in outcomes:
        if rep_records is None:
            continue
        records += [dict(record, rep=index) for record in rep_records]
        pi_errors.append(extra["pi_error"])
        p_errors.append(extra["p_error"])
        if "pi_z_deviation" in extra:
            z_deviations.append(extra["pi_z_deviation"])
    table = _summarise(pd.DataFrame(records), truth)

    metadata = {
        "setting": config.setting.value,
        "model": config.model.value,
        "nsr": config.nsr,
        "n_categories": config.n_categories,
        "n": config.n,
        "n_reps": n_reps,
        "n_failed": len(failed),
        "seed": config.seed,
        "lambda": config.lam,
        "mu_lambda_x": config.mu_lambda_x,
        "sigma2_lambda_x": config.sigma2_lambda_x,
        "sigma2_u": config.sigma2_u,
        "beta0": config.beta0,
        "beta1": config.beta1,
        "covariate": config.covariate,
        "beta_z": config.beta_z,
        "z_shift": config.z_shift,
        "boot_resamples": plan.boot_resamples,
        "n_sim": plan.n_sim,
        "eta_grid": ",".join(str(v) for v in grid.values),
        "extrapolant": kind.value,
        "truth_max_se": float(np.max(truth_se)),
        "pi_error_mean": float(np.mean(pi_errors)),
        "pi_error_sd": float(np.std(pi_errors)),
        "p_error_mean": float(np.mean(p_errors)),
        "p_error_sd": float(np.std(p_errors)),
        "runtime_seconds": round(time.perf_counter() - started, 3),
    }
    if z_deviations:
        metadata["pi_z_deviation_mean"] = float(np.mean(z_deviations))
    return StudyReport(table=table, metadata=metadata)


def sensitivity_sweep(base, nsr_values, **study_kwargs):
    """
    run_study at each noise-to-signal ratio with everything else held fixed.

    Returns:
        list: one StudyReport per value of nsr_values, in order.
    """
    if len(nsr_values) == 0:
        raise ConfigError("The sweep needs at least one NSR value")
    reports = []
    for nsr in nsr_values:
        logger.info(f"Sweep: NSR={nsr}")
        reports.append(run_study(replace(base, nsr=float(nsr)), **study_kwargs))
    return reports
