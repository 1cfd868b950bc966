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
import argparse
import logging
import sys
from typing import NamedTuple

import logzero
import numpy as np
import pandas as pd
from logzero import logger

from . import glm
from .config import from_args
from .error_model import ReplicateData, fit_error_params, normality_diagnostics
from .estimator import EtaGrid, bootstrap_inference, simfex_contrast_estimate, simfex_estimate, wald_p_value
from .exceptions import ConfigError, DataError, SimfexError
from .mcsimex import McsimexConfig, mcsimex_estimate
from .misclass import CategoryScheme, estimate_pi_p, estimate_pi_p_by_group, fit_error_params_by_group, quantile_cutpoints
from .report import (
    emit,
    format_misclass,
    format_summary_table,
    format_table,
    misclass_frame,
    removing_on_error,
    run_metadata,
    study_frame,
)
from .simulate import GenConfig, run_study, sensitivity_sweep

MIN_ROWS = 50


class Ingested(NamedTuple):
    dataset: glm.Dataset
    replicates: ReplicateData
    w: np.ndarray
    replicate_groups: np.ndarray
    n_dropped: int
    rejected: tuple


def _read_table(path):
    try:
        return pd.read_csv(path, sep=None, engine="python", encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"Input file {path} does not exist")
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as error:
        raise DataError(f"Could not parse {path}: {error}")


def _require_columns(frame, names, path):
    missing = [name for name in names if name not in frame.columns]
    if missing:
        raise ConfigError(f"Column(s) {', '.join(missing)} not found in {path}")


def _numeric(frame, names):
    out = frame.copy()
    for name in names:
        out[name] = pd.to_numeric(out[name], errors="coerce")
    return out


def _replicates_from(frame, names, group=None):
    values = _numeric(frame, names)
    complete = values[names].notna().all(axis=1)
    values = values[complete]
    positive = (values[names] > 0).all(axis=1)
    bad = values.index[~positive].tolist()
    if bad:
        logger.warning(f"Rejected {len(bad)} replicate row(s) with non-positive values: {bad[:20]}")
    values = values[positive]
    groups = values[group].to_numpy() if group and group in values.columns else None
    return ReplicateData(values[names].to_numpy(dtype=float)), groups


def ingest(path, mapping, replicate_path=None, min_rows=MIN_ROWS):
    """
    Read a delimiter separated file with a header row into model inputs.

    Rows with missing values in the mapped primary columns are dropped and
    counted; rows whose contaminated covariate is not positive are rejected
    and their row indices reported. Replicate columns are read from the same
    file unless replicate_path is given, using every row where all of them are
    present.

    Args:
        path (str): input file.
        mapping (ColumnMapping): column bindings.
        replicate_path (str, optional): separate file holding the replicate columns.
        min_rows (int): minimum number of usable primary rows.

    Returns:
        Ingested: dataset (None without a response column), replicates (None
        without replicate columns), the usable w values, replicate group labels,
        the dropped-row count and the rejected row indices.
    """
    frame = _read_table(path)
    numeric = [c for c in (mapping.response, mapping.covariate, *mapping.covariates) if c]
    _require_columns(frame, mapping.primary_columns, path)
    if mapping.replicates and not replicate_path:
        _require_columns(frame, mapping.replicates, path)

    primary = _numeric(frame, numeric)
    complete = primary[mapping.primary_columns].notna().all(axis=1)
    dropped = int((~complete).sum())
    if dropped:
        logger.warning(f"Dropped {dropped} row(s) with missing values in {', '.join(mapping.primary_columns)}")
    primary = primary[complete]
    positive = primary[mapping.covariate] > 0
    rejected = tuple(primary.index[~positive].tolist())
    if rejected:
        logger.warning(f"Rejected {len(rejected)} row(s) with non-positive {mapping.covariate}: rows {list(rejected[:20])}")
    primary = primary[positive]
    if len(primary) < min_rows:
        raise DataError(f"Only {len(primary)} usable rows in {path}; at least {min_rows} are required")
    logger.info(f"Read {len(primary)} usable rows from {path}")

    w = primary[mapping.covariate].to_numpy(dtype=float)
    dataset = None
    if mapping.response:
        z = primary[list(mapping.covariates)].to_numpy(dtype=float) if mapping.covariates else None
        groups = primary[mapping.group].to_numpy() if mapping.group else None
        dataset = glm.Dataset(primary[mapping.response].to_numpy(dtype=float), w, z, groups)

    replicates = replicate_groups = None
    if mapping.replicates:
        source = frame
        if replicate_path:
            source = _read_table(replicate_path)
            _require_columns(source, mapping.replicates, replicate_path)
        replicates, replicate_groups = _replicates_from(source, list(mapping.replicates), mapping.group)
        logger.info(f"Replicate data: {replicates.n_subjects} subjects x {replicates.n_replicates} replicates")
    return Ingested(dataset, replicates, w, replicate_groups, dropped, rejected)


def _scheme(config, w):
    if config.cutpoints:
        return CategoryScheme(config.cutpoints)
    return quantile_cutpoints(w, config.categories)


def _grid(config):
    return EtaGrid(config.eta_grid)


def _group_models(config, ingested, scheme, lam):
    if ingested.replicate_groups is None:
        raise DataError(f"Group column {config.columns.group} is not available for the replicate subjects")
    params = fit_error_params_by_group(ingested.replicates, ingested.replicate_groups, lam=lam)
    models = estimate_pi_p_by_group(params, scheme)
    for level in models.by_group:
        logger.info(
            f"Group {level}: |Pi(z) - Pi|_inf = {models.pi_deviation[level]:.4f}, "
            f"|p(z) - p|_inf = {models.p_deviation[level]:.4f}"
        )
    return models


def _error_model(ingested):
    params = fit_error_params(ingested.w, ingested.replicates)
    logger.info(
        f"Box-Cox lambda={params.lam:.3f}, mu_lambda_x={params.mu_lambda_x:.4f}, "
        f"sigma2_lambda_x={params.sigma2_lambda_x:.4f}, sigma2_u={params.sigma2_u:.4f}"
    )
    return params


def _rd_label(n_categories):
    return f"theta_{n_categories}-theta_1"


def misclass(config):
    """Estimate the error model, Pi and p from replicate data."""
    ingested = ingest(config.input, config.columns, config.replicate_input, min_rows=MIN_ROWS)
    scheme = _scheme(config, ingested.w)
    params = _error_model(ingested)
    pi, p = estimate_pi_p(params, scheme)
    diagnostics = normality_diagnostics(ingested.w, params.lam, ingested.replicates)
    by_group = None
    if config.columns.group:
        by_group = dict(_group_models(config, ingested, scheme, params.lam).by_group)
    frame = misclass_frame(params, pi, p, diagnostics, by_group)
    for note in params.warnings:
        logger.warning(note)
    cutpoints = ",".join(repr(c) for c in scheme.cutpoints)
    return frame, format_misclass(frame), {"cutpoints": cutpoints}


def _rows(method, theta, cov, rd_label):
    size = theta.size
    rows = []
    for j in range(size):
        se = float(np.sqrt(max(cov[j, j], 0.0))) if cov is not None else float("nan")
        rows.append({"method": method, "target": f"theta_{j + 1}", "estimate": float(theta[j]), "se": se, "p_value": float("nan")})
    rd = float(theta[-1] - theta[0])
    if cov is not None:
        c = np.zeros(size)
        c[-1], c[0] = 1.0, -1.0
        rd_se = float(np.sqrt(max(c @ cov @ c, 0.0)))
    else:
        rd_se = float("nan")
    rows.append({"method": method, "target": rd_label, "estimate": rd, "se": rd_se, "p_value": wald_p_value(rd, rd_se)})
    return rows


def _highlight(frame, rd_label):
    rd = frame[frame["target"] == rd_label]
    parts = [f"{row.method}={row.estimate:.4f}" for row in rd.itertuples()]
    return f"Relative difference {rd_label}: " + ", ".join(parts)


def fit(config):
    """Naive, MCSIMEX* and SIMFEX estimates of theta."""
    ingested = ingest(config.input, config.columns, config.replicate_input)
    data = ingested.dataset
    scheme = _scheme(config, ingested.w)
    link = glm.Link(config.link)
    rd_label = _rd_label(scheme.n_categories)
    size = scheme.n_categories
    naive = glm.fit(data, scheme, link)
    rows = []
    if "naive" in config.methods:
        rows += _rows("naive", naive.theta, naive.cov[:size, :size], rd_label)
    if "simfex" in config.methods or "mcsimex" in config.methods:
        params = _error_model(ingested)
        pi, p = estimate_pi_p(params, scheme)
        if "mcsimex" in config.methods:
            mc_config = McsimexConfig(n_sim=config.n_sim, grid=_grid(config), kind=config.extrapolant, seed=config.seed)
            mc = mcsimex_estimate(data, scheme, link, pi, mc_config, parallelism=config.parallelism)
            rows += _rows("mcsimex", mc.theta, mc.cov, rd_label)
        if "simfex" in config.methods:
            result = simfex_estimate(data, scheme, link, pi, p, _grid(config), config.extrapolant)
            rows += _rows("simfex", result.theta_simfex, None, rd_label)
            if config.columns.group:
                models = _group_models(config, ingested, scheme, params.lam).by_group
                contrast = simfex_contrast_estimate(data, scheme, link, models, _grid(config), config.extrapolant)
                for j, value in enumerate(contrast.theta_tilde_simfex, start=2):
                    rows.append(
                        {"method": "simfex_z", "target": f"theta_{j}-theta_1", "estimate": float(value), "se": float("nan"), "p_value": float("nan")}
                    )
    frame = pd.DataFrame(rows)
    if naive.flagged:
        logger.warning(f"Naive fit flagged: {'; '.join(naive.warnings) or 'not converged'}")
    text = format_table(frame) + "\n" + _highlight(frame, rd_label)
    return frame, text, {"cutpoints": ",".join(repr(c) for c in scheme.cutpoints)}


def bootstrap(config):
    """SIMFEX estimates with bootstrap standard errors, confidence intervals and p-values."""
    ingested = ingest(config.input, config.columns, config.replicate_input)
    data = ingested.dataset
    scheme = _scheme(config, ingested.w)
    link = glm.Link(config.link)
    rd_label = _rd_label(scheme.n_categories)
    summary = bootstrap_inference(
        data,
        ingested.replicates,
        scheme,
        link,
        _grid(config),
        config.extrapolant,
        n_resamples=config.boot,
        seed=config.seed,
        reestimate_pi=config.reestimate_pi,
        ci_method=config.ci_method,
        parallelism=config.parallelism,
    )
    rows = []
    for j, value in enumerate(summary.theta_simfex):
        rows.append(
            {
                "method": "simfex",
                "target": f"theta_{j + 1}",
                "estimate": float(value),
                "se": float(summary.se[j]),
                "ci_lower": float(summary.ci_lower[j]),
                "ci_upper": float(summary.ci_upper[j]),
                "p_value": float("nan"),
            }
        )
    rows.append(
        {
            "method": "simfex",
            "target": rd_label,
            "estimate": summary.relative_difference,
            "se": summary.relative_difference_se,
            "ci_lower": summary.relative_difference_ci[0],
            "ci_upper": summary.relative_difference_ci[1],
            "p_value": summary.p_value,
        }
    )
    frame = pd.DataFrame(rows)
    extra = {
        "n_resamples": summary.n_resamples,
        "n_discarded": summary.n_discarded,
        "reestimated_pi": summary.reestimated,
        "ci_method": summary.ci_method,
    }
    text = format_table(frame) + "\n" + _highlight(frame, rd_label) + f" (p = {summary.p_value:.4g})"
    return frame, text, extra


def _gen_config(config):
    return GenConfig.from_mapping({**config.study, "seed": config.seed})


def _study_kwargs(config):
    return dict(
        n_reps=config.reps,
        methods=config.methods,
        boot_resamples=config.boot,
        parallelism=config.parallelism,
        n_sim=config.n_sim,
        grid=_grid(config),
        kind=config.extrapolant,
        ci_method=config.ci_method,
    )


def simulate(config):
    """Monte Carlo study at one configuration."""
    report = run_study(_gen_config(config), **_study_kwargs(config))
    frame = study_frame(report)
    text = format_summary_table(report) + "\n\n" + format_table(frame)
    return frame, text, report.metadata


def sweep(config):
    """Monte Carlo studies over a sequence of noise-to-signal ratios."""
    reports = sensitivity_sweep(_gen_config(config), config.nsr_values, **_study_kwargs(config))
    frame = study_frame(reports)
    labels = sorted({t for t in frame["target"] if "-" in t})
    text = "\n\n".join(format_summary_table(reports, target=label) for label in labels)
    metadata = {k: v for k, v in reports[0].metadata.items() if k not in ("nsr", "runtime_seconds")}
    metadata["nsr_values"] = ",".join(str(v) for v in config.nsr_values)
    return frame, text, metadata


COMMANDS = {
    "misclass": misclass,
    "fit": fit,
    "bootstrap": bootstrap,
    "simulate": simulate,
    "sweep": sweep,
}


def run(config):
    """
    Execute one command and write its outputs.

    Returns:
        int: 0 on success, otherwise the exit code of the failure.
    """
    logzero.loglevel({"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING}[config.verbosity])
    try:
        with removing_on_error(config.out):
            frame, text, extra = COMMANDS[config.command](config)
            emit(frame, config.out, config.format, run_metadata(config, **extra), text)
    except SimfexError as error:
        logger.error(f"{type(error).__name__}: {error}")
        return error.exit_code
    except Exception as error:
        logger.exception(f"Unexpected failure: {error}")
        return SimfexError.exit_code
    return 0


def misclass_from_parser(args):
    return run(from_args(args))


def fit_from_parser(args):
    return run(from_args(args))


def bootstrap_from_parser(args):
    return run(from_args(args))


def simulate_from_parser(args):
    return run(from_args(args))


def sweep_from_parser(args):
    return run(from_args(args))


def _data_arguments(parser, response_required=True):
    required_named = parser.add_argument_group("Required named arguments.")
    required_named.add_argument("--input", help="Delimiter separated input file with a header row", required=True)
    required_named.add_argument("--covariate", help="Column holding the contaminated covariate W", required=True)
    if response_required:
        required_named.add_argument("--response", help="Column holding the response Y", required=True)
    optional_named = parser.add_argument_group("Optional named arguments")
    optional_named.add_argument("--replicates", help="Comma separated replicate columns, for example w1,w2", default=None)
    optional_named.add_argument("--replicate-input", help="Separate file holding the replicate columns", default=None)
    optional_named.add_argument("--covariates", help="Comma separated precisely measured covariate columns", default=None)
    optional_named.add_argument("--group", help="Column holding a discrete covariate level", default=None)
    optional_named.add_argument("--categories", help="Number of categories J, cutpoints at quantiles of W", type=int, default=None)
    optional_named.add_argument("--cutpoints", help="Comma separated explicit cutpoints", default=None)
    return optional_named


def _estimation_arguments(optional_named):
    optional_named.add_argument("--link", help="identity|logit|probit", choices=("identity", "logit", "probit"), default="identity")
    optional_named.add_argument("--eta-grid", help="Comma separated eta grid, default 0.5,1,1.5,2", default=None)
    optional_named.add_argument("--extrapolant", help="linear|quadratic", choices=("linear", "quadratic"), default=None)
    optional_named.add_argument("--seed", help="Random seed", type=int, default=0)


def _study_arguments(parser):
    optional_named = parser.add_argument_group("Optional named arguments")
    optional_named.add_argument("--config", help="JSON file with generation settings", default=None)
    optional_named.add_argument("--setting", help="normal|right_skewed|heavy_tailed", default=None)
    optional_named.add_argument("--model", help="linear|logistic|probit", default=None)
    optional_named.add_argument("--n", help="Sample size per repetition", type=int, default=None)
    optional_named.add_argument("--categories", help="Number of categories J", type=int, default=None)
    optional_named.add_argument(
        "--z-covariate", help="Precisely measured covariate: none|age|sex", choices=("none", "age", "sex"), default=None
    )
    optional_named.add_argument(
        "--z-shift", help="Shift of the transformed mean of X between sex levels", type=float, default=None
    )
    optional_named.add_argument("--reps", help="Monte Carlo repetitions", type=int, default=None)
    optional_named.add_argument("--boot", help="Bootstrap resamples for SIMFEX, 0 to skip", type=int, default=None)
    optional_named.add_argument("--n-sim", help="MCSIMEX pseudo-datasets per eta", type=int, default=None)
    optional_named.add_argument("--methods", help="Comma separated methods from naive,mcsimex,simfex,simfex_z", default=None)
    optional_named.add_argument("--ci-method", help="normal|percentile", choices=("normal", "percentile"), default="normal")
    optional_named.add_argument("--eta-grid", help="Comma separated eta grid, default 0.5,1,1.5,2", default=None)
    optional_named.add_argument("--extrapolant", help="linear|quadratic", choices=("linear", "quadratic"), default=None)
    optional_named.add_argument("--seed", help="Random seed", type=int, default=0)
    return optional_named


def _common_arguments():
    common = argparse.ArgumentParser(add_help=False)
    output = common.add_argument_group("Output arguments")
    output.add_argument("--out", help="Write the result CSV with a metadata header to this path", default=None)
    output.add_argument("--format", help="Terminal output: csv|table", choices=("csv", "table"), default="csv")
    output.add_argument("--parallelism", help="Worker processes", type=int, default=1)
    verbosity = output.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", help="Debug logging", action="store_true")
    verbosity.add_argument("--quiet", help="Warnings and errors only", action="store_true")
    return common


def main(args=None):
    common = _common_arguments()
    parser = argparse.ArgumentParser(description="Simulation-free extrapolation (SIMFEX) for categorized error-prone covariates")
    subparsers = parser.add_subparsers(dest="command")

    parser_misclass = subparsers.add_parser(
        "misclass", parents=[common], help="Estimate the Box-Cox error model, misclassification matrix and category probabilities"
    )
    _data_arguments(parser_misclass, response_required=False)
    parser_misclass.set_defaults(func=misclass_from_parser)

    parser_fit = subparsers.add_parser(
        "fit", parents=[common], help="Naive, MCSIMEX* and SIMFEX estimates of the categorized model"
    )
    optional_named = _data_arguments(parser_fit)
    _estimation_arguments(optional_named)
    optional_named.add_argument("--methods", help="Comma separated methods from naive,mcsimex,simfex", default=None)
    optional_named.add_argument("--n-sim", help="MCSIMEX pseudo-datasets per eta", type=int, default=None)
    parser_fit.set_defaults(func=fit_from_parser)

    parser_bootstrap = subparsers.add_parser(
        "bootstrap", parents=[common], help="SIMFEX with bootstrap standard errors, confidence intervals and p-values"
    )
    optional_named = _data_arguments(parser_bootstrap)
    _estimation_arguments(optional_named)
    optional_named.add_argument("--boot", help="Bootstrap resamples (default 500)", type=int, default=None)
    optional_named.add_argument("--ci-method", help="normal|percentile", choices=("normal", "percentile"), default="normal")
    optional_named.add_argument("--fixed-pi", help="Hold Pi and p at the full-data estimate", action="store_true")
    parser_bootstrap.set_defaults(func=bootstrap_from_parser)

    parser_simulate = subparsers.add_parser(
        "simulate", parents=[common], help="Monte Carlo study of naive, MCSIMEX* and SIMFEX"
    )
    optional_named = _study_arguments(parser_simulate)
    optional_named.add_argument("--nsr", help="Noise-to-signal ratio", type=float, default=None)
    parser_simulate.set_defaults(func=simulate_from_parser)

    parser_sweep = subparsers.add_parser(
        "sweep", parents=[common], help="Monte Carlo studies over several noise-to-signal ratios"
    )
    required_named = parser_sweep.add_argument_group("Required named arguments.")
    required_named.add_argument("--nsr-values", help="Comma separated NSR values, for example 1,0.8,0.5,0.2", required=True)
    _study_arguments(parser_sweep)
    parser_sweep.set_defaults(func=sweep_from_parser)

    args = parser.parse_args(args)

    try:
        func = args.func
    except AttributeError:
        parser.error("too few arguments")
    try:
        return func(args)
    except ConfigError as error:
        logger.error(f"ConfigError: {error}")
        return error.exit_code


if __name__ == "__main__":
    sys.exit(main())
