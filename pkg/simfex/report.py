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
import io
import os
import sys
from contextlib import contextmanager
from importlib.metadata import PackageNotFoundError, version

import numpy as np
import pandas as pd
from logzero import logger

from .config import config_hash

PACKAGES = ("simfex", "numpy", "scipy", "statsmodels", "pandas")
METHOD_LABELS = {"naive": "Naive", "mcsimex": "MCSIMEX*", "simfex": "SIMFEX", "simfex_z": "SIMFEX(Z)"}


def package_versions():
    versions = {}
    for name in PACKAGES:
        try:
            versions[f"{name}_version"] = version(name)
        except PackageNotFoundError:
            versions[f"{name}_version"] = "unknown"
    return versions


def run_metadata(config=None, **extra):
    """Seed, package versions and config hash for an output header."""
    metadata = {}
    if config is not None:
        metadata["command"] = config.command
        metadata["seed"] = config.seed
        metadata["config_hash"] = config_hash(config)
    metadata.update(package_versions())
    metadata.update(extra)
    return metadata


def write_csv(frame, path, metadata=None):
    """
    Write frame as CSV preceded by '# key: value' metadata lines.

    Floats are written with the shortest representation that round-trips.
    """
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for key, value in (metadata or {}).items():
            handle.write(f"# {key}: {value}\n")
        frame.to_csv(handle, index=False, lineterminator="\n")
    logger.info(f"Report written to {path}")


def read_report(path):
    """
    Read a CSV written by write_csv.

    Returns:
        tuple: (DataFrame, metadata dict with string values).
    """
    metadata = {}
    skip = 0
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(":")
            metadata[key.strip()] = value.strip()
            skip += 1
    frame = pd.read_csv(path, skiprows=skip, float_precision="round_trip")
    return frame, metadata


def format_table(frame, digits=4):
    """Aligned plain-text rendering of a result frame."""
    return frame.to_string(index=False, float_format=lambda v: f"{v:.{digits}f}", na_rep="-")


def study_frame(reports):
    """Tidy table of one or more StudyReports with their configuration columns."""
    reports = reports if isinstance(reports, (list, tuple)) else [reports]
    return pd.concat([report.tidy() for report in reports], ignore_index=True)


def format_summary_table(reports, target=None, digits=2):
    """
    Bias/RMSE and SE/CR blocks for one target, one row per Model / Setting / NSR / J.

    Args:
        reports (StudyReport or list): study results.
        target (str, optional): target label, theta_J-theta_1 by default.

    Returns:
        str: two aligned blocks separated by a blank line.
    """
    frame = study_frame(reports)
    if target is None:
        j = int(frame["n_categories"].iloc[0])
        target = f"theta_{j}-theta_1"
    frame = frame[frame["target"] == target].copy()
    frame["method"] = frame["method"].map(METHOD_LABELS)
    index = ["model", "setting", "nsr", "n_categories"]
    order = [label for label in METHOD_LABELS.values() if label in set(frame["method"])]
    blocks = []
    for first, second in (("bias", "rmse"), ("se", "coverage")):
        wide = frame.pivot_table(index=index, columns="method", values=[first, second], sort=False)
        wide = wide.reindex(columns=pd.MultiIndex.from_product([[first, second], order]))
        wide.columns = [f"{metric.upper() if metric != 'coverage' else 'CR'} {method}" for metric, method in wide.columns]
        wide = wide.reset_index().rename(columns={"model": "Model", "setting": "Setting", "nsr": "NSR", "n_categories": "J"})
        blocks.append(format_table(wide, digits))
    return f"Target {target}\n" + "\n\n".join(blocks)


def misclass_frame(params, pi, p, diagnostics=None, by_group=None):
    """
    Long-format table of an error model, Pi and p.

    Columns are section, row, column and value; Pi entries use 1-based
    category labels.
    """
    rows = [
        ("error_model", "lambda", "", params.lam),
        ("error_model", "mu_lambda_x", "", params.mu_lambda_x),
        ("error_model", "sigma2_lambda_x", "", params.sigma2_lambda_x),
        ("error_model", "sigma2_u", "", params.sigma2_u),
    ]
    entries = np.asarray(pi)
    for j in range(entries.shape[0]):
        for k in range(entries.shape[1]):
            rows.append(("pi", f"C_{j + 1}", f"C_{k + 1}", float(entries[j, k])))
    for j, value in enumerate(np.asarray(p)):
        rows.append(("p", f"C_{j + 1}", "", float(value)))
    for key, value in (diagnostics or {}).items():
        rows.append(("diagnostics", key, "", float(value)))
    for level, (group_pi, group_p) in (by_group or {}).items():
        entries = np.asarray(group_pi)
        for j in range(entries.shape[0]):
            for k in range(entries.shape[1]):
                rows.append((f"pi[{level}]", f"C_{j + 1}", f"C_{k + 1}", float(entries[j, k])))
        for j, value in enumerate(np.asarray(group_p)):
            rows.append((f"p[{level}]", f"C_{j + 1}", "", float(value)))
    return pd.DataFrame(rows, columns=["section", "row", "column", "value"])


def format_misclass(frame, digits=4):
    """Pi as a matrix, then p and the error model, for terminal output."""
    parts = []
    for section, group in frame.groupby("section", sort=False):
        if section.startswith("pi"):
            matrix = group.pivot(index="row", columns="column", values="value")
            parts.append(f"{section}\n{matrix.to_string(float_format=lambda v: f'{v:.{digits}f}')}")
        else:
            body = group[["row", "value"]].to_string(index=False, header=False, float_format=lambda v: f"{v:.{digits}f}")
            parts.append(f"{section}\n{body}")
    return "\n\n".join(parts)


def emit(frame, out=None, fmt="csv", metadata=None, text=None):
    """
    Write a result frame to out as CSV and show it on stdout.

    With fmt == "table" stdout gets the aligned table (or text when given),
    otherwise the CSV itself.
    """
    if out:
        write_csv(frame, out, metadata)
    if fmt == "table":
        sys.stdout.write((text if text is not None else format_table(frame)) + "\n")
    elif not out:
        buffer = io.StringIO()
        for key, value in (metadata or {}).items():
            buffer.write(f"# {key}: {value}\n")
        frame.to_csv(buffer, index=False, lineterminator="\n")
        sys.stdout.write(buffer.getvalue())


def _mtime(path):
    return os.stat(path).st_mtime_ns if os.path.exists(path) else None


@contextmanager
def removing_on_error(*paths):
    """Delete any of paths written inside the block when it raises."""
    before = {path: _mtime(path) for path in paths if path}
    try:
        yield
    except BaseException:
        for path, stamp in before.items():
            if os.path.exists(path) and _mtime(path) != stamp:
                os.remove(path)
                logger.debug(f"Removed partial output {path}")
        raise
