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

import numpy as np
from logzero import logger

from .exceptions import DataError, NumericalError

ROW_SUM_TOL = 1e-10
MAX_EIGVEC_COND = 1e12
MAX_IMAG_RESIDUAL = 1e-6


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """Row-stochastic J x J misclassification matrix; entry [j', j] = P(W in C_j | X in C_j')."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DataError(f"A misclassification matrix must be square, got shape {entries.shape}")
        if np.any(~np.isfinite(entries)) or np.any(entries < 0):
            raise DataError("Misclassification matrix entries must be finite and non-negative")
        rows = entries.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ROW_SUM_TOL):
            raise DataError(f"Misclassification matrix rows must sum to 1, got {rows}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def identity(cls, size):
        return cls(np.eye(size))

    @classmethod
    def from_rows(cls, rows):
        """Build from non-negative rows, rescaling each row by its sum."""
        rows = np.clip(np.asarray(rows, dtype=float), 0.0, None)
        sums = rows.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise NumericalError("Cannot normalise a misclassification matrix row with no mass")
        return cls(rows / sums)

    @property
    def size(self):
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True, eq=False)
class MatrixPowerResult:
    """Fractional power of a misclassification matrix and the corrections applied to it."""

    matrix: StochasticMatrix
    imag_residual: float = 0.0
    clip_mass: float = 0.0


def _is_integer(eta):
    return float(eta).is_integer()


def fractional_power(pi, eta):
    """
    Principal power Pi**eta of a row-stochastic matrix.

    Integer powers are exact repeated products. Fractional powers use the
    eigendecomposition V diag(lambda_i**eta) V^-1; the real part is kept,
    negative entries are clipped to zero and rows rescaled. The discarded
    imaginary magnitude and the clipped mass are reported.

    Args:
        pi (StochasticMatrix): matrix to raise.
        eta (float): non-negative exponent.

    Returns:
        MatrixPowerResult
    """
    if eta < 0 or not np.isfinite(eta):
        raise DataError(f"Power eta must be a finite non-negative number, got {eta}")
    entries = np.asarray(pi, dtype=float)
    size = entries.shape[0]
    if eta == 0:
        return MatrixPowerResult(StochasticMatrix.identity(size))
    if _is_integer(eta):
        return MatrixPowerResult(StochasticMatrix(np.linalg.matrix_power(entries, int(eta))))

    try:
        eigvals, eigvecs = np.linalg.eig(entries)
    except np.linalg.LinAlgError as error:
        raise NumericalError(f"Eigendecomposition failed: {error}") from error
    cond = np.linalg.cond(eigvecs)
    if not np.isfinite(cond) or cond > MAX_EIGVEC_COND:
        raise NumericalError(f"Misclassification matrix is not safely diagonalizable (cond(V) = {cond:.3g})")
    powered = eigvecs @ np.diag(np.power(eigvals.astype(complex), eta)) @ np.linalg.inv(eigvecs)
    imag_residual = float(np.max(np.abs(powered.imag)))
    if imag_residual > MAX_IMAG_RESIDUAL:
        raise NumericalError(f"Pi**{eta} has imaginary part {imag_residual:.3g}; the power is ill-defined")
    real = powered.real
    clip_mass = float(-real[real < 0].sum())
    if clip_mass > 0:
        logger.warning(f"Clipped negative mass {clip_mass:.3g} from Pi**{eta}")
    return MatrixPowerResult(
        matrix=StochasticMatrix.from_rows(real),
        imag_residual=imag_residual,
        clip_mass=clip_mass,
    )


def naive_map_matrix(pi, p):
    """
    Matrix A(Pi, p) with theta_naive = A theta.

    A[j, j'] = pi[j', j] p[j'] / (Pi[:, j] . p), the probability that the true
    category is j' given the observed category j. Every row of A sums to one.
    """
    entries = np.asarray(pi, dtype=float)
    probs = np.asarray(p, dtype=float)
    if probs.shape != (entries.shape[0],):
        raise DataError("Probability vector length does not match the misclassification matrix")
    if np.any(probs <= 0):
        raise DataError("All category probabilities must be positive")
    joint = entries * probs[:, None]
    column_mass = joint.sum(axis=0)
    if np.any(column_mass <= 0):
        raise NumericalError("A category has zero observed-scale mass; A(Pi, p) is undefined")
    return joint.T / column_mass[:, None]
