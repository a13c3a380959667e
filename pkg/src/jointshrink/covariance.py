"""Centering, standardization and sample covariance for grouped data."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    InsufficientObservations,
    SingleGroup,
    ZeroVarianceColumn,
)

MIN_GROUP_SIZE = 3


def as_data_matrix(values, min_rows: int = 2) -> np.ndarray:
    """Validate an observations x variables matrix and return it as float64."""
    X = np.asarray(values, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("data matrix contains NaN or Inf entries")
    if X.shape[0] < min_rows:
        raise InsufficientObservations(
            f"need at least {min_rows} observations, got {X.shape[0]}"
        )
    return X


@dataclass(frozen=True)
class GroupedDataset:
    """Per-group observation matrices over a common, ordered variable set.

    Attributes
    ----------
    groups : list of ndarray, each of shape (n_g, p)
    variable_names : list of str, length p
    group_names : list of str, length G
    """

    groups: list
    variable_names: list
    group_names: list

    def __post_init__(self):
        groups = [as_data_matrix(g, min_rows=MIN_GROUP_SIZE) for g in self.groups]
        if len(groups) < 2:
            raise SingleGroup(f"joint estimation needs at least 2 groups, got {len(groups)}")
        p = groups[0].shape[1]
        for name, g in zip(self.group_names, groups):
            if g.shape[1] != p:
                raise DimensionMismatch(
                    f"group {name!r} has {g.shape[1]} variables, expected {p}"
                )
        if len(self.variable_names) != p:
            raise DimensionMismatch(
                f"{len(self.variable_names)} variable names for {p} columns"
            )
        if len(self.group_names) != len(groups):
            raise DimensionMismatch(
                f"{len(self.group_names)} group names for {len(groups)} groups"
            )
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "variable_names", [str(v) for v in self.variable_names])
        object.__setattr__(self, "group_names", [str(g) for g in self.group_names])

    @classmethod
    def from_arrays(cls, arrays: Sequence, variable_names=None, group_names=None):
        arrays = list(arrays)
        p = np.shape(arrays[0])[1]
        if variable_names is None:
            variable_names = [f"V{k + 1}" for k in range(p)]
        if group_names is None:
            group_names = [f"group{g + 1}" for g in range(len(arrays))]
        return cls(arrays, list(variable_names), list(group_names))

    @property
    def p(self) -> int:
        return self.groups[0].shape[1]

    @property
    def G(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> list[int]:
        return [g.shape[0] for g in self.groups]


@dataclass(frozen=True)
class CovarianceEstimate:
    """A p x p covariance matrix with the observation count it came from.

    ``variance`` optionally carries the estimated sampling variance of the
    matrix (sum of entrywise variances), filled in by the shrinkage stage.
    """

    matrix: np.ndarray
    n: int
    variance: float | None = field(default=None, compare=False)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


def center(X) -> np.ndarray:
    X = as_data_matrix(X, min_rows=1)
    return X - X.mean(axis=0)


def standardize(X) -> np.ndarray:
    """Center each column and scale it to unit sample variance (divisor n-1).

    Raises
    ------
    ZeroVarianceColumn
        If a column is constant.
    """
    X = as_data_matrix(X, min_rows=2)
    Xc = X - X.mean(axis=0)
    sd = np.sqrt(np.einsum("ij,ij->j", Xc, Xc) / (X.shape[0] - 1))
    # relative test: a column of identical large values leaves rounding residue
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    flat = np.flatnonzero(sd <= 1e-13 * scale)
    if flat.size:
        raise ZeroVarianceColumn(int(flat[0]))
    Z = Xc / sd
    # second pass removes the O(eps) mean left by the first
    return Z - Z.mean(axis=0)


def _covariance_matrix(Xc: np.ndarray) -> np.ndarray:
    n = Xc.shape[0]
    S = Xc.T @ Xc
    S /= n - 1
    # BLAS may round the two triangles differently
    return (S + S.T) / 2


def sample_covariance(X) -> CovarianceEstimate:
    """Unbiased sample covariance ``(1/(n-1)) sum_k (x_k - xbar)(x_k - xbar)^T``."""
    X = as_data_matrix(X, min_rows=2)
    Xc = X - X.mean(axis=0)
    return CovarianceEstimate(_covariance_matrix(Xc), X.shape[0])


def observation_contributions(X) -> np.ndarray:
    """Per-observation centered outer products, shape (n, p, p).

    Their mean times n/(n-1) is the sample covariance. Memory is n*p*p, so
    this is meant for small problems and tests; the shrinkage code uses a
    closed form that never materializes the stack.
    """
    X = as_data_matrix(X, min_rows=2)
    Xc = X - X.mean(axis=0)
    return np.einsum("ki,kj->kij", Xc, Xc)
