"""Matrix container, factorization state, model configuration, error metrics.

Everything here is an immutable value object: arrays are copied on
construction and marked read-only, so instances can be shared freely
across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Dimension mismatch between matrices or factors."""


class NumericalError(ArithmeticError):
    """Linear algebra failed beyond the configured jitter rescue."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _readonly_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DenseMatrix:
    """Dense row-major real matrix with finite entries.

    Carrier for the observed matrix, the signal, the factors, and their
    products. Entries may be negative (observations can be); factor
    non-negativity is enforced by :class:`Factorization`.
    """

    values: np.ndarray

    def __init__(self, values) -> None:
        arr = _readonly_array(values, 2, "matrix")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"matrix dimensions must be positive, got {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, DenseMatrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.values, other.values))

    def __hash__(self) -> int:  # content-based, consistent with __eq__
        return hash((self.shape, self.values.tobytes()))


def as_matrix(x) -> DenseMatrix:
    """Coerce a DenseMatrix or 2-d array-like into a DenseMatrix."""
    if isinstance(x, DenseMatrix):
        return x
    return DenseMatrix(x)


@dataclass(frozen=True)
class Factorization:
    """Factor pair (U, V) with per-column scales gamma.

    U is m1 x K, V is m2 x K, gamma has length K. All factor entries are
    >= 0 and every scale is > 0.
    """

    U: DenseMatrix
    V: DenseMatrix
    gamma: np.ndarray

    def __init__(self, U, V, gamma) -> None:
        U = as_matrix(U)
        V = as_matrix(V)
        g = _readonly_array(gamma, 1, "gamma")
        if U.cols != V.cols or U.cols != g.shape[0]:
            raise ShapeError(
                f"inconsistent widths: U has {U.cols}, V has {V.cols}, gamma has {g.shape[0]}"
            )
        if np.any(U.values < 0) or np.any(V.values < 0):
            raise ValueError("factor entries must be non-negative")
        if np.any(g <= 0):
            raise ValueError("every scale gamma_l must be strictly positive")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "gamma", g)

    @property
    def K(self) -> int:
        return self.U.cols

    @property
    def m1(self) -> int:
        return self.U.rows

    @property
    def m2(self) -> int:
        return self.V.rows


@dataclass(frozen=True)
class ModelConfig:
    """Noise level, inverse temperature, and factorization width.

    ``lam`` defaults to 1/(4*sigma2), the value the bound evaluator
    requires; larger values are accepted for plain estimation runs but
    rejected when evaluating bounds. ``lam = 0`` degenerates to a
    prior-only objective and is allowed for diagnostics.
    """

    m1: int
    m2: int
    sigma2: float
    K: int
    lam: float | None = None

    def __post_init__(self) -> None:
        if self.m1 < 1 or self.m2 < 1:
            raise ConfigError("matrix dimensions must be positive")
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ConfigError("sigma2 must be a positive finite real")
        if not (2 <= self.K <= min(self.m1, self.m2)):
            raise ConfigError(
                f"K must satisfy 2 <= K <= min(m1, m2) = {min(self.m1, self.m2)}, got {self.K}"
            )
        if self.lam is None:
            object.__setattr__(self, "lam", 1.0 / (4.0 * self.sigma2))
        elif self.lam < 0 or not np.isfinite(self.lam):
            raise ConfigError("lam must be a non-negative finite real")

    @property
    def theorem_lambda(self) -> float:
        return 1.0 / (4.0 * self.sigma2)

    def require_theorem_mode(self) -> None:
        """Bound evaluation needs lam <= 1/(4*sigma2)."""
        if self.lam > self.theorem_lambda * (1 + 1e-12):
            raise ConfigError(
                f"bound evaluation requires lam <= 1/(4*sigma2) = {self.theorem_lambda:g}, "
                f"got {self.lam:g}"
            )


def reconstruct(fac: Factorization) -> DenseMatrix:
    """Product U V^T of the factor pair; entrywise >= 0 by construction."""
    return DenseMatrix(fac.U.values @ fac.V.values.T)


def frobenius_sq(A, B) -> float:
    """Squared Frobenius distance between two same-shape matrices."""
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape != B.shape:
        raise ShapeError(f"shape mismatch: {A.shape} vs {B.shape}")
    d = A.values - B.values
    return float(np.dot(d.ravel(), d.ravel()))


def mse(M, Mhat) -> float:
    """Squared Frobenius distance divided by the number of entries."""
    M = as_matrix(M)
    return frobenius_sq(M, Mhat) / (M.rows * M.cols)


def effective_rank(fac: Factorization, tau: float) -> int:
    """Number of scales strictly above tau; ties count as shrunk."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return int(np.sum(fac.gamma > tau))


def random_init(Y, K: int, rng: np.random.Generator) -> Factorization:
    """Random starting point scaled to the data magnitude.

    Entries are i.i.d. uniform(0, sqrt(mean(max(Y, 0))/K)) so the initial
    reconstruction matches the scale of Y; all scales start at 1.
    """
    y = Y.values if isinstance(Y, DenseMatrix) else np.asarray(Y, dtype=np.float64)
    m1, m2 = y.shape
    hi = math.sqrt(max(float(np.mean(np.maximum(y, 0.0))), 1e-12) / K)
    U = rng.uniform(0.0, hi, size=(m1, K))
    V = rng.uniform(0.0, hi, size=(m2, K))
    return Factorization(U, V, np.ones(K))
