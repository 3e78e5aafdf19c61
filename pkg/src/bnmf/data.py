"""Synthetic data generation and matrix file I/O.

Matrix files are CSV with a "rows,cols" header line followed by one line
per row; values are written with repr so every finite double round-trips
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConfigError, DenseMatrix, Factorization, as_matrix


@dataclass(frozen=True)
class SyntheticSpec:
    """Low-rank truth with additive noise: Y = U V^T + E."""

    m1: int
    m2: int
    r_true: int
    K: int
    entry_upper: float
    sigma2: float
    seed: int
    noise: str = "gaussian"

    def __post_init__(self) -> None:
        if not (1 <= self.r_true <= self.K <= min(self.m1, self.m2)):
            raise ConfigError("need 1 <= r_true <= K <= min(m1, m2)")
        if not self.entry_upper > 0:
            raise ConfigError("entry_upper must be positive")
        if self.sigma2 < 0:
            raise ConfigError("sigma2 must be non-negative")
        if self.noise not in ("gaussian", "uniform"):
            raise ConfigError(f"noise must be 'gaussian' or 'uniform', got {self.noise!r}")

    def as_dict(self) -> dict:
        return {
            "m1": self.m1, "m2": self.m2, "r_true": self.r_true, "K": self.K,
            "entry_upper": self.entry_upper, "sigma2": self.sigma2,
            "seed": self.seed, "noise": self.noise,
        }


# Scales assigned to the zero padding columns of the generated truth; far
# below any realistic threshold so the truth reports effective rank r_true.
_PAD_GAMMA = 1e-12


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator | None = None,
                       ) -> tuple[DenseMatrix, DenseMatrix, Factorization]:
    """Draw (Y, M, truth) with uniform factors and centered noise.

    Uniform noise is drawn on [-w, w] with w = sqrt(2*sigma2), matching
    the variance-bound convention sigma2 = w^2/2.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    U = rng.uniform(0.0, spec.entry_upper, size=(spec.m1, spec.r_true))
    V = rng.uniform(0.0, spec.entry_upper, size=(spec.m2, spec.r_true))
    M = U @ V.T
    if spec.noise == "gaussian":
        E = rng.normal(0.0, math.sqrt(spec.sigma2), size=(spec.m1, spec.m2))
    else:
        w = math.sqrt(2.0 * spec.sigma2)
        E = rng.uniform(-w, w, size=(spec.m1, spec.m2))
    Y = M + E
    pad = spec.K - spec.r_true
    U_full = np.hstack([U, np.zeros((spec.m1, pad))])
    V_full = np.hstack([V, np.zeros((spec.m2, pad))])
    gamma = np.concatenate([np.ones(spec.r_true), np.full(pad, _PAD_GAMMA)])
    return DenseMatrix(Y), DenseMatrix(M), Factorization(U_full, V_full, gamma)


class MatrixParseError(ValueError):
    """Malformed matrix file; carries the offending line number."""

    def __init__(self, path, line_no: int, message: str) -> None:
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def save_matrix(path, M) -> None:
    M = as_matrix(M)
    lines = [f"{M.rows},{M.cols}"]
    for row in M.values:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_matrix(path) -> DenseMatrix:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MatrixParseError(path, 1, "empty file")
    header = lines[0].split(",")
    if len(header) != 2:
        raise MatrixParseError(path, 1, f"header must be 'rows,cols', got {lines[0]!r}")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError:
        raise MatrixParseError(path, 1, f"header must hold two integers, got {lines[0]!r}") from None
    if rows < 1 or cols < 1:
        raise MatrixParseError(path, 1, "matrix dimensions must be positive")
    if len(lines) - 1 != rows:
        raise MatrixParseError(path, len(lines), f"expected {rows} data rows, found {len(lines) - 1}")
    values = np.empty((rows, cols))
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != cols:
            raise MatrixParseError(path, i, f"expected {cols} values, found {len(parts)}")
        try:
            row = [float(tok) for tok in parts]
        except ValueError:
            raise MatrixParseError(path, i, f"non-numeric value in row: {line!r}") from None
        if not all(math.isfinite(v) for v in row):
            raise ValueError(f"{path}:{i}: non-finite value rejected")
        values[i - 2] = row
    return DenseMatrix(values)
