"""Numeric evaluation of the oracle-inequality right-hand side.

For a comparison pair (U0, V0) with all columns past r identically zero,
the risk bound splits into six groups: the approximation error, a
complexity term, two minorant tail sums, a small-scale mass term, and
residual constants. Every group is evaluated through logarithms of its
factors so that extreme prior constants (tiny alpha, vanishing minorant
values) degrade to +inf instead of overflowing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DenseMatrix, Factorization, ModelConfig, ShapeError, as_matrix
from .priors import PriorConstants


@dataclass(frozen=True)
class BoundQuery:
    """Comparison factorization (U0, V0) of rank r, optionally entry-bounded by L."""

    U0: DenseMatrix
    V0: DenseMatrix
    r: int
    L: float | None = None

    def __init__(self, U0, V0, r: int, L: float | None = None) -> None:
        U0 = as_matrix(U0)
        V0 = as_matrix(V0)
        if U0.cols != V0.cols:
            raise ShapeError(f"U0 has {U0.cols} columns, V0 has {V0.cols}")
        if not 1 <= r <= U0.cols:
            raise ValueError(f"r must lie in [1, {U0.cols}], got {r}")
        if np.any(U0.values < 0) or np.any(V0.values < 0):
            raise ValueError("comparison factors must be entrywise non-negative")
        if np.any(U0.values[:, r:] != 0) or np.any(V0.values[:, r:] != 0):
            raise ValueError("columns beyond r must be identically zero")
        if L is not None:
            if not L > 0:
                raise ValueError("L must be positive")
            if np.any(U0.values > L) or np.any(V0.values > L):
                raise ValueError("entries exceed the stated bound L")
        object.__setattr__(self, "U0", U0)
        object.__setattr__(self, "V0", V0)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "L", L)


def query_from_factorization(fac: Factorization, r: int, L: float | None = None) -> BoundQuery:
    """Keep the r largest-scale columns, zero the rest, and order them first."""
    order = np.argsort(-fac.gamma, kind="stable")
    U = fac.U.values[:, order].copy()
    V = fac.V.values[:, order].copy()
    U[:, r:] = 0.0
    V[:, r:] = 0.0
    return BoundQuery(U0=U, V0=V, r=r, L=L)


@dataclass(frozen=True)
class BoundBreakdown:
    """The six displayed summands; total is their sum."""

    approx_error: float
    complexity_term: float
    u_tail_term: float
    v_tail_term: float
    beta_term: float
    residual_terms: float
    total: float

    def to_json_dict(self) -> dict:
        def enc(x: float):
            return x if math.isfinite(x) else repr(x).replace("inf", "Infinity")

        return {
            "approx_error": enc(self.approx_error),
            "complexity_term": enc(self.complexity_term),
            "u_tail_term": enc(self.u_tail_term),
            "v_tail_term": enc(self.v_tail_term),
            "beta_term": enc(self.beta_term),
            "residual_terms": enc(self.residual_terms),
            "total": enc(self.total),
        }


def _assemble(approx, complexity, u_tail, v_tail, beta_term, residual) -> BoundBreakdown:
    parts = (approx, complexity, u_tail, v_tail, beta_term, residual)
    return BoundBreakdown(*parts, total=float(sum(parts)))


def theorem_bound(q: BoundQuery, M, config: ModelConfig,
                  pc: PriorConstants) -> BoundBreakdown:
    """Evaluate the oracle right-hand side at one comparison pair."""
    M = as_matrix(M)
    config.require_theorem_mode()
    if not math.isfinite(pc.s_f):
        raise ConfigError("prior constants are incomplete: infinite second moment")
    m1, m2 = M.shape
    if q.U0.rows != m1 or q.V0.rows != m2:
        raise ShapeError("comparison factors do not match the target matrix shape")
    if q.U0.cols > config.K:
        raise ConfigError(f"comparison pair has {q.U0.cols} columns but K = {config.K}")
    r, K = q.r, config.K
    sigma2 = config.sigma2
    sigma = math.sqrt(sigma2)
    root_sigma = math.sqrt(sigma)
    mmax = max(m1, m2)

    U0 = q.U0.values
    V0 = q.V0.values
    diff = U0 @ V0.T - M.values
    approx = float(np.dot(diff.ravel(), diff.ravel()))

    norm_sum = float(np.linalg.norm(U0) + np.linalg.norm(V0) + math.sqrt(sigma * K * r))
    log_norm_sq = 2.0 * math.log(norm_sum)

    complexity = 8.0 * sigma2 * mmax * r * (
        0.5 * math.log(2.0 * mmax / r) + log_norm_sq - math.log(sigma) - pc.log_c_f
    )
    u_tail = -4.0 * sigma2 * float(np.sum(pc.log_f_tilde(U0[:, :r] + root_sigma)))
    v_tail = -4.0 * sigma2 * float(np.sum(pc.log_f_tilde(V0[:, :r] + root_sigma)))
    beta_term = 4.0 * sigma2 * pc.beta * K * (
        math.log(2.0 * pc.s_f) + 0.5 * math.log(m1 * m2) + log_norm_sq
        - math.log(r) - math.log(sigma)
    )
    residual = (8.0 * sigma2 * r
                + 4.0 * sigma2 * K * (-pc.log_alpha)
                + 4.0 * sigma2 * math.log(4.0))
    return _assemble(approx, complexity, u_tail, v_tail, beta_term, residual)


def corollary_bound(r: int, L: float, K: int, m1: int, m2: int,
                    config: ModelConfig, pc: PriorConstants) -> float:
    """Entry-bounded form of the remainder; the caller adds the approximation error."""
    config.require_theorem_mode()
    if not math.isfinite(pc.s_f):
        raise ConfigError("prior constants are incomplete: infinite second moment")
    if not (1 <= r <= K):
        raise ValueError(f"r must lie in [1, {K}], got {r}")
    if not L > 0:
        raise ValueError("L must be positive")
    sigma2 = config.sigma2
    sigma = math.sqrt(sigma2)
    root_sigma = math.sqrt(sigma)
    mmax = max(m1, m2)
    log_prod3 = 3.0 * math.log(m1 * m2)
    log_l2s = math.log(L * L + sigma)

    complexity = 8.0 * sigma2 * mmax * r * (
        math.log(2.0) + log_l2s + log_prod3 - math.log(sigma)
        - pc.log_c_f - float(pc.log_f_tilde(L + root_sigma))
    )
    beta_term = 4.0 * sigma2 * pc.beta * K * (
        math.log(2.0 * pc.s_f) + log_l2s + log_prod3 - math.log(sigma)
    )
    residual = (8.0 * sigma2 * r
                + 4.0 * sigma2 * K * (-pc.log_alpha)
                + 4.0 * sigma2 * math.log(4.0))
    return float(complexity + beta_term + residual)


def best_bound_over_grid(M, config: ModelConfig, pc: PriorConstants,
                         candidates: list[BoundQuery]) -> tuple[BoundBreakdown, int]:
    """Minimal bound total over a finite candidate set; ties keep the lowest index."""
    if not candidates:
        raise ConfigError("candidate list must be non-empty")
    best, best_idx = None, -1
    for idx, q in enumerate(candidates):
        bb = theorem_bound(q, M, config, pc)
        if best is None or bb.total < best.total:
            best, best_idx = bb, idx
    return best, best_idx
