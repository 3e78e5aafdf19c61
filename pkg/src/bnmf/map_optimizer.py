"""MAP estimation by block coordinate descent.

Each outer cycle runs a projected-gradient pass over U, one over V, then a
closed-form mode update of the scales (conjugate pairings) or a guarded
one-dimensional search (heavy-tailed prior). Steps are chosen by
backtracking and only accepted on decrease, so the objective is
non-increasing across every block update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import (
    ConfigError,
    DenseMatrix,
    Factorization,
    ModelConfig,
    random_init,
)
from .priors import (
    ElementPrior,
    Exponential,
    HeavyTail,
    PriorSpec,
    TruncatedGaussian,
    log_prior,
    scale_law,
    scale_prior_log_density,
)

_MAX_HALVINGS = 60


@dataclass(frozen=True)
class MapConfig:
    max_outer: int = 200
    max_inner: int = 40
    step0: float = 1.0
    backtrack: float = 0.5
    tol_obj: float = 1e-9
    tol_grad: float = 1e-10
    gamma_floor: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("iteration limits must be positive")
        if not self.step0 > 0:
            raise ConfigError("step0 must be positive")
        if not 0 < self.backtrack < 1:
            raise ConfigError("backtrack must lie in (0, 1)")
        if not (self.tol_obj > 0 and self.tol_grad > 0):
            raise ConfigError("tolerances must be positive")
        if not self.gamma_floor > 0:
            raise ConfigError("gamma_floor must be positive")


@dataclass(frozen=True)
class MapStep:
    outer_iter: int
    objective: float
    drop_u: float
    drop_v: float
    drop_gamma: float
    gamma: np.ndarray


@dataclass
class MapTrace:
    """Per-outer-iteration objectives, block improvements, and scale snapshots."""

    records: list[MapStep] = field(default_factory=list)

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def write_csv(self, path) -> None:
        if not self.records:
            raise ConfigError("empty trace")
        k = self.records[0].gamma.shape[0]
        header = "outer_iter,objective," + ",".join(f"gamma_{i + 1}" for i in range(k))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for r in self.records:
                gams = ",".join(repr(float(g)) for g in r.gamma)
                fh.write(f"{r.outer_iter},{r.objective!r},{gams}\n")


def _values(x) -> np.ndarray:
    if isinstance(x, DenseMatrix):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _entry_neg_log(p: ElementPrior, X: np.ndarray, gamma: np.ndarray) -> float:
    """-sum_{il} log g_{gamma_l}(X_il), with closed forms on the hot paths."""
    m = X.shape[0]
    log_scales = m * float(np.sum(np.log(gamma)))
    if isinstance(p, Exponential):
        return float(X.sum(axis=0) @ (1.0 / gamma)) + log_scales
    if isinstance(p, TruncatedGaussian):
        lin = float(X.sum(axis=0) @ (1.0 / gamma))
        quad = float((X * X).sum(axis=0) @ (1.0 / (gamma * gamma)))
        return quad - 2.0 * p.a * lin + m * gamma.shape[0] * p.log_norm + log_scales
    if isinstance(p, HeavyTail):
        tails = float(np.sum(np.log1p(X / gamma)))
        return p.zeta * tails - m * gamma.shape[0] * math.log(p.zeta - 1.0) + log_scales
    return -float(np.sum(p.log_density(X / gamma))) + log_scales


def map_objective(Y, fac: Factorization, config: ModelConfig, priors: PriorSpec) -> float:
    """lam * ||Y - U V^T||_F^2 minus the joint log prior."""
    y = _values(Y)
    d = y - fac.U.values @ fac.V.values.T
    fit = float(np.dot(d.ravel(), d.ravel()))
    return config.lam * fit - log_prior(fac, priors.element, priors.hyper)


def _prior_grad(p: ElementPrior, X: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Gradient of -sum log g_{gamma_l}(X_il) with respect to X."""
    if isinstance(p, Exponential):
        return np.broadcast_to(1.0 / gamma, X.shape).copy()
    if isinstance(p, TruncatedGaussian):
        return -2.0 * p.a / gamma + 2.0 * X / (gamma * gamma)
    if isinstance(p, HeavyTail):
        return p.zeta / (gamma + X)
    raise ConfigError(f"unknown element prior {p!r}")


def grad_U(Y, U, V, gamma, lam: float, p: ElementPrior) -> np.ndarray:
    """Gradient of the U-block objective lam*||Y - U V^T||_F^2 + entry terms."""
    y = _values(Y)
    u = _values(U)
    v = _values(V)
    gamma = np.asarray(gamma, dtype=np.float64)
    return -2.0 * lam * (y - u @ v.T) @ v + _prior_grad(p, u, gamma)


def grad_V(Y, U, V, gamma, lam: float, p: ElementPrior) -> np.ndarray:
    """Gradient of the V-block objective; the mirrored call to grad_U."""
    return grad_U(_values(Y).T, V, U, gamma, lam, p)


def projected_gradient_block(objective, gradient, x0, cfg: MapConfig) -> np.ndarray:
    """Minimize a block objective over the non-negative orthant.

    Iterates x <- max(x - step * grad(x), 0) with a backtracking step that
    is only accepted on strict decrease; the accepted step warm-starts the
    next iteration. Worst case returns x0 unchanged.
    """
    x = np.array(_values(x0), dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("starting point must be entrywise non-negative")
    f = float(objective(x))
    step = cfg.step0
    for _ in range(cfg.max_inner):
        g = gradient(x)
        step = min(step * 2.0, cfg.step0)
        cand, fc, accepted = x, f, False
        for _ in range(_MAX_HALVINGS):
            cand = np.maximum(x - step * g, 0.0)
            if np.array_equal(cand, x):
                step *= cfg.backtrack
                continue
            fc = float(objective(cand))
            if fc < f:
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            break
        move = float(np.max(np.abs(cand - x)))
        rel_drop = (f - fc) / (1.0 + abs(f))
        x, f = cand, fc
        if rel_drop < cfg.tol_obj or move < cfg.tol_grad * (1.0 + float(np.max(np.abs(x)))):
            break
    return x


def ig_mode(mu: float, nu: float) -> float:
    """Mode of the inverse Gaussian: mu*(sqrt(1 + 9mu^2/(4nu^2)) - 3mu/(2nu))."""
    r = mu / nu
    return mu * (math.sqrt(1.0 + 2.25 * r * r) - 1.5 * r)


def update_gamma_mode(h, p: ElementPrior, U, V, gamma_floor: float = 1e-8) -> np.ndarray:
    """Closed-form conditional modes of the scales, floored at gamma_floor.

    Conjugate pairings only: exponential entries update gamma directly,
    truncated-Gaussian entries (a = 0) update gamma^2 and take the root.
    """
    u = _values(U)
    v = _values(V)
    m1, m2 = u.shape[0], v.shape[0]
    family, shape, rate, squared = scale_law(h, p, m1, m2)
    if isinstance(p, Exponential):
        stats = u.sum(axis=0) + v.sum(axis=0)
        count = float(m1 + m2)
    elif isinstance(p, TruncatedGaussian):
        if p.a != 0.0:
            raise ConfigError("truncated-Gaussian scale mode is only conjugate for a = 0")
        stats = (u * u).sum(axis=0) + (v * v).sum(axis=0)
        count = 0.5 * (m1 + m2)
    else:
        raise ConfigError(f"no closed-form scale mode for element prior {p.name()!r}")
    if family == "invgamma":
        x = (rate + stats) / (shape + count + 1.0)
    else:
        x = np.array([ig_mode(math.sqrt(s / rate), 2.0 * s) if s > 0 else 0.0
                      for s in stats])
    if squared:
        x = np.sqrt(x)
    return np.maximum(x, gamma_floor)


def _gamma_search_update(h, p: ElementPrior, U: np.ndarray, V: np.ndarray,
                         gamma: np.ndarray, floor: float) -> np.ndarray:
    """Per-column 1-d minimization for priors without a conjugate mode.

    Brent search over log-gamma, accepted only when it improves the
    column's conditional, which keeps the outer descent monotone.
    """
    m1, m2 = U.shape[0], V.shape[0]
    out = gamma.copy()
    for ell in range(gamma.shape[0]):
        cu, cv = U[:, ell], V[:, ell]

        def neg_cond(log_g):
            g = math.exp(log_g)
            val = float(np.sum(p.log_density(cu / g)) + np.sum(p.log_density(cv / g)))
            val -= (m1 + m2) * log_g
            val += float(scale_prior_log_density(h, p, m1, m2, g))
            return -val

        cur = max(out[ell], floor)
        hi = 1e4 * max(1.0, cur, float(np.max(cu, initial=0.0)), float(np.max(cv, initial=0.0)))
        res = optimize.minimize_scalar(
            neg_cond, bounds=(math.log(floor), math.log(hi)), method="bounded",
            options={"xatol": 1e-12},
        )
        if res.fun < neg_cond(math.log(cur)):
            out[ell] = max(math.exp(res.x), floor)
    return out


def run_map(Y, config: ModelConfig, mc: MapConfig, priors: PriorSpec,
            init: Factorization | None = None) -> tuple[Factorization, MapTrace]:
    """Block coordinate descent to the MAP factorization."""
    y = _values(Y)
    if y.shape != (config.m1, config.m2):
        raise ConfigError(f"Y has shape {y.shape}, config says {(config.m1, config.m2)}")
    p, h = priors.element, priors.hyper
    lam = config.lam
    rng = np.random.default_rng(mc.seed)
    fac0 = init if init is not None else random_init(y, config.K, rng)
    U = np.array(fac0.U.values)
    V = np.array(fac0.V.values)
    gamma = np.maximum(fac0.gamma, mc.gamma_floor)
    conjugate_gamma = isinstance(p, Exponential) or (
        isinstance(p, TruncatedGaussian) and p.a == 0.0)

    def full_obj(u, v, g):
        d = y - u @ v.T
        fit = float(np.dot(d.ravel(), d.ravel()))
        m1, m2 = u.shape[0], v.shape[0]
        return (lam * fit + _entry_neg_log(p, u, g) + _entry_neg_log(p, v, g)
                - float(np.sum(scale_prior_log_density(h, p, m1, m2, g))))

    trace = MapTrace()
    obj = full_obj(U, V, gamma)
    for outer in range(1, mc.max_outer + 1):
        obj_start = obj

        U = projected_gradient_block(
            lambda u: lam * float(np.sum((y - u @ V.T) ** 2)) + _entry_neg_log(p, u, gamma),
            lambda u: grad_U(y, u, V, gamma, lam, p),
            U, mc,
        )
        obj_u = full_obj(U, V, gamma)

        V = projected_gradient_block(
            lambda v: lam * float(np.sum((y - U @ v.T) ** 2)) + _entry_neg_log(p, v, gamma),
            lambda v: grad_V(y, U, v, gamma, lam, p),
            V, mc,
        )
        obj_v = full_obj(U, V, gamma)

        if conjugate_gamma:
            gamma = update_gamma_mode(h, p, U, V, gamma_floor=mc.gamma_floor)
        else:
            gamma = _gamma_search_update(h, p, U, V, gamma, mc.gamma_floor)
        obj = full_obj(U, V, gamma)

        trace.records.append(MapStep(
            outer_iter=outer, objective=obj,
            drop_u=obj_start - obj_u, drop_v=obj_u - obj_v, drop_gamma=obj_v - obj,
            gamma=gamma.copy(),
        ))
        if abs(obj_start - obj) < mc.tol_obj * (1.0 + abs(obj_start)):
            break
    return Factorization(U, V, gamma), trace
