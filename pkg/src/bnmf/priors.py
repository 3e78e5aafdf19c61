"""Element priors, scale hyperpriors, and the constants the bound needs.

The element prior f is a density on [0, inf) for factor entries; entries of
column l are drawn from the rescaled density g_gamma(x) = f(x/gamma)/gamma.
Scales follow a hyperprior h. For the exponential and heavy-tailed element
priors h is a density for gamma itself; for the truncated-Gaussian prior the
conjugate construction places h on gamma^2 instead, and every consumer here
(joint log prior, Gibbs conditionals, mode updates) follows that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import mpmath
import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .core import ConfigError, Factorization, ModelConfig


class ConstantsUnavailableError(ValueError):
    """Raised when a prior has no finite second moment, so the bound refuses."""


# ---------------------------------------------------------------------------
# Element priors
# ---------------------------------------------------------------------------


class ElementPrior:
    """Density on [0, inf) for a single factor entry."""

    def log_density(self, x):
        raise NotImplementedError

    def name(self) -> str:
        raise NotImplementedError


def _check_nonneg(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("element priors are supported on x >= 0 only")
    return x


@dataclass(frozen=True)
class Exponential(ElementPrior):
    """f(x) = exp(-x)."""

    def log_density(self, x):
        return -_check_nonneg(x)

    def name(self) -> str:
        return "exponential"


@dataclass(frozen=True)
class TruncatedGaussian(ElementPrior):
    """f(x) proportional to exp(2*a*x - x^2) on [0, inf)."""

    a: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.a):
            raise ValueError("location parameter a must be finite")

    @cached_property
    def log_norm(self) -> float:
        # Normalizer by adaptive quadrature (relative tolerance 1e-10).
        # 2ax - x^2 peaks at m = max(a, 0) on the support with value m^2;
        # factoring exp(m^2) out keeps the integrand in [0, 1].
        m = max(self.a, 0.0)
        val, _ = integrate.quad(
            lambda x: math.exp(2.0 * self.a * x - x * x - m * m),
            0.0,
            np.inf,
            epsrel=1e-10,
        )
        return m * m + math.log(val)

    def log_density(self, x):
        x = _check_nonneg(x)
        return 2.0 * self.a * x - x * x - self.log_norm

    def name(self) -> str:
        return f"trunc-gauss:a={self.a:g}"


@dataclass(frozen=True)
class HeavyTail(ElementPrior):
    """f(x) = (zeta - 1) * (1 + x)^(-zeta), zeta > 1."""

    zeta: float

    def __post_init__(self) -> None:
        if not self.zeta > 1:
            raise ValueError("heavy-tail prior needs zeta > 1 to be integrable")

    def log_density(self, x):
        x = _check_nonneg(x)
        return math.log(self.zeta - 1.0) - self.zeta * np.log1p(x)

    def name(self) -> str:
        return f"heavy-tail:zeta={self.zeta:g}"


def element_log_density(p: ElementPrior, x):
    """log f(x), normalizing constant included."""
    return p.log_density(x)


def scaled_log_density(p: ElementPrior, alpha_scale: float, x):
    """log of f(x/alpha)/alpha, the entry density at scale alpha."""
    if not alpha_scale > 0:
        raise ValueError("scale must be strictly positive")
    return p.log_density(np.asarray(x, dtype=np.float64) / alpha_scale) - math.log(alpha_scale)


# ---------------------------------------------------------------------------
# Scale hyperpriors
# ---------------------------------------------------------------------------


class ScaleHyperprior:
    def name(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class InverseGamma(ScaleHyperprior):
    """Inverse gamma IG(a, b): h(x) = b^a/Gamma(a) * x^(-a-1) * exp(-b/x)."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise ValueError("inverse-gamma parameters must be strictly positive")

    def name(self) -> str:
        return f"inv-gamma:a={self.a:g},b={self.b:g}"


@dataclass(frozen=True)
class GammaShape(ScaleHyperprior):
    """Gamma hyperprior with shape tied to the matrix dimensions.

    Binds to Gamma(m1 + m2 - 1/2, b) on gamma for the exponential pairing
    and to Gamma((m1 + m2 - 1)/2, b) on gamma^2 for the truncated-Gaussian
    pairing; only the rate b is free.
    """

    b: float

    def __post_init__(self) -> None:
        if not self.b > 0:
            raise ValueError("gamma hyperprior rate b must be strictly positive")

    def name(self) -> str:
        return f"gamma:b={self.b:g}"


def _invgamma_logpdf(x, a: float, b: float):
    x = np.asarray(x, dtype=np.float64)
    return a * math.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x


def _gamma_logpdf(x, shape: float, rate: float):
    x = np.asarray(x, dtype=np.float64)
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def hyper_log_density(h: ScaleHyperprior, m1: int, m2: int, x):
    """Log density of the hyperprior on its own positive variable."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("hyperprior densities are supported on x > 0 only")
    if isinstance(h, InverseGamma):
        return _invgamma_logpdf(x, h.a, h.b)
    if isinstance(h, GammaShape):
        return _gamma_logpdf(x, m1 + m2 - 0.5, h.b)
    raise ConfigError(f"unknown hyperprior {h!r}")


def scale_on_squared(p: ElementPrior) -> bool:
    """Whether the hyperprior is placed on gamma^2 for this element prior."""
    return isinstance(p, TruncatedGaussian)


def scale_law(h: ScaleHyperprior, p: ElementPrior, m1: int, m2: int):
    """Bound distribution of the scale variable: (family, shape, rate, on_squared)."""
    squared = scale_on_squared(p)
    if isinstance(h, InverseGamma):
        return "invgamma", h.a, h.b, squared
    if isinstance(h, GammaShape):
        shape = (m1 + m2 - 1.0) / 2.0 if squared else m1 + m2 - 0.5
        return "gamma", shape, h.b, squared
    raise ConfigError(f"unknown hyperprior {h!r}")


def scale_prior_log_density(h: ScaleHyperprior, p: ElementPrior, m1: int, m2: int, gamma):
    """Per-scale log prior term under the pairing convention.

    Identity pairing evaluates h at gamma; the squared pairing evaluates
    the bound density at gamma^2 (no Jacobian: the model parameter is
    gamma^2 there and gamma is just its positive root).
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma <= 0):
        raise ValueError("scales must be strictly positive")
    family, shape, rate, squared = scale_law(h, p, m1, m2)
    x = gamma * gamma if squared else gamma
    if family == "invgamma":
        return _invgamma_logpdf(x, shape, rate)
    return _gamma_logpdf(x, shape, rate)


# ---------------------------------------------------------------------------
# Prior pack and the joint log prior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorSpec:
    """Element prior plus scale hyperprior, the unit every estimator takes."""

    element: ElementPrior
    hyper: ScaleHyperprior

    def constants(self, config: ModelConfig) -> "PriorConstants":
        return prior_constants(self.element, self.hyper, config)


def log_prior(fac: Factorization, p: ElementPrior, h: ScaleHyperprior) -> float:
    """Joint log prior of (U, V, gamma): entry terms plus scale terms."""
    U = fac.U.values
    V = fac.V.values
    gamma = fac.gamma
    m1, m2 = fac.m1, fac.m2
    total = float(np.sum(p.log_density(U / gamma)) - m1 * np.sum(np.log(gamma)))
    total += float(np.sum(p.log_density(V / gamma)) - m2 * np.sum(np.log(gamma)))
    total += float(np.sum(scale_prior_log_density(h, p, m1, m2, gamma)))
    return total


# ---------------------------------------------------------------------------
# Constants for the bound evaluator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorConstants:
    """Second moment, minorization pair, and small-scale mass constants.

    ``log_alpha``, ``log_c_f`` and ``log_f_tilde`` are the authoritative
    quantities for bound evaluation; ``alpha``, ``c_f`` and ``f_tilde`` are
    their plain-density counterparts and can underflow to 0.0 at extreme
    parameter settings.
    """

    s_f: float
    c_f: float
    alpha: float
    beta: float
    f_tilde: Callable[[np.ndarray], np.ndarray]
    log_f_tilde: Callable[[np.ndarray], np.ndarray]
    log_alpha: float
    log_c_f: float


_BETA_CANDIDATES = tuple(range(11))
_EPS_GRID_SIZE = 100


def condition2_eps_max(s_f: float, sigma2: float, K: int) -> float:
    """Upper end of the small-scale range the mass condition must cover."""
    return sigma2 / (math.sqrt(2.0) * s_f * K * K)


def _scale_log_cdf(h: ScaleHyperprior, p: ElementPrior, m1: int, m2: int, eps: float):
    """log P(gamma <= eps) under the bound scale law, exact via mpmath."""
    family, shape, rate, squared = scale_law(h, p, m1, m2)
    t = mpmath.mpf(eps) ** 2 if squared else mpmath.mpf(eps)
    if family == "invgamma":
        # P(X <= t) for X ~ IG(shape, rate) is the upper tail of Gamma(shape, rate) at rate/t.
        val = mpmath.gammainc(shape, rate / t, mpmath.inf, regularized=True)
    else:
        val = mpmath.gammainc(shape, 0, rate * t, regularized=True)
    if val <= 0:
        raise ArithmeticError("scale hyperprior puts no mass near zero")
    return mpmath.log(val)


def fit_small_scale_mass(
    h: ScaleHyperprior, p: ElementPrior, m1: int, m2: int, eps_max: float
) -> tuple[float, float]:
    """Largest (log alpha, beta) with P(gamma <= eps) >= alpha * eps^beta on (0, eps_max].

    beta is searched over {0, 1, ..., 10}; the inequality is enforced on a
    100-point grid over the range. Evaluation runs in extended precision
    because these tail masses underflow doubles at realistic settings.
    """
    with mpmath.workdps(50):
        grid = [eps_max * k / _EPS_GRID_SIZE for k in range(1, _EPS_GRID_SIZE + 1)]
        log_cdf = [_scale_log_cdf(h, p, m1, m2, e) for e in grid]
        log_eps = [mpmath.log(mpmath.mpf(e)) for e in grid]
        cap = math.log1p(-1e-12)
        best_log_alpha, best_beta = None, None
        for beta in _BETA_CANDIDATES:
            la = min(lc - beta * le for lc, le in zip(log_cdf, log_eps))
            la = min(float(la) - 1e-9, cap)  # safety margin; alpha stays < 1
            if best_log_alpha is None or la > best_log_alpha:
                best_log_alpha, best_beta = la, beta
    return best_log_alpha, float(best_beta)


def _quad_density(log_density, lo: float = 0.0) -> float:
    val, _ = integrate.quad(lambda x: math.exp(log_density(x)), lo, np.inf, epsrel=1e-10)
    return val


_CF_GRID = np.linspace(0.0, 100.0, 1000)


def _minorant_for(p: ElementPrior):
    """Non-increasing density f_tilde with f >= C_f * f_tilde, as callables.

    Exponential and heavy-tail densities are already non-increasing, so
    f_tilde = f and C_f = 1. The truncated Gaussian is shifted past its
    mode and renormalized; C_f comes from a grid search of f/f_tilde over
    [0, 100].
    """
    if isinstance(p, (Exponential, HeavyTail)):
        log_f_tilde = p.log_density
        return log_f_tilde, 0.0
    if isinstance(p, TruncatedGaussian):
        shift = max(p.a, 0.0)
        z_shift = _quad_density(lambda x: p.log_density(x + shift))
        log_z = math.log(z_shift)

        def log_f_tilde(x, _s=shift, _lz=log_z, _p=p):
            return _p.log_density(np.asarray(x, dtype=np.float64) + _s) - _lz

        log_ratio = p.log_density(_CF_GRID) - log_f_tilde(_CF_GRID)
        log_c_f = float(np.min(log_ratio)) - 1e-12
        return log_f_tilde, log_c_f
    raise ConfigError(f"unknown element prior {p!r}")


def _second_moment(p: ElementPrior) -> float:
    if isinstance(p, Exponential):
        return 2.0
    if isinstance(p, HeavyTail):
        if p.zeta <= 3:
            raise ConstantsUnavailableError(
                f"heavy-tail prior with zeta = {p.zeta:g} has a divergent second moment; "
                "bound evaluation is unavailable"
            )
        val, _ = integrate.quad(
            lambda x: x * x * math.exp(p.log_density(x)), 0.0, np.inf, epsrel=1e-10
        )
        return val
    if isinstance(p, TruncatedGaussian):
        val, _ = integrate.quad(
            lambda x: x * x * math.exp(p.log_density(x)), 0.0, np.inf, epsrel=1e-10
        )
        return val
    raise ConfigError(f"unknown element prior {p!r}")


def prior_constants(p: ElementPrior, h: ScaleHyperprior, config: ModelConfig) -> PriorConstants:
    """Assemble (S_f, C_f, f_tilde, alpha, beta) for the bound evaluator."""
    s_f = _second_moment(p)
    log_f_tilde, log_c_f = _minorant_for(p)
    eps_max = condition2_eps_max(s_f, config.sigma2, config.K)
    log_alpha, beta = fit_small_scale_mass(h, p, config.m1, config.m2, eps_max)

    def f_tilde(x, _lft=log_f_tilde):
        return np.exp(_lft(x))

    return PriorConstants(
        s_f=s_f,
        c_f=math.exp(log_c_f),
        alpha=math.exp(log_alpha) if log_alpha > -745.0 else 0.0,
        beta=beta,
        f_tilde=f_tilde,
        log_f_tilde=log_f_tilde,
        log_alpha=log_alpha,
        log_c_f=log_c_f,
    )


# ---------------------------------------------------------------------------
# String forms used by CLI configs and reports
# ---------------------------------------------------------------------------


def _parse_kv(body: str, spec_name: str, keys: tuple[str, ...]) -> dict[str, float]:
    out = {}
    for part in (s for s in body.split(",") if s.strip()):
        if "=" not in part:
            raise ValueError(f"{spec_name}: expected key=value, got {part!r}")
        key, _, raw = part.partition("=")
        key = key.strip()
        if key not in keys:
            raise ValueError(f"{spec_name}: unknown parameter {key!r} (expected {keys})")
        try:
            out[key] = float(raw)
        except ValueError:
            raise ValueError(f"{spec_name}: {key} must be a real number, got {raw!r}") from None
    missing = [k for k in keys if k not in out]
    if missing:
        raise ValueError(f"{spec_name}: missing parameter(s) {missing}")
    return out


def element_prior_from_string(text: str) -> ElementPrior:
    """Parse "exponential", "trunc-gauss:a=<real>" or "heavy-tail:zeta=<real>"."""
    kind, _, body = text.strip().partition(":")
    if kind == "exponential":
        if body:
            raise ValueError("exponential prior takes no parameters")
        return Exponential()
    if kind == "trunc-gauss":
        return TruncatedGaussian(**_parse_kv(body, "trunc-gauss", ("a",)))
    if kind == "heavy-tail":
        return HeavyTail(**_parse_kv(body, "heavy-tail", ("zeta",)))
    raise ValueError(
        f"unknown element prior {text!r}; expected exponential, "
        "trunc-gauss:a=<real> or heavy-tail:zeta=<real>"
    )


def hyperprior_from_string(text: str) -> ScaleHyperprior:
    """Parse "inv-gamma:a=<real>,b=<real>" or "gamma:b=<real>"."""
    kind, _, body = text.strip().partition(":")
    if kind == "inv-gamma":
        return InverseGamma(**_parse_kv(body, "inv-gamma", ("a", "b")))
    if kind == "gamma":
        return GammaShape(**_parse_kv(body, "gamma", ("b",)))
    raise ValueError(
        f"unknown hyperprior {text!r}; expected inv-gamma:a=<real>,b=<real> or gamma:b=<real>"
    )
