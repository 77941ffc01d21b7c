"""Empirical RDEU risk, tail statistics, 1-D Wasserstein distance and Gaussian KDE.

Risk values follow the "lower is better" convention: R[Z] = -int U(F^-1(s)) g(s) ds.
The CVaR figures usually quoted for P&L (negative numbers) are the tail mean
of wealth, i.e. ``-R``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateSampleWarning, DomainError, ParameterError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DistortionSpec:
    """Piecewise-constant U-shaped distortion, or the uniform one.

    ``p_weight`` puts weight on the lower ``alpha`` tail and ``1 - p_weight``
    on the upper tail above ``beta``. ``p_weight = 1`` is CVaR at ``alpha``.
    """

    alpha: float = 0.2
    beta: float = 0.9
    p_weight: float = 1.0
    uniform: bool = False

    def __post_init__(self):
        if self.uniform:
            return
        if not (0 < self.alpha <= self.beta < 1):
            raise ParameterError("need 0 < alpha <= beta < 1")
        if not (0 <= self.p_weight <= 1):
            raise ParameterError("p_weight must lie in [0, 1]")
        if not self.eta > 0:
            raise ParameterError("normalising constant eta must be positive")

    @classmethod
    def cvar(cls, alpha: float) -> "DistortionSpec":
        return cls(alpha=alpha, beta=alpha, p_weight=1.0)

    @classmethod
    def alpha_beta(cls, alpha: float, beta: float, p_weight: float) -> "DistortionSpec":
        return cls(alpha=alpha, beta=beta, p_weight=p_weight)

    @classmethod
    def mean(cls) -> "DistortionSpec":
        return cls(uniform=True)

    @property
    def eta(self) -> float:
        if self.uniform:
            return 1.0
        return self.p_weight * self.alpha + (1 - self.p_weight) * (1 - self.beta)

    def gamma(self, u):
        u = np.asarray(u, dtype=float)
        if self.uniform:
            return np.ones_like(u)
        lower = self.p_weight * (u <= self.alpha)
        upper = (1 - self.p_weight) * (u >= self.beta)
        return (lower + upper) / self.eta

    def cell_weights(self, n: int) -> np.ndarray:
        """Exact integral of gamma over each quantile cell [(i-1)/n, i/n]."""
        if self.uniform:
            return np.full(n, 1.0 / n)
        edges = np.arange(n + 1) / n
        lo, hi = edges[:-1], edges[1:]
        lower = np.clip(np.minimum(hi, self.alpha) - lo, 0.0, None)
        upper = np.clip(hi - np.maximum(lo, self.beta), 0.0, None)
        return (self.p_weight * lower + (1 - self.p_weight) * upper) / self.eta


@dataclass(frozen=True)
class UtilitySpec:
    kind: str = "identity"

    def __post_init__(self):
        if self.kind != "identity":
            raise ParameterError(f"unsupported utility {self.kind!r}")

    def __call__(self, x):
        return np.asarray(x, dtype=float)

    def derivative(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    @property
    def translation_invariant(self) -> bool:
        return self.kind == "identity"


IDENTITY = UtilitySpec()


def _samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("empty sample")
    return x


def rdeu_empirical(samples, gamma: DistortionSpec, utility: UtilitySpec = IDENTITY) -> float:
    x = np.sort(_samples(samples))
    return -float(np.dot(utility(x), gamma.cell_weights(x.size)))


def cvar_empirical(samples, alpha: float) -> float:
    return rdeu_empirical(samples, DistortionSpec.cvar(alpha))


def _tail_count(frac: float, n: int) -> int:
    # guards against (1 - 0.9) * 10 == 0.99999...
    return int(math.floor(frac * n + 1e-9))


def tail_expectations(samples, alpha: float, beta: float) -> tuple[float, float]:
    """Unconditional lower/upper tail expectations E[X 1(F<alpha)], E[X 1(F>beta)]."""
    x = np.sort(_samples(samples))
    n = x.size
    k_lo, k_hi = _tail_count(alpha, n), _tail_count(1 - beta, n)
    if k_lo == 0:
        raise DomainError("alpha * N < 1: lower tail is empty")
    lte = float(x[:k_lo].sum() / n)
    ute = float(x[n - k_hi:].sum() / n) if k_hi else 0.0
    return lte, ute


def alpha_beta_from_tails(lte: float, ute: float, gamma: DistortionSpec) -> float:
    """R = -(p LTE + (1-p) UTE) / eta."""
    return -(gamma.p_weight * lte + (1 - gamma.p_weight) * ute) / gamma.eta


def wasserstein_p(a, b, order: float = 1.0) -> float:
    a, b = np.sort(_samples(a)), np.sort(_samples(b))
    if a.size != b.size:
        raise DomainError("Wasserstein distance needs equal sample counts")
    if order < 1:
        raise ParameterError("order must be >= 1")
    return float(np.mean(np.abs(a - b) ** order) ** (1.0 / order))


def silverman_half_bandwidth(samples) -> float:
    """0.53 * sd * N^(-1/5); floored (with a warning) for constant samples."""
    x = _samples(samples)
    if x.size < 2:
        raise DomainError("bandwidth needs at least two samples")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        warnings.warn("constant sample; bandwidth floored", DegenerateSampleWarning,
                      stacklevel=2)
        return 1e-8 * (1.0 + abs(float(np.mean(x))))
    return 0.53 * sd * x.size ** (-0.2)


def _check_h(h):
    if not h > 0:
        raise ParameterError("bandwidth must be positive")


def kde_cdf(x, samples, h: float):
    _check_h(h)
    s = _samples(samples)
    x = np.asarray(x, dtype=float)
    out = ndtr((x.reshape(-1, 1) - s) / h).mean(axis=1).reshape(x.shape)
    return out[()] if out.ndim == 0 else out


def kde_pdf(x, samples, h: float):
    _check_h(h)
    s = _samples(samples)
    x = np.asarray(x, dtype=float)
    z = (x.reshape(-1, 1) - s) / h
    out = (np.exp(-0.5 * z * z).sum(axis=1) / (s.size * h * _SQRT_2PI)).reshape(x.shape)
    return out[()] if out.ndim == 0 else out
