"""Down-barrier call payoffs and zero-rate Black-Scholes benchmarks."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateSampleWarning, DomainError, ParameterError
from .market_sim import PathBatch, running_minimum

KINDS = ("knock_in", "knock_out")


@dataclass(frozen=True)
class BarrierOptionSpec:
    kind: str = "knock_in"
    strike: float = 10.0
    barrier: float = 8.5
    maturity: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not (self.barrier > 0 and self.strike > 0 and self.maturity > 0):
            raise ParameterError("strike, barrier and maturity must be positive")


def breached(path_min, barrier):
    # a path that only touches the barrier counts as breached
    return np.asarray(path_min) <= barrier


def payoff(spec: BarrierOptionSpec, terminal_price, path_min):
    call = np.maximum(np.asarray(terminal_price, dtype=float) - spec.strike, 0.0)
    hit = breached(path_min, spec.barrier)
    return np.where(hit, call, 0.0) if spec.kind == "knock_in" else np.where(hit, 0.0, call)


def _d_plus_minus(S, K, sigma, tau):
    vol = sigma * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = (np.log(S / K) + 0.5 * vol**2) / vol
    return dp, dp - vol


def bs_call_price(S, K, sigma, tau):
    S, K, sigma, tau = np.broadcast_arrays(*map(lambda a: np.asarray(a, dtype=float),
                                                (S, K, sigma, tau)))
    intrinsic = np.maximum(S - K, 0.0)
    live = (sigma > 0) & (tau > 0)
    dp, dm = _d_plus_minus(S, K, np.where(live, sigma, 1.0), np.where(live, tau, 1.0))
    out = np.where(live, S * ndtr(dp) - K * ndtr(dm), intrinsic)
    return out[()] if out.ndim == 0 else out


def bs_call_delta(S, K, sigma, tau):
    S, K, sigma, tau = np.broadcast_arrays(*map(lambda a: np.asarray(a, dtype=float),
                                                (S, K, sigma, tau)))
    live = (sigma > 0) & (tau > 0)
    dp, _ = _d_plus_minus(S, K, np.where(live, sigma, 1.0), np.where(live, tau, 1.0))
    out = np.where(live, ndtr(dp), (S > K).astype(float))
    return out[()] if out.ndim == 0 else out


def _check_pre_breach(S, barrier, is_breached):
    if np.any(~is_breached & (S <= barrier)):
        raise DomainError("S must exceed the barrier while the barrier is not breached")


def bs_barrier_price(spec: BarrierOptionSpec, S, sigma, tau, is_breached=False):
    """Reflection-principle price; a breached knock-in is a vanilla call."""
    S = np.asarray(S, dtype=float)
    is_breached = np.broadcast_to(np.asarray(is_breached, dtype=bool), S.shape)
    _check_pre_breach(S, spec.barrier, is_breached)
    B, K = spec.barrier, spec.strike
    vanilla = bs_call_price(S, K, sigma, tau)
    S_safe = np.where(is_breached, B * 2.0, S)
    ki_pre = S_safe / B * bs_call_price(B**2 / S_safe, K, sigma, tau)
    if spec.kind == "knock_in":
        out = np.where(is_breached, vanilla, ki_pre)
    else:
        out = np.where(is_breached, 0.0, vanilla - ki_pre)
    return out[()] if np.ndim(out) == 0 else out


def bs_barrier_delta(spec: BarrierOptionSpec, S, sigma, tau, is_breached=False):
    S = np.asarray(S, dtype=float)
    is_breached = np.broadcast_to(np.asarray(is_breached, dtype=bool), S.shape)
    _check_pre_breach(S, spec.barrier, is_breached)
    B, K = spec.barrier, spec.strike
    vanilla_delta = bs_call_delta(S, K, sigma, tau)
    S_safe = np.where(is_breached, B * 2.0, S)
    X = B**2 / S_safe
    ki_pre = bs_call_price(X, K, sigma, tau) / B - B / S_safe * bs_call_delta(X, K, sigma, tau)
    if spec.kind == "knock_in":
        out = np.where(is_breached, vanilla_delta, ki_pre)
    else:
        out = np.where(is_breached, 0.0, vanilla_delta - ki_pre)
    return out[()] if np.ndim(out) == 0 else out


def match_bs_sigma(batch: PathBatch) -> float:
    """Black-Scholes volatility matching the variance of log S_T."""
    if batch.n_paths < 2:
        raise DomainError("need at least two paths to match a volatility")
    sd = float(np.std(np.log(batch.terminal), ddof=1))
    if sd == 0.0:
        warnings.warn("all terminal prices are equal; matched sigma is 0",
                      DegenerateSampleWarning, stacklevel=2)
    return sd / np.sqrt(batch.grid.maturity)


def bs_hedge_rollout(spec: BarrierOptionSpec, batch: PathBatch, sigma: float) -> np.ndarray:
    """Unclipped Black-Scholes barrier deltas at every trading time.

    Breach status uses the fine-grid running minimum up to the trading time.
    """
    steps = batch.grid.trade_steps
    S = batch.prices[:, steps]
    hit = breached(running_minimum(batch)[:, steps], spec.barrier)
    tau = spec.maturity - batch.grid.trade_times
    return bs_barrier_delta(spec, S, sigma, tau[None, :], hit)
