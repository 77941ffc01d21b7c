"""Post-training analysis: P&L statistics, pricing to a CVaR target, the p-sweep."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, DomainError
from .hedging_env import EpisodeBatch, forced_episode, rollout, total_variation
from .instruments import (BarrierOptionSpec, bs_barrier_price, bs_hedge_rollout,
                          match_bs_sigma)
from .market_sim import HestonParams, PathBatch, TimeGrid, simulate_heston
from .nn import MLP
from .risk import (IDENTITY, DistortionSpec, UtilitySpec, cvar_empirical, rdeu_empirical,
                   tail_expectations)
from .training import TrainConfig, train_nonrobust

SE_GROUPS = 20


@dataclass
class NeuralStrategy:
    policy: MLP
    adversary: MLP | None = None
    price_scale: float = 10.0
    name: str = "policy"

    def episode(self, batch, option, cost, premium=0.0) -> EpisodeBatch:
        return rollout(self.policy, batch, option, cost, premium, track_grad=False,
                       price_scale=self.price_scale)

    def worst_case(self, wealth) -> np.ndarray:
        if self.adversary is None:
            return np.asarray(wealth, dtype=float)
        return self.adversary(np.asarray(wealth, dtype=float)[:, None])[:, 0]


@dataclass
class BlackScholesStrategy:
    """Unclipped barrier delta hedge with a fixed (matched) volatility."""

    sigma: float
    name: str = "black_scholes"
    adversary = None

    def episode(self, batch, option, cost, premium=0.0) -> EpisodeBatch:
        return forced_episode(bs_hedge_rollout(option, batch, self.sigma), batch, option,
                              cost, premium)

    def worst_case(self, wealth):
        return np.asarray(wealth, dtype=float)


def matched_bs_strategy(market: HestonParams, grid: TimeGrid, n_paths: int = 100_000,
                        seed: int = 0) -> BlackScholesStrategy:
    return BlackScholesStrategy(match_bs_sigma(simulate_heston(market, grid, n_paths, seed)))


def batch_means_se(samples, stat, groups: int = SE_GROUPS) -> float:
    """Standard error of ``stat`` from independent equal-size sub-samples."""
    parts = np.array_split(np.asarray(samples, dtype=float), groups)
    vals = np.array([stat(p) for p in parts])
    return float(vals.std(ddof=1) / math.sqrt(groups))


@dataclass
class EvaluationReport:
    strategy: str
    market: HestonParams
    n_paths: int
    seed: int
    cost: float
    gamma: DistortionSpec
    risk: float
    risk_se: float
    lte: float
    ute: float
    premium: float = 0.0
    robust_risk: float | None = None
    wealth: np.ndarray = field(default=None, repr=False)
    total_variation: np.ndarray = field(default=None, repr=False)
    holdings: np.ndarray = field(default=None, repr=False)

    @property
    def reported(self) -> float:
        """Tail-mean convention (-R), the sign used when quoting P&L CVaR."""
        return -self.risk

    def summary(self) -> dict:
        return {"strategy": self.strategy, "n_paths": self.n_paths, "seed": self.seed,
                "cost": self.cost, "premium": self.premium, "risk": self.risk,
                "risk_se": self.risk_se, "reported_tail_mean": self.reported,
                "lte": self.lte, "ute": self.ute, "robust_risk": self.robust_risk,
                "mean_wealth": float(np.mean(self.wealth)),
                "median_total_variation": float(np.median(self.total_variation))}


def evaluate_policy(strategy, market: HestonParams, grid: TimeGrid,
                    option: BarrierOptionSpec | None, cost: float, n_paths: int, seed: int,
                    gamma: DistortionSpec = DistortionSpec.cvar(0.2),
                    utility: UtilitySpec = IDENTITY, premium: float = 0.0,
                    batch: PathBatch | None = None) -> EvaluationReport:
    """Freeze ``strategy`` and measure it on fresh paths from ``market``."""
    if batch is None:
        batch = simulate_heston(market, grid, n_paths, seed)
    ep = strategy.episode(batch, option, cost, premium)
    x = ep.wealth
    alpha = gamma.alpha if not gamma.uniform else 0.5
    beta = gamma.beta if not gamma.uniform else 0.5
    lte, ute = tail_expectations(x, alpha, beta)
    robust_risk = None
    if strategy.adversary is not None:
        robust_risk = rdeu_empirical(strategy.worst_case(x), gamma, utility)
    return EvaluationReport(
        strategy=strategy.name, market=market, n_paths=batch.n_paths, seed=batch.seed,
        cost=cost, gamma=gamma, risk=rdeu_empirical(x, gamma, utility),
        risk_se=batch_means_se(x, lambda s: rdeu_empirical(s, gamma, utility)),
        lte=lte, ute=ute, premium=premium, robust_risk=robust_risk, wealth=x,
        total_variation=total_variation(ep.holdings), holdings=ep.holdings)


@dataclass
class PriceQuote:
    scheme: str
    price: float
    tail_mean: float  # tail mean at the quoted price under the pricing model


def price_to_cvar_target(strategy, option, cost, market, grid, target=-0.5, n_paths=100_000,
                         seed=0, alpha=0.2, utility: UtilitySpec = IDENTITY,
                         worst_case: bool = True, batch: PathBatch | None = None) -> PriceQuote:
    """Premium that makes the CVaR tail mean of terminal wealth equal ``target``.

    Uses the adversary's worst-case wealth when the strategy has one and
    ``worst_case`` is set.
    """
    if not utility.translation_invariant:
        raise ContractError("pricing by translation needs a translation-invariant risk")
    if batch is None:
        batch = simulate_heston(market, grid, n_paths, seed)
    x = strategy.episode(batch, option, cost, 0.0).wealth
    if worst_case:
        x = strategy.worst_case(x)
    price = target - (-cvar_empirical(x, alpha))
    achieved = -cvar_empirical(x + price, alpha)
    if abs(achieved - target) > 1e-10:
        raise AssertionError(f"translation identity failed: {achieved} vs {target}")
    return PriceQuote(strategy.name, price, achieved)


def bs_analytic_price(option: BarrierOptionSpec, s0: float, sigma: float) -> float:
    return float(bs_barrier_price(option, s0, sigma, option.maturity, s0 <= option.barrier))


PRICING_FIELDS = ["scheme", "option", "price", "cvar_reported"]


def pricing_table(strategies, option, cost, pricing_market, actual_market, grid, sigma,
                  target=-0.5, n_paths=100_000, seed=0, alpha=0.2):
    """Rows of (scheme, option, price, cvar_reported).

    Prices come from ``pricing_market``; ``cvar_reported`` is the tail mean of
    the strategy charging that price under ``actual_market``.
    """
    price_batch = simulate_heston(pricing_market, grid, n_paths, seed)
    actual_batch = simulate_heston(actual_market, grid, n_paths, seed + 1)
    rows = []
    for strat in strategies:
        q = price_to_cvar_target(strat, option, cost, pricing_market, grid, target,
                                 alpha=alpha, batch=price_batch)
        x = strat.episode(actual_batch, option, cost, q.price).wealth
        rows.append({"scheme": strat.name, "option": option.kind, "price": q.price,
                     "cvar_reported": -cvar_empirical(x, alpha)})
    rows.append({"scheme": "bs_analytic", "option": option.kind,
                 "price": bs_analytic_price(option, pricing_market.s0, sigma),
                 "cvar_reported": ""})
    return rows


# -- p-sweep and the no-option dichotomy --------------------------------------

@dataclass
class SweepRow:
    p: float
    lte: float
    ute: float
    risk: float


def _sweep_job(args):
    p, option, cost, market, grid, alpha, beta, config, eval_paths, eval_seed = args
    gamma = DistortionSpec.alpha_beta(alpha, beta, p)
    res = train_nonrobust(config, market, grid, option, cost, gamma)
    rep = evaluate_policy(NeuralStrategy(res.policy, price_scale=market.s0), market, grid,
                          option, cost, eval_paths, eval_seed, gamma)
    return SweepRow(p, rep.lte, rep.ute, rep.risk), res.policy


def phase_sweep(option, cost, market, grid, p_grid, config: TrainConfig, alpha=0.1, beta=0.9,
                eval_paths=50_000, eval_seed=12345, workers=1, return_policies=False):
    """Train one non-robust policy per loss weight p and record LTE/UTE/risk."""
    if any(not (0 < p <= 1) for p in p_grid):
        raise DomainError("p values must lie in (0, 1]")
    jobs = [(float(p), option, cost, market, grid, alpha, beta, config, eval_paths, eval_seed)
            for p in p_grid]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_sweep_job, jobs))
    else:
        out = [_sweep_job(j) for j in jobs]
    rows = [r for r, _ in out]
    return (rows, [pol for _, pol in out]) if return_policies else rows


def detect_phase_transition(rows) -> float:
    """Midpoint of the grid interval with the largest UTE rise as p decreases."""
    rows = sorted(rows, key=lambda r: r.p)
    if len(rows) < 2:
        raise DomainError("need at least two sweep points")
    jumps = [rows[k].ute - rows[k + 1].ute for k in range(len(rows) - 1)]
    k = int(np.argmax(jumps))
    return 0.5 * (rows[k].p + rows[k + 1].p)


@dataclass
class DichotomyReport:
    p: float
    bound: float
    risk: float
    risk_se: float
    mean_abs_delta: float
    median_abs_delta: float
    regime: str
    homogeneity_error: float
    doubling_lowers_risk: bool | None


def scaled_risk(holdings, batch, gamma, tau, cost=0.0):
    return rdeu_empirical(forced_episode(tau * holdings, batch, None, cost).wealth, gamma)


def leverage_dichotomy_check(alpha, beta, p, market, grid, bound, config: TrainConfig,
                             eval_paths=20_000, eval_seed=777) -> DichotomyReport:
    """Trade the asset alone (no option) with holdings in [-bound, bound]."""
    gamma = DistortionSpec.alpha_beta(alpha, beta, p)
    res = train_nonrobust(replace(config, hold_bound=bound), market, grid, None, 0.0, gamma)
    rep = evaluate_policy(NeuralStrategy(res.policy, price_scale=market.s0), market, grid,
                          None, 0.0, eval_paths, eval_seed, gamma)
    batch = simulate_heston(market, grid, eval_paths, eval_seed)
    H = rep.holdings
    r1 = rep.risk
    homog = max(abs(scaled_risk(H, batch, gamma, tau) - tau * r1) for tau in (0.5, 2.0))
    absd = np.abs(H)
    if np.median(absd) >= 0.8 * bound:
        regime = "full_leverage"
    elif np.mean(absd) <= 0.05 * bound:
        # the risk of a small position is proportional to its size, so the
        # regime is read off the holdings rather than from R itself
        regime = "no_trade"
    else:
        regime = "mixed"
    doubling = None
    if r1 < 0:
        # H/2 lies within the bounds and doubling it gives back H
        doubling = bool(r1 < scaled_risk(H, batch, gamma, 0.5))
    return DichotomyReport(p, bound, r1, rep.risk_se, float(absd.mean()), float(np.median(absd)),
                           regime, homog, doubling)


# -- CSV writers ---------------------------------------------------------------

def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_rows(path, fieldnames, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in fieldnames})


def write_pnl(path, wealth) -> None:
    write_rows(path, ["path_id", "wealth"],
               ({"path_id": i, "wealth": float(x)} for i, x in enumerate(wealth)))


def write_tv(path, tv) -> None:
    write_rows(path, ["path_id", "total_variation"],
               ({"path_id": i, "total_variation": float(x)} for i, x in enumerate(tv)))


def write_sweep(path, rows) -> None:
    write_rows(path, ["p", "lte", "ute", "risk"],
               ({"p": r.p, "lte": r.lte, "ute": r.ute, "risk": r.risk} for r in rows))
