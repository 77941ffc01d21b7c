"""Policy rollouts: features, holdings, transaction costs and terminal wealth.

Terminal wealth of a short option position hedged at the trading times::

    X = V0 + sum_i D_i (S_{i+1} - S_i) - c sum_i |D_i - D_{i-1}| S_i - V_N

with D_{-1} = 0 and no unwind at maturity. S_N is the fine-grid price at T.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, TrainingError
from .instruments import BarrierOptionSpec, breached, payoff
from .market_sim import PathBatch, running_minimum
from .nn import MLP

EVAL_CHUNK = 8192


def feature_dim(cost: float) -> int:
    return 5 if cost > 0 else 4


def trading_prices(batch: PathBatch) -> np.ndarray:
    """Prices at t_0..t_{N-1} followed by S_T, shape (n_paths, N+1)."""
    steps = np.append(batch.grid.trade_steps, batch.grid.n_steps)
    return batch.prices[:, steps]


def option_payoff(batch: PathBatch, option: BarrierOptionSpec | None) -> np.ndarray:
    if option is None:
        return np.zeros(batch.n_paths)
    return payoff(option, batch.terminal, running_minimum(batch)[:, -1])


def _static_features(batch: PathBatch, option, price_scale: float) -> np.ndarray:
    """(n_paths, N, 4) array of scaled t, S_t, M_t and the breach flag."""
    steps = batch.grid.trade_steps
    S = batch.prices[:, steps]
    M = running_minimum(batch)[:, steps]
    t = np.broadcast_to(batch.grid.trade_times / batch.grid.maturity, S.shape)
    flag = (breached(M, option.barrier).astype(float) if option is not None
            else np.zeros_like(S))
    return np.stack([t, S / price_scale, M / price_scale, flag], axis=-1)


def build_features(batch: PathBatch, option: BarrierOptionSpec | None, i: int,
                   prev_delta=None, cost: float = 0.0, price_scale: float | None = None):
    if not 0 <= i < batch.grid.n_trades:
        raise ContractError(f"trading index {i} out of range")
    scale = batch.params.s0 if price_scale is None else price_scale
    static = _static_features(batch, option, scale)[:, i, :]
    if cost > 0:
        prev = np.zeros(batch.n_paths) if prev_delta is None else np.asarray(prev_delta, float)
        return np.column_stack([static, prev])
    return static


def terminal_wealth(prices, holdings, cost, option_value, premium=0.0):
    """Returns ``(wealth, costs_paid)`` for holdings on the trading grid."""
    prices = np.asarray(prices, dtype=float)
    holdings = np.asarray(holdings, dtype=float)
    trades = np.diff(holdings, axis=1, prepend=0.0)
    costs = cost * np.sum(np.abs(trades) * prices[:, :-1], axis=1)
    gains = np.sum(holdings * np.diff(prices, axis=1), axis=1)
    return (gains - costs - np.asarray(option_value, dtype=float)) + premium, costs


def total_variation(holdings) -> np.ndarray:
    return np.sum(np.abs(np.diff(np.asarray(holdings, dtype=float), axis=1, prepend=0.0)),
                  axis=1)


def _wealth_sensitivity(prices, holdings, cost):
    """Partial derivative of wealth w.r.t. each holding, holding the others fixed."""
    dS = np.diff(prices, axis=1)
    if cost == 0:
        return dS
    sgn = np.sign(np.diff(holdings, axis=1, prepend=0.0))
    a = dS - cost * prices[:, :-1] * sgn
    a[:, :-1] += cost * prices[:, 1:-1] * sgn[:, 1:]
    return a


@dataclass
class EpisodeBatch:
    holdings: np.ndarray
    wealth: np.ndarray
    costs_paid: np.ndarray
    payoff: np.ndarray
    prices: np.ndarray
    source: PathBatch
    cost: float
    premium: float = 0.0
    policy: MLP | None = None
    _caches: list = field(default_factory=list, repr=False)

    @property
    def n_paths(self) -> int:
        return self.wealth.size

    @property
    def differentiable(self) -> bool:
        return bool(self._caches)

    def vjp(self, weights) -> np.ndarray:
        """Gradient of sum_j weights[j] * X_j w.r.t. the policy parameters."""
        if not self._caches:
            raise ContractError("episode was rolled out without gradient tracking")
        w = np.asarray(weights, dtype=float)
        if w.shape != (self.n_paths,):
            raise ContractError("one weight per path required")
        adj = w[:, None] * _wealth_sensitivity(self.prices, self.holdings, self.cost)
        net = self.policy
        if self.cost == 0:
            (cache,) = self._caches
            grad, _ = net.backward(cache, adj.reshape(-1, 1))
            return grad
        grad = np.zeros(net.spec.n_params)
        carry = np.zeros(self.n_paths)
        for i in range(self.holdings.shape[1] - 1, -1, -1):
            g, dx = net.backward(self._caches[i], (adj[:, i] + carry)[:, None])
            grad += g
            carry = dx[:, -1]
        return grad

    def per_path_jacobian(self) -> np.ndarray:
        """d X_j / d params for every path (n_paths x n_params); for small checks."""
        return np.stack([self.vjp(np.eye(self.n_paths)[j]) for j in range(self.n_paths)])

    def to_csv(self, path) -> None:
        times = self.source.grid.trade_times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "trading_step", "time", "price", "delta",
                        "wealth_terminal"])
            for j in range(self.n_paths):
                wj = repr(float(self.wealth[j]))
                for i in range(self.holdings.shape[1]):
                    w.writerow([j, i, repr(float(times[i])), repr(float(self.prices[j, i])),
                                repr(float(self.holdings[j, i])), wj])


def _policy_out(policy, x):
    try:
        return policy.forward(x)
    except FloatingPointError as exc:
        raise TrainingError(f"policy produced non-finite holdings: {exc}",
                            {"params_finite": bool(np.all(np.isfinite(policy.params)))})


def _holdings(policy, static, cost, track):
    n, N, _ = static.shape
    caches = []
    if cost == 0:
        y, cache = _policy_out(policy, static.reshape(n * N, -1))
        if track:
            caches.append(cache)
        return y.reshape(n, N), caches
    holdings = np.empty((n, N))
    prev = np.zeros(n)
    for i in range(N):
        y, cache = _policy_out(policy, np.column_stack([static[:, i, :], prev]))
        if track:
            caches.append(cache)
        prev = holdings[:, i] = y[:, 0]
    return holdings, caches


def rollout(policy: MLP, batch: PathBatch, option: BarrierOptionSpec | None,
            cost: float = 0.0, premium: float = 0.0, track_grad: bool = True,
            price_scale: float | None = None) -> EpisodeBatch:
    """Run the policy along every path and compute terminal wealth.

    With ``track_grad`` the episode keeps the activations needed by ``vjp``;
    otherwise paths are processed in chunks to bound memory.
    """
    if policy.spec.input_dim != feature_dim(cost):
        raise ContractError(f"policy expects {policy.spec.input_dim} features, "
                            f"cost={cost} provides {feature_dim(cost)}")
    scale = batch.params.s0 if price_scale is None else price_scale
    prices = trading_prices(batch)
    value = option_payoff(batch, option)
    static = _static_features(batch, option, scale)
    if track_grad:
        holdings, caches = _holdings(policy, static, cost, True)
    else:
        caches = []
        holdings = np.concatenate([_holdings(policy, static[lo:lo + EVAL_CHUNK], cost, False)[0]
                                   for lo in range(0, batch.n_paths, EVAL_CHUNK)])
    wealth, costs = terminal_wealth(prices, holdings, cost, value, premium)
    return EpisodeBatch(holdings, wealth, costs, value, prices, batch, cost, premium,
                        policy, caches)


def forced_episode(holdings, batch: PathBatch, option, cost=0.0, premium=0.0) -> EpisodeBatch:
    """Episode for externally supplied holdings (e.g. a Black-Scholes benchmark)."""
    prices = trading_prices(batch)
    holdings = np.asarray(holdings, dtype=float)
    if holdings.shape != (batch.n_paths, batch.grid.n_trades):
        raise ContractError("holdings must have shape (n_paths, n_trades)")
    value = option_payoff(batch, option)
    wealth, costs = terminal_wealth(prices, holdings, cost, value, premium)
    return EpisodeBatch(holdings, wealth, costs, value, prices, batch, cost, premium)
