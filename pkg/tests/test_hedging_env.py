import numpy as np
import pytest

from robhedge.errors import ContractError, TrainingError
from robhedge.hedging_env import (EVAL_CHUNK, build_features, feature_dim, forced_episode,
                                  rollout, terminal_wealth, total_variation)
from robhedge.instruments import BarrierOptionSpec
from robhedge.market_sim import HestonParams, PathBatch, TimeGrid, simulate_heston
from robhedge.nn import MLP, MLPSpec, policy_spec


def toy_batch(prices):
    prices = np.atleast_2d(np.asarray(prices, dtype=float))
    grid = TimeGrid(n_steps=prices.shape[1] - 1, maturity=1.0, trade_every=1)
    return PathBatch(prices, np.full_like(prices, 0.09), 0, HestonParams(), grid)


def test_toy_wealth_without_cost():
    ep = forced_episode([[1.0, 0.5]], toy_batch([10, 11, 9]), None, cost=0.0)
    assert ep.wealth[0] == pytest.approx(0.0, abs=1e-15)


def test_toy_wealth_with_cost():
    ep = forced_episode([[1.0, 0.5]], toy_batch([10, 11, 9]), None, cost=0.01)
    assert ep.costs_paid[0] == pytest.approx(0.155, abs=1e-14)
    assert ep.wealth[0] == pytest.approx(-0.155, abs=1e-14)


def test_zero_policy_wealth_is_minus_payoff(market, grid, option):
    batch = simulate_heston(market, grid, 500, seed=1)
    ep = forced_episode(np.zeros((500, grid.n_trades)), batch, option, premium=0.3)
    np.testing.assert_array_equal(ep.wealth, 0.3 - ep.payoff)
    assert not total_variation(ep.holdings).any()


def test_constant_holding_telescopes(market, grid, option):
    batch = simulate_heston(market, grid, 200, seed=2)
    ep = forced_episode(np.full((200, grid.n_trades), 0.7), batch, option)
    np.testing.assert_allclose(ep.wealth, 0.7 * (batch.terminal - batch.prices[:, 0]) - ep.payoff,
                               atol=1e-12)
    np.testing.assert_allclose(total_variation(ep.holdings), 0.7)


def test_features_at_start_and_after_breach():
    batch = toy_batch([[10, 9, 8.4, 9.5], [10, 11, 12, 11]])
    option = BarrierOptionSpec("knock_in")
    f0 = build_features(batch, option, 0)
    np.testing.assert_allclose(f0[:, 1:], [[1, 1, 0], [1, 1, 0]])
    f3 = build_features(batch, option, 2)
    assert f3[0, 2] == pytest.approx(0.84) and f3[0, 3] == 1.0 and f3[1, 3] == 0.0
    assert build_features(batch, option, 1, cost=0.01).shape == (2, feature_dim(0.01)) == (2, 5)
    assert feature_dim(0.0) == 4
    with pytest.raises(ContractError):
        build_features(batch, option, 3)


def test_holdings_bounded_and_dimension_check(market, grid):
    batch = simulate_heston(market, grid, 300, seed=3)
    option = BarrierOptionSpec("knock_out")
    net = MLP(policy_spec(4), seed=0)
    net.params = net.params * 30
    ep = rollout(net, batch, option)
    assert np.all(np.abs(ep.holdings) <= 2.0) and np.all(np.isfinite(ep.wealth))
    with pytest.raises(ContractError):
        rollout(net, batch, option, cost=0.01)


def test_nan_policy_raises_training_error(market, grid):
    batch = simulate_heston(market, grid, 10, seed=3)
    net = MLP(policy_spec(4), seed=0)
    net.params = np.full(net.spec.n_params, np.nan)
    with pytest.raises(TrainingError):
        rollout(net, batch, BarrierOptionSpec())


def test_premium_shifts_wealth_exactly(market, grid):
    batch = simulate_heston(market, grid, 100, seed=4)
    net = MLP(policy_spec(5), seed=1)
    a = rollout(net, batch, BarrierOptionSpec(), cost=0.01)
    b = rollout(net, batch, BarrierOptionSpec(), cost=0.01, premium=0.25)
    assert np.array_equal(b.wealth, a.wealth + 0.25)


def test_chunked_rollout_matches_tracked(market):
    grid = TimeGrid(n_steps=8, trade_every=2)
    batch = simulate_heston(market, grid, EVAL_CHUNK + 50, seed=5)
    net = MLP(policy_spec(5), seed=2)
    a = rollout(net, batch, BarrierOptionSpec(), cost=0.01, track_grad=True)
    b = rollout(net, batch, BarrierOptionSpec(), cost=0.01, track_grad=False)
    np.testing.assert_allclose(a.wealth, b.wealth, rtol=0, atol=1e-12)
    with pytest.raises(ContractError):
        b.vjp(np.ones(b.n_paths))


@pytest.mark.parametrize("cost", [0.0, 0.01])
def test_vjp_matches_finite_differences(cost, toy_grid, market, option):
    batch = simulate_heston(market, toy_grid, 4, seed=6)
    spec = MLPSpec(feature_dim(cost), (3,), 1, "tanh_scaled", bound=2.0)
    net = MLP(spec, seed=3)
    ep = rollout(net, batch, option, cost=cost)
    jac = ep.per_path_jacobian()
    base = net.params.copy()
    fd = np.zeros_like(jac)
    h = 1e-6
    for k in range(base.size):
        vals = []
        for s in (1, -1):
            p = base.copy()
            p[k] += s * h
            net.params = p
            vals.append(rollout(net, batch, option, cost=cost, track_grad=False).wealth)
        fd[:, k] = (vals[0] - vals[1]) / (2 * h)
    net.params = base
    assert np.linalg.norm(jac - fd) / np.linalg.norm(fd) < 1e-4


def test_terminal_wealth_shapes():
    w, c = terminal_wealth([[10, 11, 9], [10, 10, 10]], [[1, 1], [0, 2]], 0.0, [0, 1])
    np.testing.assert_allclose(w, [-1, -1])
    np.testing.assert_allclose(c, 0)
