"""Kernel-smoothed policy gradients for RDEU risk and the robust adversarial trainer.

All estimators reduce to a weight per sample: if ``c = kernel_adjoint(...)``
then ``sum_j c_j * grad(x_j)`` estimates ``E[a(X) grad F(x)/f(x) | x=X]`` where
F, f are the Gaussian-KDE cdf/pdf of the samples. The parameter gradient is
then a single vector-Jacobian product through the rollout (or adversary).

The robust problem uses the penalised objective seen by the adversary,

    J[theta, phi] = R[X_theta] - lam * c - (mu / 2) * c^2,
    c = (d_p(X_theta, X_phi)^p - eps^p)_+,

which the adversary ascends and the policy descends.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from .errors import ContractError, ParameterError, TrainingError
from .hedging_env import EpisodeBatch, feature_dim, rollout
from .instruments import BarrierOptionSpec
from .market_sim import HestonParams, TimeGrid, simulate_heston
from .nn import MLP, Adam, Cache, adversary_spec, policy_spec
from .risk import (IDENTITY, DistortionSpec, UtilitySpec, rdeu_empirical,
                   silverman_half_bandwidth, wasserstein_p)

log = logging.getLogger(__name__)

KERNEL_CHUNK = 1024


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    iterations: int = 1000
    lr_policy: float = 1e-3
    lr_adversary: float = 5e-3
    lr_decay: float = 1.0  # multiplicative factor applied over the whole run
    seed: int = 0
    resimulate_per_batch: bool = True
    hold_bound: float = 2.0

    def __post_init__(self):
        if self.batch_size < 32:
            raise ParameterError("batch_size must be >= 32")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")

    def lr_at(self, base: float, it: int) -> float:
        return base * self.lr_decay ** (it / max(self.iterations - 1, 1))


@dataclass(frozen=True)
class RobustConfig:
    epsilon: float = 0.02
    order: float = 1.0
    lam: float = 0.0
    mu: float = 10.0
    mu_growth: float = 2.0
    mu_max: float = 1e4
    shrink: float = 0.25
    inner_steps: int = 10
    outer_steps: int = 1
    violation_tol: float = 0.005
    freeze_adversary: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if self.order < 1:
            raise ParameterError("Wasserstein order must be >= 1")
        if self.lam < 0 or not self.mu > 0 or not self.mu_growth > 1:
            raise ParameterError("need lam >= 0, mu > 0, mu_growth > 1")
        if self.inner_steps < 0 or self.outer_steps < 1:
            raise ParameterError("need inner_steps >= 0 and outer_steps >= 1")


@dataclass
class KernelGradient:
    grad: np.ndarray
    risk: float
    bandwidth: float
    degenerate: bool = False


def _kernel_rows(query, samples, h):
    for lo in range(0, query.size, KERNEL_CHUNK):
        z = (query[lo:lo + KERNEL_CHUNK, None] - samples[None, :]) / h
        yield lo, z


def kde_cdf_at(query, samples, h) -> np.ndarray:
    out = np.empty(query.size)
    for lo, z in _kernel_rows(query, samples, h):
        out[lo:lo + z.shape[0]] = ndtr(z).mean(axis=1)
    return out


def kernel_adjoint(query, samples, h, coef) -> np.ndarray:
    """Per-sample weights c with sum_j c_j grad(x_j) ~ E[coef * grad F(q) / f(q)].

    ``query[i]`` is where the i-th term is evaluated; ``coef[i]`` its integrand
    factor. grad F(q)/f(q) is replaced by -sum_j K_ij grad x_j / sum_j K_ij.
    """
    query = np.asarray(query, dtype=float)
    samples = np.asarray(samples, dtype=float)
    coef = np.asarray(coef, dtype=float)
    out = np.zeros(samples.size)
    for lo, z in _kernel_rows(query, samples, h):
        K = np.exp(-0.5 * z * z)
        rows = coef[lo:lo + K.shape[0]] / K.sum(axis=1)
        out -= rows @ K
    return out / query.size


def _bandwidth(x):
    if np.ptp(x) == 0:
        return 0.0, True
    return silverman_half_bandwidth(x), False


def nonrobust_gradient(episode: EpisodeBatch, gamma: DistortionSpec,
                       utility: UtilitySpec = IDENTITY) -> KernelGradient:
    x = episode.wealth
    risk = rdeu_empirical(x, gamma, utility)
    h, degenerate = _bandwidth(x)
    if degenerate:
        return KernelGradient(np.zeros(episode.policy.spec.n_params), risk, h, True)
    coef = utility.derivative(x) * gamma.gamma(kde_cdf_at(x, x, h))
    return KernelGradient(episode.vjp(kernel_adjoint(x, x, h, coef)), risk, h)


# -- robust pieces ----------------------------------------------------------

@dataclass
class AdversarySample:
    x_phi: np.ndarray
    x_theta: np.ndarray
    partner: np.ndarray  # phi order statistic with the same rank as each x_theta
    cache: Cache = field(repr=False)


def distort(adversary: MLP, x_phi) -> AdversarySample:
    x_phi = np.asarray(x_phi, dtype=float)
    y, cache = adversary.forward(x_phi[:, None])
    x_theta = y[:, 0]
    ranks = np.empty(x_theta.size, dtype=int)
    ranks[np.argsort(x_theta, kind="stable")] = np.arange(x_theta.size)
    return AdversarySample(x_phi, x_theta, np.sort(x_phi)[ranks], cache)


def penalty_c(x_theta, x_phi, robust: RobustConfig) -> float:
    d = wasserstein_p(x_theta, x_phi, robust.order)
    return max(d**robust.order - robust.epsilon**robust.order, 0.0)


def multiplier(x_theta, x_phi, robust: RobustConfig) -> float:
    """Lambda = (lam + mu c) 1(d_p > eps), treated as a constant."""
    d = wasserstein_p(x_theta, x_phi, robust.order)
    if d <= robust.epsilon:
        return 0.0
    return robust.lam + robust.mu * penalty_c(x_theta, x_phi, robust)


def lagrangian(x_theta, x_phi, gamma, robust: RobustConfig, utility=IDENTITY) -> float:
    """Empirical J = R[X_theta] - lam c - mu/2 c^2."""
    c = penalty_c(x_theta, x_phi, robust)
    return rdeu_empirical(x_theta, gamma, utility) - robust.lam * c - 0.5 * robust.mu * c * c


def _transport_term(sample: AdversarySample, robust: RobustConfig):
    diff = sample.x_theta - sample.partner
    p = robust.order
    mag = np.ones_like(diff) if p == 1 else np.abs(diff) ** (p - 1)
    return p * mag * np.sign(diff)


def _theta_weights(sample, gamma, utility, robust):
    xt = sample.x_theta
    h, degenerate = _bandwidth(xt)
    if degenerate:
        return None, h
    lam = multiplier(xt, sample.x_phi, robust)
    coef = utility.derivative(xt) * gamma.gamma(kde_cdf_at(xt, xt, h))
    if lam:
        coef = coef + lam * _transport_term(sample, robust)
    return kernel_adjoint(xt, xt, h, coef), h


def inner_gradient(sample: AdversarySample, adversary: MLP, gamma: DistortionSpec,
                   robust: RobustConfig, utility: UtilitySpec = IDENTITY) -> KernelGradient:
    """Gradient of J w.r.t. the adversary parameters (to be ascended)."""
    risk = rdeu_empirical(sample.x_theta, gamma, utility)
    w, h = _theta_weights(sample, gamma, utility, robust)
    if w is None:
        return KernelGradient(np.zeros(adversary.spec.n_params), risk, h, True)
    grad, _ = adversary.backward(sample.cache, w[:, None])
    return KernelGradient(grad, risk, h)


def outer_gradient(sample: AdversarySample, adversary: MLP, episode: EpisodeBatch,
                   gamma: DistortionSpec, robust: RobustConfig,
                   utility: UtilitySpec = IDENTITY) -> KernelGradient:
    """Gradient of J w.r.t. the policy parameters (to be descended).

    Policy parameters reach X_theta through the adversary's input gradient and
    the ball centre X_phi through the phi-side KDE of the transport term.
    """
    if not np.array_equal(sample.x_phi, episode.wealth):
        raise ContractError("adversary sample does not belong to this episode")
    risk = rdeu_empirical(sample.x_theta, gamma, utility)
    w_theta, h = _theta_weights(sample, gamma, utility, robust)
    if w_theta is None:
        return KernelGradient(np.zeros(episode.policy.spec.n_params), risk, h, True)
    _, w = adversary.backward(sample.cache, w_theta[:, None])
    w = w[:, 0]
    lam = multiplier(sample.x_theta, sample.x_phi, robust)
    if lam:
        h_phi, degenerate = _bandwidth(sample.x_phi)
        if not degenerate:
            w = w + kernel_adjoint(sample.partner, sample.x_phi, h_phi,
                                   -lam * _transport_term(sample, robust))
    return KernelGradient(episode.vjp(w), risk, h)


# -- trainers ---------------------------------------------------------------

HISTORY_FIELDS = ["iter", "risk_phi", "risk_theta", "wasserstein", "lambda", "mu", "grad_norm"]


@dataclass
class TrainResult:
    policy: MLP
    history: list = field(default_factory=list)
    adversary: MLP | None = None
    robust: RobustConfig | None = None

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
            w.writeheader()
            for row in self.history:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def batch_seed(seed: int, it: int, resimulate: bool = True) -> int:
    ss = np.random.SeedSequence([seed, 1, it if resimulate else 0])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def init_policy(cost: float, config: TrainConfig) -> MLP:
    seed = int(np.random.SeedSequence([config.seed, 2]).generate_state(1, np.uint32)[0])
    return MLP(policy_spec(feature_dim(cost), config.hold_bound), seed=seed)


def _batch(config, market, grid, it):
    return simulate_heston(market, grid, config.batch_size,
                           batch_seed(config.seed, it, config.resimulate_per_batch))


def _check_finite(params, what, state):
    if not np.all(np.isfinite(params)):
        raise TrainingError(f"{what} parameters diverged", state)


def train_nonrobust(config: TrainConfig, market: HestonParams, grid: TimeGrid,
                    option: BarrierOptionSpec | None, cost: float, gamma: DistortionSpec,
                    utility: UtilitySpec = IDENTITY, policy: MLP | None = None,
                    callback=None) -> TrainResult:
    """Mini-batch Adam descent of the empirical RDEU risk of terminal wealth."""
    policy = policy.copy() if policy is not None else init_policy(cost, config)
    opt = Adam(lr=config.lr_policy)
    result = TrainResult(policy)
    for it in range(config.iterations):
        episode = rollout(policy, _batch(config, market, grid, it), option, cost)
        est = nonrobust_gradient(episode, gamma, utility)
        if not math.isfinite(est.risk):
            raise TrainingError("risk is not finite", {"policy": policy, "history": result.history})
        last = policy.params.copy()
        opt.lr = config.lr_at(config.lr_policy, it)
        new = opt.step(policy.params, est.grad)
        _check_finite(new, "policy", {"policy": MLP(policy.spec, last, policy.seed),
                                      "history": result.history})
        policy.params = new
        result.history.append({"iter": it, "risk_phi": est.risk, "risk_theta": est.risk,
                               "wasserstein": 0.0, "lambda": 0.0, "mu": 0.0,
                               "grad_norm": float(np.linalg.norm(est.grad))})
        if callback:
            callback(it, result)
    return result


def train_robust(config: TrainConfig, robust: RobustConfig, market: HestonParams,
                 grid: TimeGrid, option: BarrierOptionSpec | None, cost: float,
                 gamma: DistortionSpec, utility: UtilitySpec = IDENTITY,
                 policy: MLP | None = None, adversary: MLP | None = None,
                 callback=None, check_constraint: bool = True) -> TrainResult:
    """Alternating adversary ascent / policy descent with augmented-Lagrangian updates."""
    policy = policy.copy() if policy is not None else init_policy(cost, config)
    if adversary is None:
        seed = int(np.random.SeedSequence([config.seed, 3]).generate_state(1, np.uint32)[0])
        adversary = MLP(adversary_spec(), seed=seed)
    else:
        adversary = adversary.copy()
    opt_pol, opt_adv = Adam(lr=config.lr_policy), Adam(lr=config.lr_adversary)
    state = robust
    result = TrainResult(policy, adversary=adversary, robust=state)
    c_prev = math.inf
    inner = 0 if robust.freeze_adversary else robust.inner_steps
    for it in range(config.iterations):
        batch = _batch(config, market, grid, it)
        episode = rollout(policy, batch, option, cost)
        for _ in range(inner):
            sample = distort(adversary, episode.wealth)
            g = inner_gradient(sample, adversary, gamma, state, utility)
            opt_adv.lr = config.lr_at(config.lr_adversary, it)
            new = opt_adv.step(adversary.params, -g.grad)
            _check_finite(new, "adversary", {"policy": policy, "history": result.history})
            adversary.params = new
        for k in range(robust.outer_steps):
            if k:
                episode = rollout(policy, batch, option, cost)
            sample = distort(adversary, episode.wealth)
            est = outer_gradient(sample, adversary, episode, gamma, state, utility)
            opt_pol.lr = config.lr_at(config.lr_policy, it)
            new = opt_pol.step(policy.params, est.grad)
            _check_finite(new, "policy", {"policy": policy, "history": result.history})
            policy.params = new
        d = wasserstein_p(sample.x_theta, sample.x_phi, state.order)
        c = penalty_c(sample.x_theta, sample.x_phi, state)
        result.history.append({"iter": it,
                               "risk_phi": rdeu_empirical(sample.x_phi, gamma, utility),
                               "risk_theta": est.risk, "wasserstein": d,
                               "lambda": state.lam, "mu": state.mu,
                               "grad_norm": float(np.linalg.norm(est.grad))})
        mu = state.mu
        if c > state.shrink * c_prev:
            mu = min(mu * state.mu_growth, state.mu_max)
        state = replace(state, lam=max(0.0, state.lam + state.mu * c), mu=mu)
        c_prev = c
        result.robust = state
        if callback:
            callback(it, result)
    if check_constraint and inner:
        tail = [r["wasserstein"] for r in result.history[-max(1, len(result.history) // 10):]]
        if float(np.median(tail)) > robust.epsilon + robust.violation_tol:
            raise TrainingError(
                f"Wasserstein constraint still violated: median d={np.median(tail):.4g} "
                f"> eps={robust.epsilon}", {"result": result})
    return result
