"""Monte Carlo paths for the Heston model (and GBM) on a fine time grid.

Random numbers come from numpy's PCG64 generator. Paths are produced in
fixed-size blocks, each seeded from ``SeedSequence([seed, block])``, so the
output does not depend on how many workers simulate the blocks.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError

RNG_ALGORITHM = "PCG64"
BLOCK_SIZE = 4096


@dataclass(frozen=True)
class HestonParams:
    s0: float = 10.0
    v0: float = 0.3**2
    mu: float = 0.08
    kappa: float = 3.0
    theta: float = 0.3**2
    xi: float = 2.0
    rho: float = -0.5

    def __post_init__(self):
        vals = asdict(self)
        bad = [k for k, v in vals.items() if not math.isfinite(v)]
        if bad:
            raise ParameterError(f"non-finite Heston parameter(s): {bad}")
        if self.s0 <= 0:
            raise ParameterError("s0 must be positive")
        for name in ("v0", "kappa", "theta", "xi"):
            if vals[name] < 0:
                raise ParameterError(f"{name} must be non-negative")
        if abs(self.rho) > 1:
            raise ParameterError("rho must lie in [-1, 1]")

    def replace(self, **changes) -> "HestonParams":
        return HestonParams(**{**asdict(self), **changes})


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int = 200
    maturity: float = 1.0
    trade_every: int = 4

    def __post_init__(self):
        if self.n_steps < 1 or self.trade_every < 1:
            raise ParameterError("n_steps and trade_every must be >= 1")
        if self.n_steps % self.trade_every:
            raise ParameterError("n_steps must be divisible by trade_every")
        if not self.maturity > 0:
            raise ParameterError("maturity must be positive")

    @property
    def dt(self) -> float:
        return self.maturity / self.n_steps

    @property
    def n_trades(self) -> int:
        return self.n_steps // self.trade_every

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.maturity, self.n_steps + 1)

    @property
    def trade_steps(self) -> np.ndarray:
        """Fine-grid indices of the trading times t_0..t_{N-1}."""
        return np.arange(self.n_trades) * self.trade_every

    @property
    def trade_times(self) -> np.ndarray:
        return self.trade_steps * self.dt


@dataclass
class PathBatch:
    prices: np.ndarray
    variances: np.ndarray
    seed: int
    params: HestonParams
    grid: TimeGrid

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.prices[:, -1]

    def to_csv(self, path) -> None:
        times = self.grid.times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "step", "time", "price", "variance"])
            for i in range(self.n_paths):
                for k in range(self.grid.n_steps + 1):
                    w.writerow([i, k, repr(float(times[k])),
                                repr(float(self.prices[i, k])),
                                repr(float(self.variances[i, k]))])


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, block])))


def _blocks(n_paths: int):
    for b, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        yield b, start, min(start + BLOCK_SIZE, n_paths)


def _run_blocks(fn, n_paths, workers):
    blocks = list(_blocks(n_paths))
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(lambda b: fn(*b), blocks))
    else:
        for b in blocks:
            fn(*b)


def _check_n_paths(n_paths):
    if int(n_paths) != n_paths or n_paths < 1:
        raise ParameterError("n_paths must be a positive integer")


def simulate_heston(params: HestonParams, grid: TimeGrid, n_paths: int, seed: int,
                    workers: int = 1) -> PathBatch:
    """Full-truncation Euler for the variance, log-Euler for the price.

    The first normal of each step drives the price; the variance shock is
    ``rho * z1 + sqrt(1 - rho^2) * z2``.
    """
    _check_n_paths(n_paths)
    n, dt = grid.n_steps, grid.dt
    prices = np.empty((n_paths, n + 1))
    variances = np.empty((n_paths, n + 1))
    rho_bar = math.sqrt(1.0 - params.rho**2)
    sq_dt = math.sqrt(dt)

    def block(b, lo, hi):
        rng = _block_rng(seed, b)
        z1 = rng.standard_normal((hi - lo, n))
        z2 = rng.standard_normal((hi - lo, n))
        logs = np.empty((hi - lo, n + 1))
        v = np.full(hi - lo, params.v0)
        logs[:, 0] = math.log(params.s0)
        variances[lo:hi, 0] = params.v0
        for k in range(n):
            vp = np.maximum(v, 0.0)
            sv = np.sqrt(vp)
            logs[:, k + 1] = logs[:, k] + (params.mu - 0.5 * vp) * dt + sv * sq_dt * z1[:, k]
            zv = params.rho * z1[:, k] + rho_bar * z2[:, k]
            v = v + params.kappa * (params.theta - vp) * dt + params.xi * sv * sq_dt * zv
            variances[lo:hi, k + 1] = np.maximum(v, 0.0)
        prices[lo:hi] = np.exp(logs)
        prices[lo:hi, 0] = params.s0

    _run_blocks(block, n_paths, workers)
    return PathBatch(prices, variances, seed, params, grid)


def simulate_gbm(s0: float, mu: float, sigma: float, grid: TimeGrid, n_paths: int,
                 seed: int, workers: int = 1) -> PathBatch:
    """Exact log-normal stepping, driven by the same normals as the Heston price."""
    if not sigma >= 0:
        raise ParameterError("sigma must be non-negative")
    _check_n_paths(n_paths)
    params = HestonParams(s0=s0, v0=sigma**2, mu=mu, kappa=0.0, theta=sigma**2, xi=0.0, rho=0.0)
    n, dt = grid.n_steps, grid.dt
    prices = np.empty((n_paths, n + 1))

    def block(b, lo, hi):
        rng = _block_rng(seed, b)
        z1 = rng.standard_normal((hi - lo, n))
        incr = (mu - 0.5 * sigma**2) * dt + sigma * math.sqrt(dt) * z1
        logs = np.empty((hi - lo, n + 1))
        logs[:, 0] = math.log(s0)
        np.cumsum(incr, axis=1, out=logs[:, 1:])
        logs[:, 1:] += math.log(s0)
        prices[lo:hi] = np.exp(logs)
        prices[lo:hi, 0] = s0

    _run_blocks(block, n_paths, workers)
    return PathBatch(prices, np.full((n_paths, n + 1), sigma**2), seed, params, grid)


def running_minimum(batch_or_prices) -> np.ndarray:
    prices = getattr(batch_or_prices, "prices", batch_or_prices)
    return np.minimum.accumulate(np.asarray(prices, dtype=float), axis=1)


def cache_key(params: HestonParams, grid: TimeGrid, n_paths: int, seed: int) -> str:
    blob = json.dumps({"params": asdict(params), "grid": asdict(grid), "n_paths": n_paths,
                       "seed": seed, "rng": RNG_ALGORITHM, "block": BLOCK_SIZE},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def simulate_heston_cached(params, grid, n_paths, seed, cache_dir, workers=1) -> PathBatch:
    """``simulate_heston`` backed by an ``.npz`` cache keyed on every input."""
    path = Path(cache_dir) / f"heston-{cache_key(params, grid, n_paths, seed)}.npz"
    if path.exists():
        with np.load(path) as data:
            return PathBatch(data["prices"], data["variances"], seed, params, grid)
    batch = simulate_heston(params, grid, n_paths, seed, workers)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, prices=batch.prices, variances=batch.variances)
    tmp.replace(path)
    return batch
