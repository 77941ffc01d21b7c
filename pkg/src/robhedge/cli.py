"""Command-line entry point: ``robhedge {simulate,train,evaluate,price,sweep}``.

Every command writes into ``--out``: the effective configuration
(``config.txt``), a provenance ``manifest.json`` and its CSV outputs. Failures
print one JSON line ``{"error": ..., "message": ...}`` to stderr and exit
with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, parse_text
from .errors import ContractError, DomainError, ParameterError, TrainingError
from .evaluation import (NeuralStrategy, detect_phase_transition, evaluate_policy,
                         matched_bs_strategy, phase_sweep, pricing_table, write_pnl,
                         write_rows, write_sweep, write_tv)
from .hedging_env import feature_dim
from .market_sim import simulate_heston
from .nn import load_checkpoint, save_checkpoint
from .training import train_nonrobust, train_robust

log = logging.getLogger("robhedge")

# flag name -> dotted config key
OVERRIDES = {
    "s0": "market.s0", "v0": "market.v0", "mu": "market.mu", "kappa": "market.kappa",
    "theta": "market.theta", "xi": "market.xi", "rho": "market.rho",
    "option": "option.kind", "strike": "option.strike", "barrier": "option.barrier",
    "alpha": "risk.alpha", "beta": "risk.beta", "p_weight": "risk.p_weight",
    "cost": "cost.c", "epsilon": "robust.epsilon", "iterations": "train.iterations",
    "batch_size": "train.batch_size", "lr": "train.lr_policy", "n_paths": "eval.n_paths",
    "eval_seed": "eval.seed", "target": "price.target",
}
FLOAT_FLAGS = {"s0", "v0", "mu", "kappa", "theta", "xi", "rho", "strike", "barrier", "alpha",
               "beta", "p_weight", "cost", "epsilon", "lr", "target"}
INT_FLAGS = {"iterations", "batch_size", "n_paths", "eval_seed"}

PRICING_FIELDS = ["scheme", "option", "price", "cvar_reported"]


class _Run:
    """Output directory bookkeeping shared by all commands."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.start = time.time()
        self.files: list[str] = []
        self.extra: dict = {}
        out.mkdir(parents=True, exist_ok=True)
        self.write_text("config.txt", cfg.to_text())

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def finish(self) -> None:
        manifest = {"command": self.command, "tool": "robhedge", "version": __version__,
                    "seed": self.cfg.run.seed, "mode": self.cfg.run.mode,
                    "wall_time_s": round(time.time() - self.start, 3),
                    "files": sorted(set(self.files)), "config": self.cfg.to_text(),
                    **self.extra}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def cmd_simulate(cfg: ExperimentConfig, run: _Run, args) -> None:
    batch = simulate_heston(cfg.market, cfg.grid, cfg.sim.n_paths, cfg.run.seed)
    batch.to_csv(run.path("paths.csv"))


def cmd_train(cfg: ExperimentConfig, run: _Run, args) -> None:
    gamma = cfg.risk.distortion()
    train = cfg.train_config
    progress = (lambda it, res: log.info("iter %d risk %.5f", it, res.history[-1]["risk_theta"])
                if it % 50 == 0 else None)
    if cfg.run.mode == "robust":
        res = train_robust(train, cfg.robust, cfg.market, cfg.grid, cfg.option, cfg.cost.c,
                           gamma, callback=progress)
        nets = {"policy": res.policy, "adversary": res.adversary}
        run.extra["final_lambda"], run.extra["final_mu"] = res.robust.lam, res.robust.mu
    else:
        res = train_nonrobust(train, cfg.market, cfg.grid, cfg.option, cfg.cost.c, gamma,
                              callback=progress)
        nets = {"policy": res.policy}
    save_checkpoint(run.path("checkpoint.ckpt"), nets,
                    {"cost": cfg.cost.c, "price_scale": cfg.market.s0,
                     "config": cfg.to_text()})
    res.write_history(run.path("history.csv"))
    tail = res.history[-max(1, len(res.history) // 10):]
    run.extra["final_risk"] = sum(r["risk_theta"] for r in tail) / len(tail)


def _strategy(cfg: ExperimentConfig, checkpoint: str):
    if checkpoint is None:
        raise ContractError("--checkpoint is required for this command")
    nets, meta = load_checkpoint(checkpoint)
    if "policy" not in nets:
        raise ContractError(f"{checkpoint}: no policy network")
    return NeuralStrategy(nets["policy"], nets.get("adversary"),
                          price_scale=meta.get("price_scale", cfg.market.s0),
                          name="robust" if "adversary" in nets else "policy"), meta


def cmd_evaluate(cfg: ExperimentConfig, run: _Run, args) -> None:
    strategy, meta = _strategy(cfg, args.checkpoint)
    if strategy.policy.spec.input_dim != feature_dim(cfg.cost.c):
        raise ContractError(
            f"policy trained with cost {meta.get('cost')} has {strategy.policy.spec.input_dim} "
            f"inputs; cost.c={cfg.cost.c} provides {feature_dim(cfg.cost.c)}")
    rep = evaluate_policy(strategy, cfg.market, cfg.grid, cfg.option, cfg.cost.c,
                          cfg.eval.n_paths, cfg.eval.seed, cfg.risk.distortion())
    write_pnl(run.path("pnl.csv"), rep.wealth)
    write_tv(run.path("tv.csv"), rep.total_variation)
    run.write_text("report.json", json.dumps(rep.summary(), indent=2, sort_keys=True) + "\n")
    run.extra["risk"], run.extra["risk_se"] = rep.risk, rep.risk_se


def cmd_price(cfg: ExperimentConfig, run: _Run, args) -> None:
    strategy, _ = _strategy(cfg, args.checkpoint)
    bs = matched_bs_strategy(cfg.market, cfg.grid, cfg.price.n_paths, cfg.price.seed)
    actual = cfg.market.replace(kappa=cfg.price.actual_kappa, rho=cfg.price.actual_rho)
    rows = pricing_table([strategy, bs], cfg.option, cfg.cost.c, cfg.market, actual, cfg.grid,
                         bs.sigma, cfg.price.target, cfg.price.n_paths, cfg.price.seed,
                         cfg.price.alpha)
    write_rows(run.path("pricing.csv"), PRICING_FIELDS, rows)
    run.extra["matched_sigma"] = bs.sigma


def cmd_sweep(cfg: ExperimentConfig, run: _Run, args) -> None:
    rows = phase_sweep(cfg.option, cfg.cost.c, cfg.market, cfg.grid, cfg.sweep.p_grid,
                       cfg.train_config, cfg.sweep.alpha, cfg.sweep.beta,
                       cfg.sweep.eval_paths, cfg.eval.seed, cfg.sweep.workers)
    write_sweep(run.path("sweep.csv"), rows)
    if len(rows) >= 2:
        run.extra["phase_transition_p"] = detect_phase_transition(rows)


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "price": cmd_price, "sweep": cmd_sweep}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robhedge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="section.key = value file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--mode", choices=["nonrobust", "robust"])
    parser.add_argument("--checkpoint", help="checkpoint for evaluate/price")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="any dotted config key, e.g. --set train.lr_decay=0.1")
    parser.add_argument("-v", "--verbose", action="store_true")
    for flag in OVERRIDES:
        kind = float if flag in FLOAT_FLAGS else int if flag in INT_FLAGS else str
        parser.add_argument("--" + flag.replace("_", "-"), dest=flag, type=kind)
    return parser


def _overrides(args) -> dict:
    values = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        key, raw = (s.strip() for s in item.split("=", 1))
        values.update(parse_text(f"{key} = {raw}"))
    for flag, key in OVERRIDES.items():
        if getattr(args, flag) is not None:
            values[key] = getattr(args, flag)
    if args.seed is not None:
        values["run.seed"] = args.seed
    if args.mode is not None:
        values["run.mode"] = args.mode
    return values


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        cfg = load_config(args.config, _overrides(args))
        run = _Run(args.command, cfg, Path(args.out))
        COMMANDS[args.command](cfg, run, args)
        run.finish()
    except (ConfigError, ParameterError, DomainError, ContractError, TrainingError,
            OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
