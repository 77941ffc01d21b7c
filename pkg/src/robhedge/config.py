"""Experiment configuration as flat ``section.key = value`` text.

Blank lines and ``#`` comments are ignored. Values are Python literals
(numbers, strings, booleans, lists); bare words are read as strings. The
effective configuration is written back in the same format, so a run can be
repeated from its echo.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields, replace

from .errors import ParameterError
from .instruments import BarrierOptionSpec
from .market_sim import HestonParams, TimeGrid
from .risk import DistortionSpec
from .training import RobustConfig, TrainConfig


class ConfigError(ValueError):
    """Malformed configuration text or an unknown/invalid key."""


MODES = ("nonrobust", "robust")


@dataclass(frozen=True)
class RiskSection:
    alpha: float = 0.2
    beta: float = 0.9
    p_weight: float = 1.0

    def distortion(self) -> DistortionSpec:
        beta = self.alpha if self.p_weight == 1 else self.beta
        return DistortionSpec.alpha_beta(self.alpha, max(beta, self.alpha), self.p_weight)


@dataclass(frozen=True)
class CostSection:
    c: float = 0.0


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    mode: str = "nonrobust"


@dataclass(frozen=True)
class SimSection:
    n_paths: int = 1000


@dataclass(frozen=True)
class EvalSection:
    n_paths: int = 100_000
    seed: int = 12345


@dataclass(frozen=True)
class PriceSection:
    target: float = -0.5
    alpha: float = 0.2
    actual_kappa: float = 1.0
    actual_rho: float = -0.1
    n_paths: int = 100_000
    seed: int = 0


@dataclass(frozen=True)
class SweepSection:
    p_grid: tuple = (0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0)
    alpha: float = 0.1
    beta: float = 0.9
    workers: int = 1
    eval_paths: int = 50_000


SECTIONS = {
    "run": RunSection, "market": HestonParams, "grid": TimeGrid, "option": BarrierOptionSpec,
    "risk": RiskSection, "cost": CostSection, "train": TrainConfig, "robust": RobustConfig,
    "sim": SimSection, "eval": EvalSection, "price": PriceSection, "sweep": SweepSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    market: HestonParams = field(default_factory=HestonParams)
    grid: TimeGrid = field(default_factory=TimeGrid)
    option: BarrierOptionSpec = field(default_factory=BarrierOptionSpec)
    risk: RiskSection = field(default_factory=RiskSection)
    cost: CostSection = field(default_factory=CostSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    robust: RobustConfig = field(default_factory=RobustConfig)
    sim: SimSection = field(default_factory=SimSection)
    eval: EvalSection = field(default_factory=EvalSection)
    price: PriceSection = field(default_factory=PriceSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self):
        if self.run.mode not in MODES:
            raise ConfigError(f"run.mode: must be one of {MODES}")
        if self.option.maturity != self.grid.maturity:
            raise ConfigError("option.maturity: must equal grid.maturity")
        if self.cost.c < 0:
            raise ConfigError("cost.c: must be >= 0")

    @property
    def train_config(self) -> TrainConfig:
        """Training settings with the global seed applied."""
        return replace(self.train, seed=self.run.seed)

    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                value = getattr(section, f.name)
                if isinstance(value, tuple):
                    value = list(value)
                lines.append(f"{name}.{f.name} = {value!r}")
        return "\n".join(lines) + "\n"


def _literal(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def parse_text(text: str) -> dict[str, object]:
    """Dotted key -> raw Python value; raises ConfigError naming bad lines."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        low = raw.lower()
        out[key] = low == "true" if low in ("true", "false") else _literal(raw)
    return out


def build_config(values: dict[str, object], base: ExperimentConfig | None = None
                 ) -> ExperimentConfig:
    """Apply dotted-key overrides on top of ``base`` (defaults if omitted)."""
    base = base or ExperimentConfig()
    changes: dict[str, dict] = {}
    for key, value in values.items():
        if key.count(".") != 1:
            raise ConfigError(f"{key}: keys must look like section.key")
        section, name = key.split(".")
        if section not in SECTIONS:
            raise ConfigError(f"{key}: unknown section {section!r}")
        current = getattr(base, section)
        known = {f.name for f in fields(current)}
        if name not in known:
            raise ConfigError(f"{key}: unknown key")
        changes.setdefault(section, {})[name] = _coerce(key, value, getattr(current, name))
    sections = {}
    for section, kv in changes.items():
        try:
            sections[section] = replace(getattr(base, section), **kv)
        except (ParameterError, ValueError, TypeError) as exc:
            raise ConfigError(f"{section}.{next(iter(kv))}: {exc}") from exc
    return replace(base, **sections)


def load_config(path=None, overrides: dict[str, object] | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_text(fh.read()))
    values.update(overrides or {})
    return build_config(values)
