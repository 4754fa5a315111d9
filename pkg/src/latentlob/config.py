"""Experiment configuration and its INI-style file format.

Files have four sections::

    [model]    mu, lambda_w, nu (required), gamma, sign_mode, policy, zeta, psi,
               alpha, tick, max_depth, half_width, diffusion
    [meta]     style, phi, termination, q, duration, trader_policy,
               trader_zeta, trader_psi, fraction, post_horizon, max_trades
    [measure]  trades, max_lag, hurst_range, q_grid, q_fit_range, profile_every,
               markov_lags, markov_episodes, sweep_*, prop_* (propagator oracle)
    [run]      seed, replicas, threads, warmup_time, stationary_seed

All rates are in 1/s, prices in currency units.
"""
from __future__ import annotations

import configparser
import dataclasses
import enum
import math
from dataclasses import dataclass, field

from .flow import ConfigError, PolicyKind, SignMode

__all__ = ["ConfigError", "ExperimentConfig", "MetaOrderSpec", "MeasureConfig", "RunConfig",
           "MetaStyle", "Termination", "FullConfig", "parse_config", "load_config",
           "dump_config"]


class MetaStyle(enum.Enum):
    MARKET = "market"
    LIMIT = "limit"


class Termination(enum.Enum):
    FIXED_Q = "fixed_q"
    FIXED_T = "fixed_t"


def _policy(name):
    try:
        return PolicyKind[str(name).upper()]
    except KeyError:
        raise ConfigError(f"policy: unknown volume policy {name!r}") from None


@dataclass
class ExperimentConfig:
    """Model parameters. Defaults are the baseline regime."""

    mu: float = 0.1
    lambda_w: float = 5e-3
    nu: float = 1e-7
    gamma: float = 0.5
    sign_mode: str = "lmf"
    policy: str = "zeta"
    zeta: float | None = 0.95
    psi: float | None = None
    alpha: float = 0.0
    tick: float = 0.01
    max_depth: float = 1e6
    half_width: int | None = None
    diffusion: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("mu", "lambda_w", "nu", "tick"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name}: must be a positive rate, got {value!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha: must lie in [0, 1], got {self.alpha}")
        if self.sign_mode not in ("lmf", "iid"):
            raise ConfigError(f"sign_mode: expected 'lmf' or 'iid', got {self.sign_mode!r}")
        if self.sign_mode == "lmf" and not self.gamma > 0:
            raise ConfigError(f"gamma: must be positive, got {self.gamma}")
        kind = _policy(self.policy)
        if kind == PolicyKind.ZETA:
            if self.zeta is None or not self.zeta > 0:
                raise ConfigError(f"zeta: must be > 0 for the zeta policy, got {self.zeta}")
        elif kind == PolicyKind.PSI:
            if self.psi is None or not 0.0 <= self.psi <= 1.0:
                raise ConfigError(f"psi: must lie in [0, 1] for the psi policy, got {self.psi}")
        if self.half_width is not None and self.half_width < 4:
            raise ConfigError("half_width: must be >= 4 levels")
        if self.max_depth <= 0:
            raise ConfigError("max_depth: must be positive")

    @property
    def policy_kind(self):
        return _policy(self.policy)

    @property
    def policy_param(self):
        kind = self.policy_kind
        if kind == PolicyKind.ZETA:
            return float(self.zeta)
        if kind == PolicyKind.PSI:
            return float(self.psi)
        return 1.0

    @property
    def sign_kind(self):
        return SignMode.LMF if self.sign_mode == "lmf" else SignMode.IID

    @property
    def depth(self):
        """Stationary no-trade volume per level, ``lambda_w / nu``."""
        return self.lambda_w / self.nu

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class MetaOrderSpec:
    style: MetaStyle = MetaStyle.MARKET
    phi: float = 0.316
    termination: Termination = Termination.FIXED_Q
    q: int = 100
    duration: float | None = None
    trader_policy: str = "zeta"
    trader_zeta: float | None = 0.95
    trader_psi: float | None = None
    fraction: float = 0.5
    post_horizon: int = 0
    max_trades: int = 100_000

    def __post_init__(self):
        self.style = MetaStyle(self.style)
        self.termination = Termination(self.termination)
        self.validate()

    def validate(self):
        if not self.phi > 0:
            raise ConfigError(f"phi: must be positive, got {self.phi}")
        if self.style == MetaStyle.LIMIT:
            if not 0.0 < self.fraction <= 1.0:
                raise ConfigError(f"fraction: must lie in (0, 1], got {self.fraction}")
            if self.termination != Termination.FIXED_Q:
                raise ConfigError("termination: limit execution stops on a target volume")
        kind = _policy(self.trader_policy)
        if kind == PolicyKind.ZETA and (self.trader_zeta is None or not self.trader_zeta > 0):
            raise ConfigError("trader_zeta: must be > 0")
        if kind == PolicyKind.PSI and (self.trader_psi is None or not 0 <= self.trader_psi <= 1):
            raise ConfigError("trader_psi: must lie in [0, 1]")
        if self.termination == Termination.FIXED_Q and self.q < 0:
            raise ConfigError("q: must be >= 0")
        if self.termination == Termination.FIXED_T and not (self.duration and self.duration > 0):
            raise ConfigError("duration: must be > 0 for fixed_t termination")
        if self.post_horizon < 0:
            raise ConfigError("post_horizon: must be >= 0")

    @property
    def trader_kind(self):
        return _policy(self.trader_policy)

    @property
    def trader_param(self):
        kind = self.trader_kind
        if kind == PolicyKind.ZETA:
            return float(self.trader_zeta)
        if kind == PolicyKind.PSI:
            return float(self.trader_psi)
        return 1.0

    @property
    def participation(self):
        """Fraction of market orders coming from the trader, ``phi / (1 + phi)``."""
        return self.phi / (1.0 + self.phi)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class MeasureConfig:
    trades: int = 200_000
    max_lag: int = 10_000
    hurst_range: tuple = (100.0, 10_000.0)
    q_grid: tuple = (1, 2, 3, 5, 8, 13, 20, 32, 50, 79, 100)
    q_fit_range: tuple = (1.0, 100.0)
    profile_every: int = 50
    profile_max_offset: int = 400
    markov_lags: int = 200
    decay_early: int = 30
    sweep_param1: str = "gamma"
    sweep_values1: tuple = (0.5,)
    sweep_param2: str = "zeta"
    sweep_values2: tuple = (0.95,)
    markov_episodes: int = 200
    prop_beta: float | None = None      # None: (1 - gamma) / 2
    prop_g0: float = 1.0
    prop_t0: float = 1.0
    prop_signs: str = "lmf"
    prop_t_points: tuple = (10, 20, 50, 100, 200, 500, 1000)
    prop_paths: int = 10_000

    def __post_init__(self):
        if self.trades < 2:
            raise ConfigError("trades: need at least 2 trades")
        if self.max_lag < 1:
            raise ConfigError("max_lag: must be >= 1")
        if len(self.hurst_range) != 2 or len(self.q_fit_range) != 2:
            raise ConfigError("hurst_range / q_fit_range: expected two numbers")
        if self.prop_signs not in ("iid", "lmf"):
            raise ConfigError(f"prop_signs: expected 'iid' or 'lmf', got {self.prop_signs!r}")
        if not self.prop_t_points or min(self.prop_t_points) < 1:
            raise ConfigError("prop_t_points: need positive lags")


@dataclass
class RunConfig:
    seed: int = 12345
    replicas: int = 1
    threads: int = 1
    warmup_time: float | None = None
    stationary_seed: bool = True

    def warmup_for(self, model):
        if self.warmup_time is not None:
            return self.warmup_time
        return (0.2 if self.stationary_seed else 5.0) / model.nu


@dataclass
class FullConfig:
    model: ExperimentConfig = field(default_factory=ExperimentConfig)
    meta: MetaOrderSpec | None = None
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    run: RunConfig = field(default_factory=RunConfig)


_REQUIRED_MODEL = ("mu", "lambda_w", "nu")


def _convert(section, key, raw, target):
    raw = raw.strip()
    try:
        if target is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if target is tuple:
            return tuple(float(x) if any(c in x for c in ".eE") else int(x)
                         for x in raw.replace(",", " ").split())
        if raw.lower() in ("none", ""):
            return None
        return target(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _fill(cls, section_name, section, required=()):
    types = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        if "tuple" in t:
            types[f.name] = tuple
        elif "bool" in t:
            types[f.name] = bool
        elif "int" in t and "float" not in t:
            types[f.name] = int
        elif "float" in t:
            types[f.name] = float
        else:
            types[f.name] = str
    for key in required:
        if key not in section:
            raise ConfigError(f"[{section_name}] missing required key {key!r}")
    values = {}
    for key, raw in section.items():
        if key not in types:
            raise ConfigError(f"[{section_name}] unknown key {key!r}")
        values[key] = _convert(section_name, key, raw, types[key])
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{section_name}] {exc}") from None


def parse_config(text):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(parser.sections()) - {"model", "meta", "measure", "run"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    if "model" not in parser:
        raise ConfigError("missing [model] section")
    model = _fill(ExperimentConfig, "model", parser["model"], _REQUIRED_MODEL)
    meta = _fill(MetaOrderSpec, "meta", parser["meta"]) if "meta" in parser else None
    measure = _fill(MeasureConfig, "measure", parser["measure"]) if "measure" in parser else MeasureConfig()
    run = _fill(RunConfig, "run", parser["run"]) if "run" in parser else RunConfig()
    return FullConfig(model, meta, measure, run)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _fmt(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def dump_config(cfg):
    """Serialise a :class:`FullConfig` back to the INI format."""
    lines = []
    for name in ("model", "meta", "measure", "run"):
        obj = getattr(cfg, name)
        if obj is None:
            continue
        lines.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)
