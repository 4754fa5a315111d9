"""Latent order book simulator for studying price diffusion and meta-order impact."""
from .book import OrderBook, TradeRecord, WindowExhausted
from .config import ConfigError, ExperimentConfig, MetaOrderSpec, MetaStyle, Termination
from .engine import ImpactTrajectory, Simulation, run_meta, run_meta_limit, run_meta_market
from .flow import BUY, SELL, PolicyKind, SignMode, SignStream, VolumePolicy
from .kernel import BACKEND

__version__ = "0.1.0"

__all__ = ["OrderBook", "TradeRecord", "WindowExhausted", "ConfigError", "ExperimentConfig",
           "MetaOrderSpec", "MetaStyle", "Termination", "ImpactTrajectory", "Simulation",
           "run_meta", "run_meta_limit", "run_meta_market", "BUY", "SELL", "PolicyKind",
           "SignMode", "SignStream", "VolumePolicy", "BACKEND", "__version__"]
