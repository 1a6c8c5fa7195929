"""Deterministic simulator of a committee-vote proof-of-stake consensus
protocol, its simplified two-step majority variant, and two fork attacks."""

from .adversary import AdversaryConfig
from .engine import RunMetrics, ScenarioConfig, run_scenario
from .sortition import ProtocolParams

__version__ = "0.1.0"

__all__ = [
    "AdversaryConfig",
    "ProtocolParams",
    "RunMetrics",
    "ScenarioConfig",
    "run_scenario",
    "__version__",
]
