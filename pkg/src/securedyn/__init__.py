"""Privacy-preserving federated intrusion detection with homomorphic
aggregation, update compression and GMM-based auditing."""

from .config import ConfigError, ExperimentConfig, parse_config
from .federation import FederationState, RoundMetrics, compute_metrics, init_state, run_experiment, run_round

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "FederationState",
    "RoundMetrics",
    "compute_metrics",
    "init_state",
    "parse_config",
    "run_experiment",
    "run_round",
]
__version__ = "0.1.0"
