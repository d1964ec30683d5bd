"""Concurrent teacher-student PPO for partially observable locomotion, at desk scale."""
from .algo import AlgoConfig, Mode, Trainer
from .config import RunConfig
from .networks import EnvDims, NetworkConfig, Networks

__version__ = "0.1.0"
__all__ = ["AlgoConfig", "Mode", "Trainer", "RunConfig", "EnvDims", "NetworkConfig", "Networks"]
