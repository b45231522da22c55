"""Multi-agent RL lab: attention-weighted communication, adversarial
global-state completion, and monotonic value mixing on desk-scale
cooperative environments."""

from . import checkpoint, comm, completion, envs, evaluation, policy, training
from .errors import (
    CheckpointError,
    ConfigurationError,
    InputError,
    PagnetError,
    TrainingFault,
    UsageError,
)

__all__ = [
    "checkpoint",
    "comm",
    "completion",
    "envs",
    "evaluation",
    "policy",
    "training",
    "PagnetError",
    "ConfigurationError",
    "UsageError",
    "InputError",
    "CheckpointError",
    "TrainingFault",
]

__version__ = "0.1.0"
