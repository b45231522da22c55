from ..errors import ConfigurationError
from .base import (
    Env,
    EnvSpec,
    GlobalState,
    ObservationSet,
    Segment,
    StateLayout,
    StepResult,
    VisibilityMask,
)
from .hallway import HallwayEnv
from .lbf import ForagingEnv
from .synthetic import SliceViewEnv

__all__ = [
    "Env",
    "EnvSpec",
    "GlobalState",
    "ObservationSet",
    "Segment",
    "StateLayout",
    "StepResult",
    "VisibilityMask",
    "HallwayEnv",
    "ForagingEnv",
    "SliceViewEnv",
    "make_env",
]


def make_env(config: dict) -> Env:
    """Build an environment from a config mapping.

    Expected keys: ``env.name`` in {hallway, lbf, slices} plus a per-env
    parameter block (``hallway.lengths``, ``lbf.grid``, ...).
    """
    env_block = config.get("env", {})
    name = env_block.get("name") if isinstance(env_block, dict) else env_block
    if name == "hallway":
        block = config.get("hallway", {})
        return HallwayEnv(lengths=block.get("lengths", (4, 6, 8, 10)))
    if name == "lbf":
        block = config.get("lbf", {})
        return ForagingEnv(
            grid=block.get("grid", 8),
            agents=block.get("agents", 3),
            foods=block.get("foods", 2),
            sight=block.get("sight", 2),
            horizon=block.get("horizon", 50),
        )
    if name == "slices":
        block = config.get("slices", {})
        return SliceViewEnv(
            state_len=block.get("state_len", 12),
            n_agents=block.get("agents", 2),
            latent=block.get("latent", 4),
            horizon=block.get("horizon", 8),
        )
    raise ConfigurationError(f"unknown env name: {name!r}")
