"""Dec-POMDP environment kernel.

Environments expose, besides the usual reset/step pair, a pure observation
operator together with a visibility mask so that generated global states can
be projected back onto each agent's view.
"""

from __future__ import annotations

import abc
import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    n_actions: int
    obs_len: int
    state_len: int
    horizon: int

    def __post_init__(self):
        for name in ("n_agents", "n_actions", "obs_len", "state_len", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class ObservationSet:
    """Per-timestep matrix of agent observations, zero-padded to a common length."""

    values: np.ndarray  # (n, l) float64
    raw_lengths: list[int]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class GlobalState:
    values: np.ndarray  # (L,) float64
    is_generated: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class StepResult:
    obs: ObservationSet
    state: GlobalState
    reward: float
    done: bool
    avail: np.ndarray  # (n, n_actions) bool
    t: int


@dataclass
class VisibilityMask:
    """Which state entries each agent currently sees, and where they land in its obs.

    ``gather[i]`` lists state indices; observation coordinate k of agent i is a
    copy of ``state[gather[i][k]]``. Built from the true state and treated as a
    constant (no gradient flows through mask construction).
    """

    mask: np.ndarray  # (n, L) uint8
    gather: list[np.ndarray]  # per agent, int indices into the state vector


@dataclass(frozen=True)
class Segment:
    name: str
    start: int
    stop: int


@dataclass
class StateLayout:
    segments: list[Segment] = field(default_factory=list)

    def covers(self, state_len: int) -> bool:
        seen = np.zeros(state_len, dtype=bool)
        for seg in self.segments:
            if seen[seg.start : seg.stop].any():
                return False
            seen[seg.start : seg.stop] = True
        return bool(seen.all())


class Env(abc.ABC):
    """One instance per rollout; no shared mutable state between instances."""

    spec: EnvSpec

    @abc.abstractmethod
    def reset(self, seed: int) -> StepResult: ...

    @abc.abstractmethod
    def step(self, joint_action) -> StepResult: ...

    @abc.abstractmethod
    def observe(self, state, agent: int):
        """Pure map (state, agent) -> (obs_row, mask_row, gather_row)."""

    @abc.abstractmethod
    def state_layout(self) -> StateLayout: ...

    @abc.abstractmethod
    def liveness(self, state) -> np.ndarray:
        """Per-agent progress/health scalar in [0, 1] for trace figures."""

    def visibility(self, state) -> VisibilityMask:
        n, L = self.spec.n_agents, self.spec.state_len
        mask = np.zeros((n, L), dtype=np.uint8)
        gather = []
        for i in range(n):
            _, mask_row, gather_row = self.observe(state, i)
            mask[i] = mask_row
            gather.append(np.asarray(gather_row, dtype=np.int64))
        return VisibilityMask(mask=mask, gather=gather)

    def observation_set(self, state) -> ObservationSet:
        n, l = self.spec.n_agents, self.spec.obs_len
        values = np.zeros((n, l), dtype=np.float64)
        raw_lengths = []
        for i in range(n):
            row, _, gather_row = self.observe(state, i)
            values[i] = row
            raw_lengths.append(len(gather_row))
        return ObservationSet(values=values, raw_lengths=raw_lengths)

    def spec_key(self) -> str:
        """Canonical description used for checkpoint/env compatibility hashes."""
        s = self.spec
        return (
            f"{self.name}|n={s.n_agents}|A={s.n_actions}|l={s.obs_len}"
            f"|L={s.state_len}|h={s.horizon}|{self.param_key()}"
        )

    def env_hash(self) -> str:
        return hashlib.sha256(self.spec_key().encode()).hexdigest()[:16]

    name: str = "env"

    def param_key(self) -> str:
        return ""

    def success(self, episode_return: float, final_state) -> bool:
        """Whether an episode met the env's win condition."""
        return False

    # -- shared guards -------------------------------------------------

    def _check_actions(self, joint_action, avail, done: bool):
        if done:
            raise UsageError("step() called after episode end")
        joint_action = list(joint_action)
        if len(joint_action) != self.spec.n_agents:
            raise UsageError(
                f"expected {self.spec.n_agents} actions, got {len(joint_action)}"
            )
        for i, a in enumerate(joint_action):
            if not (0 <= a < self.spec.n_actions):
                raise UsageError(f"agent {i}: action {a} out of range")
            if not avail[i, a]:
                raise UsageError(f"agent {i}: action {a} unavailable")
        return joint_action


def state_values(state) -> np.ndarray:
    if isinstance(state, GlobalState):
        return state.values
    return np.asarray(state, dtype=np.float64)
