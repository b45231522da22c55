"""Synthetic slice-view environment for completion-network fixtures.

The state is a structured random vector (a fixed linear map of a small latent
draw, squashed to [-1, 1]); each agent observes a fixed contiguous slice of
it. Dynamics are trivial: every step draws a fresh state, actions are
ignored, reward is 0. Useful for training and testing the GAN in isolation.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .base import (
    Env,
    EnvSpec,
    GlobalState,
    Segment,
    StateLayout,
    StepResult,
    state_values,
)


class SliceViewEnv(Env):
    name = "slices"

    def __init__(self, state_len=12, n_agents=2, latent=4, horizon=8):
        if state_len % n_agents != 0:
            raise ConfigurationError("state_len must divide evenly among agents")
        self.slice_len = state_len // n_agents
        self.latent = int(latent)
        self.spec = EnvSpec(
            n_agents=n_agents,
            n_actions=2,
            obs_len=self.slice_len,
            state_len=state_len,
            horizon=horizon,
        )
        # fixed mixing map; independent of the episode seed
        mix_rng = np.random.default_rng(12345)
        self._mix = mix_rng.normal(size=(state_len, latent)) / np.sqrt(latent)
        self._rng = None
        self._done = True
        self._t = 0

    def param_key(self) -> str:
        return f"latent={self.latent}"

    def _draw(self) -> np.ndarray:
        z = self._rng.normal(size=self.latent)
        return np.tanh(self._mix @ z)

    def reset(self, seed: int) -> StepResult:
        if seed < 0:
            raise ConfigurationError("seed must be >= 0")
        self._rng = np.random.default_rng(seed)
        self._state = self._draw()
        self._t = 0
        self._done = False
        return self._result()

    def step(self, joint_action) -> StepResult:
        avail = np.ones((self.spec.n_agents, 2), dtype=bool)
        self._check_actions(joint_action, avail, self._done)
        self._state = self._draw()
        self._t += 1
        if self._t >= self.spec.horizon:
            self._done = True
        return self._result()

    def _result(self) -> StepResult:
        state = GlobalState(self._state.copy())
        return StepResult(
            obs=self.observation_set(state),
            state=state,
            reward=0.0,
            done=self._done,
            avail=np.ones((self.spec.n_agents, 2), dtype=bool),
            t=self._t,
        )

    def observe(self, state, agent: int):
        vals = state_values(state)
        gather_row = np.arange(
            agent * self.slice_len, (agent + 1) * self.slice_len, dtype=np.int64
        )
        obs_row = vals[gather_row].copy()
        mask_row = np.zeros(self.spec.state_len, dtype=np.uint8)
        mask_row[gather_row] = 1
        return obs_row, mask_row, gather_row

    def state_layout(self) -> StateLayout:
        return StateLayout(
            segments=[
                Segment(f"slice{i}", i * self.slice_len, (i + 1) * self.slice_len)
                for i in range(self.spec.n_agents)
            ]
        )

    def liveness(self, state) -> np.ndarray:
        return np.ones(self.spec.n_agents)
