"""Hallway: n agents on private chains must reach the shared goal cell together.

Each agent i lives on a chain indexed 1..len_i with the goal g at index 0 and
only observes its own position (one-hot). The team wins reward 10 only when
every agent steps onto g on the same timestep; any earlier arrival ends the
episode with reward 0.
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

TOWARD_G, AWAY_FROM_G, STAY = 0, 1, 2


class HallwayEnv(Env):
    name = "hallway"

    def __init__(self, lengths=(4, 6, 8, 10)):
        lengths = tuple(int(x) for x in lengths)
        if len(lengths) < 1 or any(x < 1 for x in lengths):
            raise ConfigurationError(f"hallway lengths must be positive: {lengths}")
        self.lengths = lengths
        n = len(lengths)
        # state: concatenated per-agent one-hot over {g, 1..len_i}
        self._seg_starts = np.cumsum([0] + [x + 1 for x in lengths[:-1]])
        L = sum(x + 1 for x in lengths)
        l = max(lengths) + 1
        self.spec = EnvSpec(
            n_agents=n,
            n_actions=3,
            obs_len=l,
            state_len=L,
            horizon=max(lengths) + 10,
        )
        self._pos = None
        self._t = 0
        self._done = True

    def param_key(self) -> str:
        return f"lengths={list(self.lengths)}"

    # -- core ------------------------------------------------------------

    def reset(self, seed: int) -> StepResult:
        if seed < 0:
            raise ConfigurationError("seed must be >= 0")
        rng = np.random.default_rng(seed)
        self._pos = np.array(
            [rng.integers(1, x + 1) for x in self.lengths], dtype=np.int64
        )
        self._t = 0
        self._done = False
        return self._result(reward=0.0)

    def step(self, joint_action) -> StepResult:
        avail = self._avail()
        joint_action = self._check_actions(joint_action, avail, self._done)
        for i, a in enumerate(joint_action):
            if a == TOWARD_G:
                self._pos[i] = max(0, self._pos[i] - 1)
            elif a == AWAY_FROM_G:
                self._pos[i] = min(self.lengths[i], self._pos[i] + 1)
        self._t += 1
        reward = 0.0
        if (self._pos == 0).any():
            self._done = True
            if (self._pos == 0).all():
                reward = 10.0
        elif self._t >= self.spec.horizon:
            self._done = True
        return self._result(reward=reward)

    def _avail(self) -> np.ndarray:
        return np.ones((self.spec.n_agents, 3), dtype=bool)

    def _result(self, reward: float) -> StepResult:
        state = GlobalState(self._encode_state(self._pos))
        return StepResult(
            obs=self.observation_set(state),
            state=state,
            reward=reward,
            done=self._done,
            avail=self._avail(),
            t=self._t,
        )

    def _encode_state(self, pos) -> np.ndarray:
        out = np.zeros(self.spec.state_len, dtype=np.float64)
        for i, p in enumerate(pos):
            out[self._seg_starts[i] + p] = 1.0
        return out

    # -- observation operator ---------------------------------------------

    def observe(self, state, agent: int):
        vals = state_values(state)
        start = self._seg_starts[agent]
        width = self.lengths[agent] + 1
        gather_row = np.arange(start, start + width, dtype=np.int64)
        obs_row = np.zeros(self.spec.obs_len, dtype=np.float64)
        obs_row[:width] = vals[gather_row]
        mask_row = np.zeros(self.spec.state_len, dtype=np.uint8)
        mask_row[gather_row] = 1
        return obs_row, mask_row, gather_row

    def state_layout(self) -> StateLayout:
        segs = [
            Segment(f"agent{i}_pos", int(s), int(s) + x + 1)
            for i, (s, x) in enumerate(zip(self._seg_starts, self.lengths))
        ]
        return StateLayout(segments=segs)

    def success(self, episode_return: float, final_state) -> bool:
        return episode_return >= 9.5

    def liveness(self, state) -> np.ndarray:
        """Progress toward g: 1 at the goal, 0 at the far end of the chain."""
        vals = state_values(state)
        out = np.zeros(self.spec.n_agents)
        for i, x in enumerate(self.lengths):
            seg = vals[self._seg_starts[i] : self._seg_starts[i] + x + 1]
            p = int(np.argmax(seg))
            out[i] = 1.0 - p / x
        return out
