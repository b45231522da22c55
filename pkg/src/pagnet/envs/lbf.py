"""Level-based foraging grid world.

Agents and foods carry skill levels; a food is collected when the combined
level of all agents simultaneously loading next to it reaches its level. Team
reward per collection is the food level, normalized so that the maximum
episode return is 1. Vision is limited to a Chebyshev radius.

State encoding: per agent (x, y, level) and per food (x, y, level, alive),
all scaled to [0, 1]. Observations are compacted gathers of the state: the
agent's own block first, then blocks of visible agents/foods in fixed entity
order, zero-padded to the common length.
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

NONE, UP, DOWN, LEFT, RIGHT, LOAD = range(6)
_MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}
MAX_AGENT_LEVEL = 3


class ForagingEnv(Env):
    name = "lbf"

    def __init__(self, grid=8, agents=3, foods=2, sight=2, horizon=50):
        if grid < 2 or agents < 1 or foods < 1 or sight < 0 or horizon < 1:
            raise ConfigurationError("invalid foraging parameters")
        if agents + foods > grid * grid:
            raise ConfigurationError(
                f"grid {grid}x{grid} too small for {agents} agents + {foods} foods"
            )
        self.grid = int(grid)
        self.n_foods = int(foods)
        self.sight = int(sight)
        n = int(agents)
        self._level_scale = float(MAX_AGENT_LEVEL * n)
        L = 3 * n + 4 * self.n_foods
        self.spec = EnvSpec(
            n_agents=n,
            n_actions=6,
            obs_len=L,  # worst case: everything visible
            state_len=L,
            horizon=int(horizon),
        )
        self._done = True
        self._t = 0

    def param_key(self) -> str:
        return (
            f"grid={self.grid}|foods={self.n_foods}|sight={self.sight}"
        )

    # -- episode ----------------------------------------------------------

    def reset(self, seed: int) -> StepResult:
        if seed < 0:
            raise ConfigurationError("seed must be >= 0")
        rng = np.random.default_rng(seed)
        n = self.spec.n_agents
        cells = rng.choice(self.grid * self.grid, size=n + self.n_foods, replace=False)
        xy = np.stack([cells % self.grid, cells // self.grid], axis=1)
        self._agent_pos = xy[:n].astype(np.int64)
        self._food_pos = xy[n:].astype(np.int64)
        self._agent_level = rng.integers(1, MAX_AGENT_LEVEL + 1, size=n)
        total = int(self._agent_level.sum())
        self._food_level = rng.integers(1, total + 1, size=self.n_foods)
        self._food_alive = np.ones(self.n_foods, dtype=bool)
        self._total_food_level = float(self._food_level.sum())
        self._t = 0
        self._done = False
        return self._result(reward=0.0)

    def step(self, joint_action) -> StepResult:
        avail = self._avail()
        joint_action = self._check_actions(joint_action, avail, self._done)
        n = self.spec.n_agents

        # movement, resolved in agent-index order; blocked moves stay in place
        occupied = {tuple(p) for p in self._agent_pos}
        food_cells = {
            tuple(p) for p, alive in zip(self._food_pos, self._food_alive) if alive
        }
        for i, a in enumerate(joint_action):
            if a not in _MOVES:
                continue
            dx, dy = _MOVES[a]
            tgt = (self._agent_pos[i][0] + dx, self._agent_pos[i][1] + dy)
            if (
                0 <= tgt[0] < self.grid
                and 0 <= tgt[1] < self.grid
                and tgt not in occupied
                and tgt not in food_cells
            ):
                occupied.discard(tuple(self._agent_pos[i]))
                occupied.add(tgt)
                self._agent_pos[i] = tgt

        # loading: sum levels of all agents loading adjacent to each food
        reward = 0.0
        for f in range(self.n_foods):
            if not self._food_alive[f]:
                continue
            loaders = [
                i
                for i, a in enumerate(joint_action)
                if a == LOAD and self._adjacent(self._agent_pos[i], self._food_pos[f])
            ]
            if loaders and self._agent_level[loaders].sum() >= self._food_level[f]:
                self._food_alive[f] = False
                reward += float(self._food_level[f]) / self._total_food_level

        self._t += 1
        if not self._food_alive.any() or self._t >= self.spec.horizon:
            self._done = True
        return self._result(reward=reward)

    @staticmethod
    def _adjacent(a, b) -> bool:
        return abs(int(a[0]) - int(b[0])) + abs(int(a[1]) - int(b[1])) == 1

    def _avail(self) -> np.ndarray:
        n = self.spec.n_agents
        avail = np.zeros((n, 6), dtype=bool)
        avail[:, NONE] = True
        occupied = {tuple(p) for p in self._agent_pos}
        food_cells = {
            tuple(p) for p, alive in zip(self._food_pos, self._food_alive) if alive
        }
        for i in range(n):
            for a, (dx, dy) in _MOVES.items():
                tgt = (self._agent_pos[i][0] + dx, self._agent_pos[i][1] + dy)
                avail[i, a] = (
                    0 <= tgt[0] < self.grid
                    and 0 <= tgt[1] < self.grid
                    and tgt not in occupied
                    and tgt not in food_cells
                )
            avail[i, LOAD] = any(
                self._food_alive[f]
                and self._adjacent(self._agent_pos[i], self._food_pos[f])
                for f in range(self.n_foods)
            )
        return avail

    def _result(self, reward: float) -> StepResult:
        state = GlobalState(self._encode_state())
        return StepResult(
            obs=self.observation_set(state),
            state=state,
            reward=reward,
            done=self._done,
            avail=self._avail(),
            t=self._t,
        )

    def _encode_state(self) -> np.ndarray:
        out = np.zeros(self.spec.state_len, dtype=np.float64)
        c = self.grid - 1
        for i in range(self.spec.n_agents):
            out[3 * i : 3 * i + 3] = (
                self._agent_pos[i][0] / c,
                self._agent_pos[i][1] / c,
                self._agent_level[i] / self._level_scale,
            )
        base = 3 * self.spec.n_agents
        for f in range(self.n_foods):
            if self._food_alive[f]:
                out[base + 4 * f : base + 4 * f + 4] = (
                    self._food_pos[f][0] / c,
                    self._food_pos[f][1] / c,
                    self._food_level[f] / self._level_scale,
                    1.0,
                )
        return out

    # -- observation operator ----------------------------------------------

    def observe(self, state, agent: int):
        vals = state_values(state)
        n = self.spec.n_agents
        c = self.grid - 1
        ax = vals[3 * agent] * c
        ay = vals[3 * agent + 1] * c

        def visible(x_scaled, y_scaled):
            return (
                max(abs(x_scaled * c - ax), abs(y_scaled * c - ay)) <= self.sight + 1e-9
            )

        idx: list[int] = list(range(3 * agent, 3 * agent + 3))
        for j in range(n):
            if j == agent:
                continue
            if visible(vals[3 * j], vals[3 * j + 1]):
                idx.extend(range(3 * j, 3 * j + 3))
        base = 3 * n
        for f in range(self.n_foods):
            s = base + 4 * f
            if vals[s + 3] > 0.5 and visible(vals[s], vals[s + 1]):
                idx.extend(range(s, s + 4))

        gather_row = np.asarray(idx, dtype=np.int64)
        obs_row = np.zeros(self.spec.obs_len, dtype=np.float64)
        obs_row[: len(idx)] = vals[gather_row]
        mask_row = np.zeros(self.spec.state_len, dtype=np.uint8)
        mask_row[gather_row] = 1
        return obs_row, mask_row, gather_row

    def state_layout(self) -> StateLayout:
        segs = [
            Segment(f"agent{i}", 3 * i, 3 * i + 3) for i in range(self.spec.n_agents)
        ]
        base = 3 * self.spec.n_agents
        segs += [
            Segment(f"food{f}", base + 4 * f, base + 4 * f + 4)
            for f in range(self.n_foods)
        ]
        return StateLayout(segments=segs)

    def success(self, episode_return: float, final_state) -> bool:
        vals = state_values(final_state)
        base = 3 * self.spec.n_agents
        alive = vals[base + 3 :: 4][: self.n_foods]
        return bool((alive < 0.5).all())

    def liveness(self, state) -> np.ndarray:
        """Normalized skill level; static per episode but uniform across envs."""
        vals = state_values(state)
        return np.array(
            [vals[3 * i + 2] * self._level_scale / MAX_AGENT_LEVEL
             for i in range(self.spec.n_agents)]
        )
