"""Training orchestration: replay buffer, rollout, joint GAN + TD updates,
target synchronization, pretraining, and run modes.

Modes:
  pagnet     full pipeline (learned weights, generated-state conditioning)
  pagnet_fc  full communication: weights pinned to 0, messages pass untouched
  pagnet_pt  load pretrained weight net + completion nets, freeze both
  qmix       no communication, true-state conditioning, no GAN losses
"""

from __future__ import annotations

import csv
import random
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .comm import WeightNetwork, receiver_mix
from .completion import (
    Discriminator,
    Generator,
    gan_step_losses,
    generate_state,
    vis_to_tensors,
)
from .envs import Env, make_env
from .errors import ConfigurationError, TrainingFault
from .policy import AgentDecoder, MonotonicMixer, PolicyNets, TdBatch, select_action, td_loss

MODES = ("pagnet", "pagnet_fc", "pagnet_pt", "qmix")

METRICS_COLUMNS = [
    "step", "episode", "mode", "seed", "epsilon", "td_loss", "d_loss",
    "g_loss", "mse_loss", "train_return", "test_return", "test_win_rate",
    "mean_W",
]


@dataclass
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    anneal_steps: int = 50_000


def epsilon_at(step: int, schedule: EpsilonSchedule) -> float:
    """Linear anneal from start to end, clamped after anneal_steps."""
    if step >= schedule.anneal_steps:
        return schedule.end
    frac = step / schedule.anneal_steps
    return schedule.start + frac * (schedule.end - schedule.start)


@dataclass
class ModeSpec:
    """Behavior switches implied by a run mode."""

    learned_weights: bool  # weight network produces W (vs W == 0)
    own_obs_only: bool  # agents see only their own observation row
    uses_gan: bool  # GAN losses trained at all
    freeze_comm: bool  # weight net + completion nets frozen during RL
    cond_true_state: bool  # mixer conditioned on the true state


def apply_mode(mode: str) -> ModeSpec:
    if mode == "pagnet":
        return ModeSpec(True, False, True, False, False)
    if mode == "pagnet_fc":
        return ModeSpec(False, False, True, False, False)
    if mode == "pagnet_pt":
        return ModeSpec(True, False, True, True, False)
    if mode == "qmix":
        return ModeSpec(False, True, False, False, True)
    raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass
class TrainConfig:
    env: dict = field(default_factory=lambda: {"env": {"name": "hallway"}})
    mode: str = "pagnet"
    seed: int = 0
    gamma: float = 0.99
    buffer_capacity: int = 5000
    batch_size: int = 32
    learning_rate: float = 0.0005
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    target_sync_interval: int = 200
    alpha: float = 0.0004
    total_env_steps: int = 100_000
    eval_interval: int = 10_000  # pause cadence M (env steps)
    eval_episodes: int = 100  # N greedy episodes per pause
    grad_clip: float = 10.0
    gan_steps_per_update: int = 128  # cap on (episode, t) samples per GAN step
    weight_attn_dim: int = 64
    weight_dropout: float = 0.1
    decoder_dim: int = 128
    decoder_heads: int = 4
    decoder_blocks: int = 2
    out_dir: str = "runs"
    pretrained_path: str | None = None
    unfreeze_generator: bool = False
    checkpoint_every_syncs: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigurationError("gamma must be in [0, 1)")
        if self.epsilon.end > self.epsilon.start:
            raise ConfigurationError("epsilon end must be <= start")
        for name in ("buffer_capacity", "batch_size", "target_sync_interval",
                     "total_env_steps", "eval_interval", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, cfg: dict) -> "TrainConfig":
        train = dict(cfg.get("train", {}))
        eps = train.pop("epsilon", {})
        schedule = EpsilonSchedule(
            start=eps.get("start", 1.0),
            end=eps.get("end", 0.05),
            anneal_steps=eps.get("anneal_steps", 50_000),
        )
        known = {k: v for k, v in train.items() if k in cls.__dataclass_fields__}
        unknown = set(train) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown train options: {sorted(unknown)}")
        return cls(env=cfg, epsilon=schedule, **known)


@dataclass
class EpisodeRecord:
    """One full trajectory. Index t in [0, T] for per-state arrays, [0, T) else."""

    obs: np.ndarray  # (T+1, n, l) float32
    states: np.ndarray  # (T+1, L) float32
    gather: np.ndarray  # (T+1, n, l) int64, padded with -1
    valid: np.ndarray  # (T+1, n, l) bool
    actions: np.ndarray  # (T, n) int64
    rewards: np.ndarray  # (T,) float32
    avail: np.ndarray  # (T+1, n, A) bool
    terminated: np.ndarray  # (T,) bool
    w_mean: np.ndarray  # (T, n) float32, per-receiver mean communication weight

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


class ReplayBuffer:
    """FIFO ring of immutable episodes with uniform batch sampling."""

    def __init__(self, capacity: int):
        self._ring: deque[EpisodeRecord] = deque(maxlen=capacity)
        self.inserted = 0

    def add(self, episode: EpisodeRecord):
        self._ring.append(episode)
        self.inserted += 1

    def __len__(self):
        return len(self._ring)

    def sample(self, k: int, rng: np.random.Generator) -> list[EpisodeRecord]:
        idx = rng.choice(len(self._ring), size=k, replace=False)
        return [self._ring[int(i)] for i in idx]

    def episodes(self):
        return list(self._ring)


@dataclass
class ModelBundle:
    env_spec_key: str
    env_hash: str
    mode: str
    weight_net: WeightNetwork
    generator: Generator
    discriminator: Discriminator
    policy: PolicyNets
    target: PolicyNets

    def sync_target(self):
        self.target.load_from(self.policy)

    def named_groups(self):
        return {
            "weight_net": self.weight_net.state_dict(),
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "decoder": self.policy.decoder.state_dict(),
            "mixer": self.policy.mixer.state_dict(),
        }


def build_models(env: Env, config: TrainConfig) -> ModelBundle:
    s = env.spec
    weight_net = WeightNetwork(
        s.obs_len, attn_dim=config.weight_attn_dim, dropout=config.weight_dropout
    )
    generator = Generator(s.n_agents, s.obs_len, s.state_len)
    discriminator = Discriminator(s.state_len)
    cond_dim = s.state_len + s.n_agents

    def policy_nets():
        return PolicyNets(
            decoder=AgentDecoder(
                s.obs_len, s.n_agents, s.n_actions,
                model_dim=config.decoder_dim,
                heads=config.decoder_heads,
                blocks=config.decoder_blocks,
            ),
            mixer=MonotonicMixer(s.n_agents, cond_dim),
        )

    bundle = ModelBundle(
        env_spec_key=env.spec_key(),
        env_hash=env.env_hash(),
        mode=config.mode,
        weight_net=weight_net,
        generator=generator,
        discriminator=discriminator,
        policy=policy_nets(),
        target=policy_nets(),
    )
    bundle.sync_target()
    bundle.target.decoder.eval()
    return bundle


def save_models(path, bundle: ModelBundle, step: int):
    ckpt.save_checkpoint(
        path,
        ckpt.from_state_dicts(bundle.named_groups()),
        metadata={"env_hash": bundle.env_hash, "mode": bundle.mode, "step": step},
    )


def load_models(path, env: Env, config: TrainConfig) -> ModelBundle:
    loaded = ckpt.load_checkpoint(path, expected_env_hash=env.env_hash())
    bundle = build_models(env, config)
    bundle.weight_net.load_state_dict(ckpt.to_state_dict(loaded, "weight_net"))
    bundle.generator.load_state_dict(ckpt.to_state_dict(loaded, "generator"))
    bundle.discriminator.load_state_dict(ckpt.to_state_dict(loaded, "discriminator"))
    bundle.policy.decoder.load_state_dict(ckpt.to_state_dict(loaded, "decoder"))
    bundle.policy.mixer.load_state_dict(ckpt.to_state_dict(loaded, "mixer"))
    bundle.sync_target()
    return bundle


# -- rollout ----------------------------------------------------------------


def mixed_inputs(
    obs_t: torch.Tensor,
    weight_net: WeightNetwork,
    mode_spec: ModeSpec,
    eps: torch.Tensor,
    train_mode: bool = False,
):
    """Per-receiver decoder inputs x and the weight tensor for one or more steps.

    obs_t: (..., n, l). Returns (x: (..., n, n, l), W: same shape).
    """
    n, l = obs_t.shape[-2], obs_t.shape[-1]
    if mode_spec.own_obs_only:
        w = torch.zeros(*obs_t.shape[:-2], n, n, l, dtype=obs_t.dtype)
        x = torch.zeros_like(w)
        idx = torch.arange(n)
        x[..., idx, idx, :] = obs_t
        return x, w
    if mode_spec.learned_weights:
        w = weight_net(obs_t, train_mode=train_mode)
    else:
        w = torch.zeros(*obs_t.shape[:-2], n, n, l, dtype=obs_t.dtype)
    x = receiver_mix(obs_t, w, eps).values
    return x, w


def rollout(
    env: Env,
    bundle: ModelBundle,
    epsilon: float,
    rng: np.random.Generator,
    mode: str | None = None,
) -> EpisodeRecord:
    """Play one episode with epsilon-greedy actions and record everything."""
    mode_spec = apply_mode(mode or bundle.mode)
    spec = env.spec
    n, l, A = spec.n_agents, spec.obs_len, spec.n_actions

    res = env.reset(int(rng.integers(0, 2**31 - 1)))
    obs_list, state_list, gather_list, valid_list, avail_list = [], [], [], [], []
    actions, rewards, terms, w_means = [], [], [], []

    h = bundle.policy.decoder.initial_hidden(n)
    agent_ids = torch.arange(n)
    with torch.no_grad():
        while True:
            vis = env.visibility(res.state)
            gth, vld = vis_to_tensors(vis, l)
            obs_list.append(res.obs.values.astype(np.float32))
            state_list.append(res.state.values.astype(np.float32))
            gather_list.append(gth.numpy())
            valid_list.append(vld.numpy())
            avail_list.append(res.avail.copy())
            if res.done:
                break

            obs_t = torch.from_numpy(obs_list[-1])
            eps_t = torch.from_numpy(
                rng.standard_normal((n, l)).astype(np.float32)
            )
            x, w = mixed_inputs(obs_t, bundle.weight_net, mode_spec, eps_t)
            q, h = bundle.policy.decoder(x, h, agent_ids)
            acts = [
                select_action(q[i].numpy(), res.avail[i], epsilon, rng)
                for i in range(n)
            ]
            w_means.append(w.mean(dim=(-1, -2)).numpy().astype(np.float32))
            actions.append(acts)
            res = env.step(acts)
            rewards.append(res.reward)
            terms.append(res.done)

    T = len(rewards)
    return EpisodeRecord(
        obs=np.stack(obs_list),
        states=np.stack(state_list),
        gather=np.stack(gather_list),
        valid=np.stack(valid_list),
        actions=np.asarray(actions, dtype=np.int64).reshape(T, n),
        rewards=np.asarray(rewards, dtype=np.float32),
        avail=np.stack(avail_list),
        terminated=np.asarray(terms, dtype=bool),
        w_mean=np.asarray(w_means, dtype=np.float32).reshape(T, n),
    )


# -- batch assembly -----------------------------------------------------------


def _pad_episodes(episodes: list[EpisodeRecord]):
    """Stack variable-length episodes into padded arrays plus a step mask."""
    B = len(episodes)
    T = max(e.length for e in episodes)
    n, l = episodes[0].obs.shape[1:]
    A = episodes[0].avail.shape[-1]
    L = episodes[0].states.shape[-1]

    obs = np.zeros((B, T + 1, n, l), dtype=np.float32)
    states = np.zeros((B, T + 1, L), dtype=np.float32)
    gather = np.zeros((B, T + 1, n, l), dtype=np.int64)
    valid = np.zeros((B, T + 1, n, l), dtype=bool)
    actions = np.zeros((B, T, n), dtype=np.int64)
    rewards = np.zeros((B, T), dtype=np.float32)
    avail = np.ones((B, T + 1, n, A), dtype=bool)
    terminated = np.zeros((B, T), dtype=bool)
    mask = np.zeros((B, T), dtype=np.float32)
    for b, e in enumerate(episodes):
        Te = e.length
        obs[b, : Te + 1] = e.obs
        states[b, : Te + 1] = e.states
        gather[b, : Te + 1] = e.gather
        valid[b, : Te + 1] = e.valid
        actions[b, :Te] = e.actions
        rewards[b, :Te] = e.rewards
        avail[b, : Te + 1] = e.avail
        terminated[b, :Te] = e.terminated
        mask[b, :Te] = 1.0
    return obs, states, gather, valid, actions, rewards, avail, terminated, mask


def build_td_batch(
    episodes: list[EpisodeRecord],
    bundle: ModelBundle,
    mode_spec: ModeSpec,
    torch_rng: torch.Generator,
) -> TdBatch:
    """Assemble decoder inputs and mixer conditioning, detached from psi/phi."""
    (obs, states, _gather, _valid, actions, rewards, avail, terminated,
     mask) = _pad_episodes(episodes)
    obs_t = torch.from_numpy(obs)
    with torch.no_grad():
        eps = torch.randn(obs_t.shape, generator=torch_rng, dtype=obs_t.dtype)
        x, w = mixed_inputs(obs_t, bundle.weight_net, mode_spec, eps)
        if mode_spec.cond_true_state:
            cond_state = torch.from_numpy(states)
            w_summary = torch.zeros(*obs_t.shape[:-2], obs_t.shape[-2])
        else:
            flat = obs_t.reshape(-1, *obs_t.shape[-2:])
            gen = bundle.generator(
                receiver_mix(flat, w.reshape(-1, *w.shape[-3:]),
                             eps.reshape(-1, *eps.shape[-2:])).values.mean(dim=-3)
            )
            cond_state = gen.reshape(*obs_t.shape[:-2], -1)
            w_summary = w.mean(dim=(-1, -2))
        cond = torch.cat([cond_state, w_summary], dim=-1)
    return TdBatch(
        x=x,
        cond=cond,
        actions=torch.from_numpy(actions),
        rewards=torch.from_numpy(rewards),
        avail=torch.from_numpy(avail),
        terminated=torch.from_numpy(terminated),
        mask=torch.from_numpy(mask),
    )


def flat_gan_batch(
    episodes: list[EpisodeRecord],
    max_steps: int,
    rng: np.random.Generator,
):
    """Uniformly sample (episode, t) state/observation rows for the GAN step."""
    pairs = [(b, t) for b, e in enumerate(episodes) for t in range(e.length + 1)]
    if len(pairs) > max_steps:
        chosen = rng.choice(len(pairs), size=max_steps, replace=False)
        pairs = [pairs[int(i)] for i in chosen]
    obs = np.stack([episodes[b].obs[t] for b, t in pairs])
    states = np.stack([episodes[b].states[t] for b, t in pairs])
    gather = np.stack([episodes[b].gather[t] for b, t in pairs])
    valid = np.stack([episodes[b].valid[t] for b, t in pairs])
    return (
        torch.from_numpy(obs),
        torch.from_numpy(states),
        torch.from_numpy(gather),
        torch.from_numpy(valid),
    )


# -- trainer ------------------------------------------------------------------


@dataclass
class RunSummary:
    mode: str
    seed: int
    env_steps: int
    episodes: int
    updates: int
    last_test_return: float | None
    last_test_win_rate: float | None
    best_test_return: float | None
    best_test_win_rate: float | None
    metrics_path: str
    checkpoint_path: str


class Trainer:
    """Serial loop: rollout, store, (D step, G step, TD step), periodic sync."""

    def __init__(self, config: TrainConfig, env: Env | None = None):
        self.config = config
        torch.manual_seed(config.seed)
        random.seed(config.seed)
        self.rng = np.random.default_rng(config.seed)
        self.torch_rng = torch.Generator().manual_seed(config.seed)
        self.env = env if env is not None else make_env(config.env)
        self.mode_spec = apply_mode(config.mode)
        self.bundle = build_models(self.env, config)
        if config.mode == "pagnet_pt":
            if not config.pretrained_path:
                raise ConfigurationError("mode pagnet_pt requires pretrained_path")
            self._load_pretrained(config.pretrained_path)
        self.buffer = ReplayBuffer(config.buffer_capacity)

        lr = config.learning_rate
        self.d_optim = torch.optim.Adam(self.bundle.discriminator.parameters(), lr=lr)
        g_params = list(self.bundle.generator.parameters())
        if self.mode_spec.learned_weights and not self.mode_spec.freeze_comm:
            g_params += list(self.bundle.weight_net.parameters())
        if self.mode_spec.freeze_comm and config.unfreeze_generator:
            g_params = list(self.bundle.generator.parameters())
        elif self.mode_spec.freeze_comm:
            g_params = []
        self.g_optim = torch.optim.Adam(g_params, lr=lr) if g_params else None
        self.q_optim = torch.optim.Adam(self.bundle.policy.parameters(), lr=lr)

        self.env_steps = 0
        self.episode_count = 0
        self.update_count = 0
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.metrics_path = out / f"metrics_{config.mode}_s{config.seed}.csv"
        self.checkpoint_path = out / f"checkpoint_{config.mode}_s{config.seed}.bin"
        self.weight_ckpt_path = out / f"weights_{config.mode}_s{config.seed}.bin"

    def _load_pretrained(self, path):
        loaded = ckpt.load_checkpoint(path, expected_env_hash=self.env.env_hash())
        self.bundle.weight_net.load_state_dict(ckpt.to_state_dict(loaded, "weight_net"))
        self.bundle.generator.load_state_dict(ckpt.to_state_dict(loaded, "generator"))
        try:
            self.bundle.discriminator.load_state_dict(
                ckpt.to_state_dict(loaded, "discriminator")
            )
        except Exception:
            pass  # discriminator optional in pretrain checkpoints

    # individual update stages, separable for instrumentation

    def _gan_losses(self, episodes):
        cfg = self.config
        obs, states, gather, valid = flat_gan_batch(
            episodes, cfg.gan_steps_per_update, self.rng
        )
        eps = torch.randn(obs.shape, generator=self.torch_rng, dtype=obs.dtype)
        n, l = obs.shape[-2], obs.shape[-1]
        if self.mode_spec.learned_weights:
            w = self.bundle.weight_net(
                obs, train_mode=not self.mode_spec.freeze_comm
            )
        else:
            w = torch.zeros(obs.shape[0], n, n, l, dtype=obs.dtype)
        return gan_step_losses(
            states, obs, w, eps,
            self.bundle.generator, self.bundle.discriminator,
            cfg.alpha, gather, valid,
        )

    def update_discriminator(self, report):
        self.d_optim.zero_grad()
        report.d_loss.backward(retain_graph=True)
        torch.nn.utils.clip_grad_norm_(
            self.bundle.discriminator.parameters(), self.config.grad_clip
        )
        self.d_optim.step()

    def update_generator(self, report):
        if self.g_optim is None:
            return
        self.g_optim.zero_grad()
        report.combined_g_loss.backward()
        torch.nn.utils.clip_grad_norm_(
            [p for g in self.g_optim.param_groups for p in g["params"]],
            self.config.grad_clip,
        )
        self.g_optim.step()

    def update_td(self, episodes) -> float:
        batch = build_td_batch(episodes, self.bundle, self.mode_spec, self.torch_rng)
        loss = td_loss(batch, self.bundle.policy, self.bundle.target, self.config.gamma)
        if not torch.isfinite(loss):
            raise TrainingFault(f"non-finite TD loss at update {self.update_count}")
        self.q_optim.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(
            self.bundle.policy.parameters(), self.config.grad_clip
        )
        self.q_optim.step()
        return float(loss.detach())

    def sync_target(self):
        self.bundle.sync_target()
        ckpt.save_checkpoint(
            self.weight_ckpt_path,
            ckpt.from_state_dicts(
                {"weight_net": self.bundle.weight_net.state_dict()}
            ),
            metadata={
                "env_hash": self.bundle.env_hash,
                "mode": self.config.mode,
                "step": self.env_steps,
            },
        )

    def train_iteration(self, episodes) -> dict:
        """One optimization iteration: D step, G step, TD step, periodic sync."""
        row = {}
        if self.mode_spec.uses_gan:
            report = self._gan_losses(episodes)
            if not (torch.isfinite(report.d_loss) and
                    torch.isfinite(report.combined_g_loss)):
                raise TrainingFault(
                    f"non-finite GAN loss at update {self.update_count}"
                )
            self.update_discriminator(report)
            self.update_generator(report)
            row.update(
                d_loss=float(report.d_loss.detach()),
                g_loss=float(report.combined_g_loss.detach()),
                mse_loss=float(report.mse_loss.detach()),
            )
        row["td_loss"] = self.update_td(episodes)
        self.update_count += 1
        if self.update_count % self.config.target_sync_interval == 0:
            self.sync_target()
        return row

    def evaluate_greedy(self, n_episodes: int, seed: int):
        """Greedy evaluation against the current parameters."""
        from .evaluation import run_greedy_episodes

        eval_env = make_env(self.config.env)
        report = run_greedy_episodes(
            eval_env, self.bundle, n_episodes, seed
        )
        return report.mean_return, report.win_rate

    def train(self) -> RunSummary:
        cfg = self.config
        last_eval = (None, None)
        best = (None, None)
        next_eval = cfg.eval_interval
        with open(self.metrics_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
            writer.writeheader()
            while self.env_steps < cfg.total_env_steps:
                eps = epsilon_at(self.env_steps, cfg.epsilon)
                episode = rollout(self.env, self.bundle, eps, self.rng)
                self.buffer.add(episode)
                self.env_steps += episode.length
                self.episode_count += 1

                row = {
                    "step": self.env_steps,
                    "episode": self.episode_count,
                    "mode": cfg.mode,
                    "seed": cfg.seed,
                    "epsilon": f"{eps:.6f}",
                    "train_return": f"{episode.episode_return:.6f}",
                    "mean_W": f"{float(episode.w_mean.mean()) if episode.length else 0.0:.6f}",
                }
                if len(self.buffer) >= cfg.batch_size:
                    episodes = self.buffer.sample(cfg.batch_size, self.rng)
                    losses = self.train_iteration(episodes)
                    row.update({k: f"{v:.6f}" for k, v in losses.items()})

                if self.env_steps >= next_eval:
                    ret, win = self.evaluate_greedy(
                        cfg.eval_episodes, cfg.seed + 7919 + next_eval
                    )
                    last_eval = (ret, win)
                    best = (
                        ret if best[0] is None else max(best[0], ret),
                        win if best[1] is None else max(best[1], win),
                    )
                    row["test_return"] = f"{ret:.6f}"
                    row["test_win_rate"] = f"{win:.6f}"
                    next_eval += cfg.eval_interval
                    save_models(self.checkpoint_path, self.bundle, self.env_steps)

                writer.writerow(row)
                fh.flush()
        save_models(self.checkpoint_path, self.bundle, self.env_steps)
        return RunSummary(
            mode=cfg.mode,
            seed=cfg.seed,
            env_steps=self.env_steps,
            episodes=self.episode_count,
            updates=self.update_count,
            last_test_return=last_eval[0],
            last_test_win_rate=last_eval[1],
            best_test_return=best[0],
            best_test_win_rate=best[1],
            metrics_path=str(self.metrics_path),
            checkpoint_path=str(self.checkpoint_path),
        )


def train(config: TrainConfig) -> RunSummary:
    return Trainer(config).train()


# -- offline pretraining -------------------------------------------------------


def collect_dataset(config: TrainConfig, n_episodes: int) -> list[EpisodeRecord]:
    """Random-policy rollouts for offline pretraining."""
    env = make_env(config.env)
    bundle = build_models(env, config)
    rng = np.random.default_rng(config.seed)
    return [rollout(env, bundle, 1.0, rng) for _ in range(n_episodes)]


def save_dataset(path, episodes: list[EpisodeRecord]):
    payload = {"n_episodes": np.asarray(len(episodes))}
    for i, e in enumerate(episodes):
        for name in ("obs", "states", "gather", "valid", "actions",
                     "rewards", "avail", "terminated", "w_mean"):
            payload[f"ep{i}/{name}"] = getattr(e, name)
    np.savez_compressed(path, **payload)


def load_dataset(path) -> list[EpisodeRecord]:
    data = np.load(path)
    n = int(data["n_episodes"])
    return [
        EpisodeRecord(**{
            name: data[f"ep{i}/{name}"]
            for name in ("obs", "states", "gather", "valid", "actions",
                         "rewards", "avail", "terminated", "w_mean")
        })
        for i in range(n)
    ]


def pretrain(
    episodes: list[EpisodeRecord],
    config: TrainConfig,
    n_updates: int = 1000,
    out_path=None,
    env: Env | None = None,
    heldout: list[EpisodeRecord] | None = None,
) -> tuple[ModelBundle, list[float]]:
    """Optimize the completion objective alone over an offline dataset.

    Returns the trained bundle and the held-out masked-MSE trace (one value
    per evaluation window) when a held-out split is given.
    """
    if not episodes:
        raise ConfigurationError("pretrain dataset is empty")
    env = env if env is not None else make_env(config.env)
    s = env.spec
    if episodes[0].obs.shape[1:] != (s.n_agents, s.obs_len):
        raise ConfigurationError(
            f"dataset obs shape {episodes[0].obs.shape[1:]} does not match env "
            f"({s.n_agents}, {s.obs_len})"
        )
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    torch_rng = torch.Generator().manual_seed(config.seed)
    bundle = build_models(env, config)
    mode_spec = apply_mode("pagnet")
    lr = config.learning_rate
    d_optim = torch.optim.Adam(bundle.discriminator.parameters(), lr=lr)
    g_optim = torch.optim.Adam(
        list(bundle.generator.parameters()) + list(bundle.weight_net.parameters()),
        lr=lr,
    )
    mse_trace = []
    for u in range(n_updates):
        batch = rng.choice(len(episodes), size=min(8, len(episodes)), replace=False)
        obs, states, gather, valid = flat_gan_batch(
            [episodes[int(i)] for i in batch], config.gan_steps_per_update, rng
        )
        eps = torch.randn(obs.shape, generator=torch_rng, dtype=obs.dtype)
        w = bundle.weight_net(obs, train_mode=True)
        report = gan_step_losses(
            states, obs, w, eps, bundle.generator, bundle.discriminator,
            config.alpha, gather, valid,
        )
        d_optim.zero_grad()
        report.d_loss.backward(retain_graph=True)
        d_optim.step()
        g_optim.zero_grad()
        report.combined_g_loss.backward()
        g_optim.step()
        if heldout and (u + 1) % max(1, n_updates // 50) == 0:
            mse_trace.append(heldout_masked_mse(heldout, bundle, seed=config.seed))
    if out_path is not None:
        ckpt.save_checkpoint(
            out_path,
            ckpt.from_state_dicts({
                "weight_net": bundle.weight_net.state_dict(),
                "generator": bundle.generator.state_dict(),
                "discriminator": bundle.discriminator.state_dict(),
            }),
            metadata={"env_hash": env.env_hash(), "mode": "pretrain", "step": n_updates},
        )
    return bundle, mse_trace


def heldout_masked_mse(
    episodes: list[EpisodeRecord], bundle: ModelBundle, seed: int = 0
) -> float:
    """Mean masked MSE of generated states over a held-out episode set."""
    from .completion import masked_mse

    rng = torch.Generator().manual_seed(seed)
    totals = []
    with torch.no_grad():
        for e in episodes:
            obs = torch.from_numpy(e.obs)
            eps = torch.randn(obs.shape, generator=rng, dtype=obs.dtype)
            w = bundle.weight_net(obs, train_mode=False)
            gen = generate_state(obs, w, eps, bundle.generator)
            mse = masked_mse(
                gen, obs, torch.from_numpy(e.gather), torch.from_numpy(e.valid)
            )
            totals.append(mse.mean().item())
    return float(np.mean(totals))
