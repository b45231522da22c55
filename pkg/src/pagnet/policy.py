"""Per-agent Q networks, monotonic value mixing, and the TD objective.

Each agent's decoder attends over the n sender slots of its noise-mixed
message block, carries a recurrent hidden state across timesteps, and emits
Q-values. A hypernetwork-conditioned mixer with nonnegative weights combines
chosen per-agent values into a joint estimate; monotonicity makes the
decomposed per-agent greedy max exact for the bootstrap target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .comm import _slot_encoding
from .errors import UsageError


class _TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, dim)
        )
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x):
        a, _ = self.attn(x, x, x, need_weights=False)
        x = self.norm1(x + a)
        return self.norm2(x + self.ff(x))


class AgentDecoder(nn.Module):
    """Recurrent transformer Q decoder shared across agents.

    Tokens are the sender slots of the receiver's mixed-info block; the
    previous hidden state and a learned receiver embedding are injected into
    every token. The pooled block output concatenated with the previous
    hidden state feeds both the Q head and the next-hidden head.
    """

    def __init__(
        self,
        obs_len: int,
        n_agents: int,
        n_actions: int,
        model_dim: int = 128,
        heads: int = 4,
        blocks: int = 2,
    ):
        super().__init__()
        self.model_dim = model_dim
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.token_embed = nn.Linear(obs_len, model_dim)
        self.hidden_inject = nn.Linear(model_dim, model_dim)
        self.agent_embed = nn.Embedding(n_agents, model_dim)
        self.blocks = nn.ModuleList(
            _TransformerBlock(model_dim, heads, 2 * model_dim) for _ in range(blocks)
        )
        self.q_head = nn.Linear(2 * model_dim, n_actions)
        self.h_head = nn.Linear(2 * model_dim, model_dim)

    def initial_hidden(self, *lead, dtype=torch.float32) -> torch.Tensor:
        return torch.zeros(*lead, self.model_dim, dtype=dtype)

    def forward(self, x: torch.Tensor, h_prev: torch.Tensor, agent_ids: torch.Tensor):
        """x: (..., n, l); h_prev: (..., D); agent_ids: (...,) long.

        Returns (q: (..., n_actions), h_next: (..., D)).
        """
        lead = x.shape[:-2]
        n, l = x.shape[-2], x.shape[-1]
        xf = x.reshape(-1, n, l)
        hf = h_prev.reshape(-1, self.model_dim)
        ids = torch.as_tensor(agent_ids, dtype=torch.long).expand(lead).reshape(-1)

        tokens = self.token_embed(xf)
        tokens = tokens + _slot_encoding(n, self.model_dim, tokens.dtype)
        tokens = tokens + self.hidden_inject(hf).unsqueeze(1)
        tokens = tokens + self.agent_embed(ids).unsqueeze(1)
        for block in self.blocks:
            tokens = block(tokens)
        pooled = tokens.mean(dim=1)
        joint = torch.cat([pooled, hf], dim=-1)
        q = self.q_head(joint)
        h_next = torch.tanh(self.h_head(joint))
        return q.reshape(*lead, self.n_actions), h_next.reshape(*lead, self.model_dim)


def select_action(q, avail, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over available actions; unavailable ones are never chosen."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    avail = np.asarray(avail, dtype=bool).reshape(-1)
    options = np.flatnonzero(avail)
    if options.size == 0:
        raise UsageError("no available action")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.choice(options))
    masked = np.where(avail, q, -np.inf)
    return int(np.argmax(masked))


class MonotonicMixer(nn.Module):
    """Two-layer mixer with hypernetwork-generated nonnegative weights.

    Conditioning is the (generated) state concatenated with each agent's mean
    communication weight. Weight nonnegativity via absolute value plus a
    monotone inter-layer activation gives dQ_tot/dq_i >= 0 everywhere.
    """

    def __init__(
        self,
        n_agents: int,
        cond_dim: int,
        mix_hidden: int = 32,
        hyper_hidden: int = 64,
    ):
        super().__init__()
        self.n_agents = n_agents
        self.cond_dim = cond_dim
        self.mix_hidden = mix_hidden
        self.hyper_w1 = nn.Sequential(
            nn.Linear(cond_dim, hyper_hidden),
            nn.Mish(),
            nn.Linear(hyper_hidden, n_agents * mix_hidden),
        )
        self.hyper_b1 = nn.Linear(cond_dim, mix_hidden)
        self.hyper_w2 = nn.Sequential(
            nn.Linear(cond_dim, hyper_hidden),
            nn.Mish(),
            nn.Linear(hyper_hidden, mix_hidden),
        )
        self.hyper_b2 = nn.Sequential(
            nn.Linear(cond_dim, hyper_hidden),
            nn.Mish(),
            nn.Linear(hyper_hidden, 1),
        )

    def forward(self, q: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """q: (..., n); cond: (..., cond_dim) -> Q_tot (...,)."""
        w1 = self.hyper_w1(cond).abs().reshape(
            *cond.shape[:-1], self.n_agents, self.mix_hidden
        )
        b1 = self.hyper_b1(cond)
        h = F.elu((q.unsqueeze(-2) @ w1).squeeze(-2) + b1)
        w2 = self.hyper_w2(cond).abs()
        b2 = self.hyper_b2(cond).squeeze(-1)
        return (h * w2).sum(dim=-1) + b2


@dataclass
class PolicyNets:
    decoder: AgentDecoder
    mixer: MonotonicMixer

    def state_dicts(self):
        return {"decoder": self.decoder.state_dict(), "mixer": self.mixer.state_dict()}

    def load_from(self, other: "PolicyNets"):
        self.decoder.load_state_dict(other.decoder.state_dict())
        self.mixer.load_state_dict(other.mixer.state_dict())

    def parameters(self):
        yield from self.decoder.parameters()
        yield from self.mixer.parameters()


@dataclass
class TdBatch:
    """Padded episode batch. Steps beyond an episode's length have mask 0."""

    x: torch.Tensor  # (B, T+1, n, n, l) per-receiver mixed info (constant wrt theta)
    cond: torch.Tensor  # (B, T+1, cond_dim) mixer conditioning
    actions: torch.Tensor  # (B, T, n) long
    rewards: torch.Tensor  # (B, T)
    avail: torch.Tensor  # (B, T+1, n, A) bool
    terminated: torch.Tensor  # (B, T) bool, env terminal (not padding)
    mask: torch.Tensor  # (B, T) float

    @property
    def sizes(self):
        B, T1, n = self.x.shape[0], self.x.shape[1], self.x.shape[2]
        return B, T1 - 1, n


def _q_stream(
    decoder: AgentDecoder, x: torch.Tensor, dtype=None
) -> torch.Tensor:
    """Unroll the recurrent decoder over a padded batch.

    x: (B, T+1, n_recv, n_send, l) -> q: (B, T+1, n_recv, A).
    """
    B, T1, n = x.shape[0], x.shape[1], x.shape[2]
    h = decoder.initial_hidden(B, n, dtype=dtype or x.dtype)
    agent_ids = torch.arange(n).expand(B, n)
    qs = []
    for t in range(T1):
        q, h = decoder(x[:, t], h, agent_ids)
        qs.append(q)
    return torch.stack(qs, dim=1)


def td_loss(
    batch: TdBatch,
    online: PolicyNets,
    target: PolicyNets,
    gamma: float,
) -> torch.Tensor:
    """Padding-masked mean squared TD error with a decomposed greedy target."""
    B, T, n = batch.sizes
    q_online = _q_stream(online.decoder, batch.x)
    chosen = q_online[:, :T].gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1)
    q_tot = online.mixer(chosen, batch.cond[:, :T])

    with torch.no_grad():
        q_target = _q_stream(target.decoder, batch.x)
        neg_inf = torch.finfo(q_target.dtype).min
        masked = torch.where(batch.avail, q_target, neg_inf)
        greedy_next = masked[:, 1:].max(dim=-1).values  # (B, T, n)
        next_tot = target.mixer(greedy_next, batch.cond[:, 1:])
        not_terminal = (~batch.terminated).to(q_target.dtype)
        y = batch.rewards + gamma * not_terminal * next_tot

    err = (y - q_tot) ** 2 * batch.mask
    return err.sum() / batch.mask.sum().clamp(min=1.0)
