"""Information-level communication weights.

Every agent's message is its own padded observation. For each receiver, a
scaled dot-product attention over all agents' messages (with sinusoidal
positional encoding over agent slots) produces per-sender, per-feature
weights in [0, 1]; a weight of 1 replaces that feature with unit Gaussian
noise, a weight of 0 passes the message through untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, InputError


def positional_encoding(n: int, d: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal encoding: row i gets sin(i / 10000^(2j/d)) / cos pairs."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if d < 2 or d % 2 != 0:
        raise ConfigurationError(f"encoding width must be even and >= 2, got {d}")
    pos = torch.arange(n, dtype=dtype).unsqueeze(1)
    j = torch.arange(d // 2, dtype=dtype)
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), 2 * j / d)
    out = torch.zeros(n, d, dtype=dtype)
    out[:, 0::2] = torch.sin(angle)
    out[:, 1::2] = torch.cos(angle)
    return out


def _slot_encoding(n: int, width: int, dtype) -> torch.Tensor:
    """Positional encoding sliced to an arbitrary (possibly odd) width."""
    even = width + (width % 2)
    return positional_encoding(n, max(even, 2), dtype=dtype)[:, :width]


class WeightNetwork(nn.Module):
    """Maps the n x l message matrix to n x n x l communication weights.

    For receiver i the query is its own (position-encoded) observation
    repeated n times; keys/values are all messages. Attention output is
    projected back to message width and squashed with a sigmoid.
    """

    def __init__(self, obs_len: int, attn_dim: int = 64, dropout: float = 0.1):
        super().__init__()
        if attn_dim < 1:
            raise ConfigurationError("attn_dim must be positive")
        if not 0.0 <= dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")
        self.obs_len = obs_len
        self.attn_dim = attn_dim
        self.q_proj = nn.Linear(obs_len, attn_dim)
        self.k_proj = nn.Linear(obs_len, attn_dim)
        self.v_proj = nn.Linear(obs_len, attn_dim)
        self.out_proj = nn.Linear(attn_dim, obs_len)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self, obs: torch.Tensor, train_mode: bool = False, return_attn: bool = False
    ):
        """obs: (..., n, l) message matrix; returns W: (..., n, n, l)."""
        if not torch.isfinite(obs).all():
            raise InputError("non-finite observations")
        n = obs.shape[-2]
        pe = _slot_encoding(n, self.obs_len, obs.dtype).to(obs.device)
        aug = obs + pe
        q = self.q_proj(aug)  # (..., n, d)
        k = self.k_proj(aug)
        v = self.v_proj(aug)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.attn_dim)  # (..., n, n)
        probs = torch.softmax(scores, dim=-1)
        # query repeated once per sender slot
        probs_rep = probs.unsqueeze(-2).expand(*probs.shape[:-1], n, n)
        if train_mode:
            probs_rep = self.dropout(probs_rep)
        ctx = probs_rep @ v.unsqueeze(-3)  # (..., n_recv, n_slot, d)
        w = torch.sigmoid(self.out_proj(ctx))  # (..., n, n, l)
        if return_attn:
            return w, probs
        return w


def compute_weights(
    obs: torch.Tensor, net: WeightNetwork, train_mode: bool = False
) -> torch.Tensor:
    return net(obs, train_mode=train_mode)


def mix_information(
    M: torch.Tensor, W_row: torch.Tensor, eps: torch.Tensor
) -> torch.Tensor:
    """(1 - W) * M + W * eps, elementwise."""
    if M.shape != W_row.shape or M.shape != eps.shape:
        raise InputError(
            f"shape mismatch: M {tuple(M.shape)}, W {tuple(W_row.shape)}, "
            f"eps {tuple(eps.shape)}"
        )
    return (1.0 - W_row) * M + W_row * eps


@dataclass
class MixedInfo:
    values: torch.Tensor  # (..., n_recv, n_send, l)
    noise: torch.Tensor  # (..., n_send, l), one sample per timestep


def receiver_mix(obs: torch.Tensor, W: torch.Tensor, eps: torch.Tensor) -> MixedInfo:
    """Apply the noise mixing for every receiver; eps is shared across receivers."""
    n, l = obs.shape[-2], obs.shape[-1]
    if W.shape[-3:] != (n, n, l) or eps.shape[-2:] != (n, l):
        raise InputError(
            f"shape mismatch: obs {tuple(obs.shape)}, W {tuple(W.shape)}, "
            f"eps {tuple(eps.shape)}"
        )
    M = obs.unsqueeze(-3)  # broadcast over receivers
    E = eps.unsqueeze(-3)
    values = (1.0 - W) * M + W * E
    return MixedInfo(values=values, noise=eps)
