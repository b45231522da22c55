"""Global-state completion: 1D U-Net generator, discriminator, and losses.

The generator consumes the noise-mixed message matrix (one channel per
agent) and emits a full global-state vector. The discriminator scores state
vectors as real vs generated. Training combines a visibility-masked squared
error (the generated state must agree with what agents actually see) with a
non-saturating adversarial term.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .comm import MixedInfo, receiver_mix
from .errors import ConfigurationError, InputError

_PROB_EPS = 1e-7


def aggregate_input(mixed) -> torch.Tensor:
    """Collapse per-receiver views to the generator's n-channel input.

    Sender row j becomes the mean over all receivers' mixed views of j.
    """
    values = mixed.values if isinstance(mixed, MixedInfo) else mixed
    return values.mean(dim=-3)


def _pad_to_multiple(x: torch.Tensor, multiple: int) -> torch.Tensor:
    rem = x.shape[-1] % multiple
    if rem == 0:
        return x
    return F.pad(x, (0, multiple - rem))


class _ConvBlock(nn.Module):
    """conv(k5) -> Mish -> conv(k5) -> Mish, then an optional tail layer."""

    def __init__(self, in_ch, out_ch, tail: nn.Module | None = None, residual=False):
        super().__init__()
        self.conv1 = nn.Conv1d(in_ch, out_ch, 5, padding=2)
        self.conv2 = nn.Conv1d(out_ch, out_ch, 5, padding=2)
        self.act1 = nn.Mish()
        self.act2 = nn.Mish()
        self.tail = tail
        self.tail_act = nn.Mish() if tail is not None else None
        self.residual = residual

    def forward(self, x):
        y = self.act1(self.conv1(x))
        z = self.act2(self.conv2(y))
        if self.residual:
            z = z + y
        if self.tail is not None:
            z = self.tail_act(self.tail(z))
        return z


class Generator(nn.Module):
    """U-Net over the message length axis with concatenation skip paths.

    Layer ladder: channel-lifting affine encoder, two stride-2 downsampling
    stages, a residual stage, a bottleneck, the mirrored upsampling path,
    and a conv + affine decoder head mapping to the state length.
    """

    def __init__(self, n_agents: int, obs_len: int, state_len: int, base_ch: int = 32):
        super().__init__()
        if obs_len < 1 or state_len < 1:
            raise ConfigurationError("obs_len and state_len must be positive")
        self.n_agents = n_agents
        self.obs_len = obs_len
        self.state_len = state_len
        self.pad_len = obs_len + (-obs_len) % 4
        c = base_ch
        self.encoder = nn.Linear(n_agents, c)
        self.down0 = _ConvBlock(c, 2 * c, tail=nn.Conv1d(2 * c, 2 * c, 3, 2, 1))
        self.down1 = _ConvBlock(2 * c, 4 * c, tail=nn.Conv1d(4 * c, 4 * c, 3, 2, 1))
        self.down2 = _ConvBlock(4 * c, 4 * c, residual=True)
        self.mid = _ConvBlock(4 * c, 4 * c)
        self.up0 = _ConvBlock(
            8 * c, 4 * c, tail=nn.ConvTranspose1d(4 * c, 2 * c, 4, 2, 1)
        )
        self.up1 = _ConvBlock(
            4 * c, 2 * c, tail=nn.ConvTranspose1d(2 * c, c, 4, 2, 1)
        )
        self.up2 = _ConvBlock(2 * c, c, residual=True)
        self.dec_conv = nn.Conv1d(c, c, 5, padding=2)
        self.dec_act1 = nn.Mish()
        self.dec_head = nn.Conv1d(c, 1, 1)
        self.dec_act2 = nn.Mish()
        self.dec_linear = nn.Linear(self.pad_len, state_len)

    def sequence_lengths(self) -> tuple[int, int, int]:
        """Internal length ladder: full, after one, after two stride-2 stages."""
        return (self.pad_len, self.pad_len // 2, self.pad_len // 4)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (batch, n_agents, obs_len) aggregated messages -> (batch, state_len)."""
        single = x.dim() == 2
        if single:
            x = x.unsqueeze(0)
        if x.shape[-2] != self.n_agents or x.shape[-1] != self.obs_len:
            raise InputError(
                f"expected ({self.n_agents}, {self.obs_len}) input, "
                f"got {tuple(x.shape[-2:])}"
            )
        x = _pad_to_multiple(x, 4)
        e = self.encoder(x.transpose(-1, -2)).transpose(-1, -2)  # (B, c, l')
        d0 = self.down0(e)
        d1 = self.down1(d0)
        d2 = self.down2(d1)
        m = self.mid(d2)
        u0 = self.up0(torch.cat([m, d2], dim=-2))
        u1 = self.up1(torch.cat([u0, d0], dim=-2))
        u2 = self.up2(torch.cat([u1, e], dim=-2))
        h = self.dec_act1(self.dec_conv(u2))
        h = self.dec_act2(self.dec_head(h)).squeeze(-2)
        out = self.dec_linear(h)
        return out.squeeze(0) if single else out


class Discriminator(nn.Module):
    """Scores a state vector in (0, 1): affine embedding, four stride-2
    convolutions, flatten, scalar affine head, sigmoid."""

    def __init__(self, state_len: int, embed_dim: int = 128):
        super().__init__()
        if embed_dim < 16:
            raise ConfigurationError("embed_dim must be >= 16")
        self.state_len = state_len
        self.embed = nn.Linear(state_len, embed_dim)
        chans = [1, 16, 32, 64, 64]
        self.convs = nn.ModuleList(
            nn.Conv1d(chans[i], chans[i + 1], 5, 2, 2) for i in range(4)
        )
        self.acts = nn.ModuleList(nn.Mish() for _ in range(4))
        length = embed_dim
        for _ in range(4):
            length = (length + 2 * 2 - 5) // 2 + 1
        self.head = nn.Linear(chans[-1] * length, 1)

    def forward(self, state: torch.Tensor) -> torch.Tensor:
        """state: (batch, L) or (L,) -> probability in (0, 1), shape (batch,) or ()."""
        single = state.dim() == 1
        if single:
            state = state.unsqueeze(0)
        h = self.embed(state).unsqueeze(-2)  # (B, 1, embed)
        for conv, act in zip(self.convs, self.acts):
            h = act(conv(h))
        p = torch.sigmoid(self.head(h.flatten(-2))).squeeze(-1)
        return p.squeeze(0) if single else p


def generate_state(
    obs: torch.Tensor, W: torch.Tensor, eps: torch.Tensor, generator: Generator
) -> torch.Tensor:
    """Full path: noise-mix per receiver, aggregate, complete to a state vector."""
    mixed = receiver_mix(obs, W, eps)
    return generator(aggregate_input(mixed))


def masked_mse(
    generated: torch.Tensor,
    obs: torch.Tensor,
    gather: torch.Tensor,
    valid: torch.Tensor,
) -> torch.Tensor:
    """Squared error between the generated state and the agents' actual views.

    generated: (..., L); obs: (..., n, l); gather: (..., n, l) state indices
    (padded entries arbitrary); valid: (..., n, l) bool marking real
    coordinates. Returns the summed squared error per sample (not the mean).
    """
    if gather.shape != obs.shape or valid.shape != obs.shape:
        raise InputError("obs, gather and valid must share a shape")
    idx = gather.clamp(min=0)
    flat = idx.reshape(*idx.shape[:-2], -1)
    picked = torch.gather(generated, -1, flat).reshape(obs.shape)
    sq = (picked - obs) ** 2 * valid
    return sq.sum(dim=(-1, -2))


def vis_to_tensors(vis, obs_len: int, dtype=torch.float32):
    """Pack a VisibilityMask into padded (gather, valid) tensors of shape (n, l)."""
    n = len(vis.gather)
    gather = torch.zeros(n, obs_len, dtype=torch.long)
    valid = torch.zeros(n, obs_len, dtype=torch.bool)
    for i, g in enumerate(vis.gather):
        k = len(g)
        gather[i, :k] = torch.as_tensor(g, dtype=torch.long)
        valid[i, :k] = True
    return gather, valid


@dataclass
class GanLossReport:
    d_loss: torch.Tensor
    g_adv_loss: torch.Tensor
    mse_loss: torch.Tensor
    combined_g_loss: torch.Tensor
    d_real_mean: torch.Tensor
    d_fake_mean: torch.Tensor


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(_PROB_EPS, 1.0 - _PROB_EPS)


def gan_step_losses(
    real_states: torch.Tensor,
    obs_batch: torch.Tensor,
    W_batch: torch.Tensor,
    eps_batch: torch.Tensor,
    generator: Generator,
    discriminator: Discriminator,
    alpha: float,
    gather: torch.Tensor,
    valid: torch.Tensor,
) -> GanLossReport:
    """Alternating GAN losses plus the masked reconstruction term.

    d_loss carries gradient only into the discriminator; combined_g_loss only
    into the generator and whatever graph W_batch is attached to.
    """
    if alpha < 0:
        raise ConfigurationError("alpha must be >= 0")
    fake = generate_state(obs_batch, W_batch, eps_batch, generator)

    d_real = _clamp(discriminator(real_states))
    d_fake_detached = _clamp(discriminator(fake.detach()))
    d_loss = -(torch.log(d_real).mean() + torch.log(1.0 - d_fake_detached).mean())

    # evaluate D with detached parameters so the generator loss cannot move D
    frozen = {k: v.detach().clone() for k, v in discriminator.named_parameters()}
    d_fake = _clamp(torch.func.functional_call(discriminator, frozen, (fake,)))
    g_adv_loss = -torch.log(d_fake).mean()
    mse_loss = masked_mse(fake, obs_batch, gather, valid).mean()
    combined = mse_loss + alpha * g_adv_loss

    return GanLossReport(
        d_loss=d_loss,
        g_adv_loss=g_adv_loss,
        mse_loss=mse_loss,
        combined_g_loss=combined,
        d_real_mean=d_real.mean().detach(),
        d_fake_mean=d_fake.mean().detach(),
    )
