import math

import numpy as np
import pytest
import torch

from pagnet.comm import MixedInfo, receiver_mix
from pagnet.completion import (
    Discriminator,
    GanLossReport,
    Generator,
    aggregate_input,
    gan_step_losses,
    generate_state,
    masked_mse,
    vis_to_tensors,
)
from pagnet.envs import HallwayEnv
from pagnet.errors import ConfigurationError, InputError


class TestAggregate:
    def test_mean_over_receivers(self):
        values = torch.randn(4, 3, 3, 5)
        agg = aggregate_input(values)
        assert agg.shape == (4, 3, 5)
        assert torch.allclose(agg, values.mean(dim=1), atol=1e-7)

    def test_accepts_mixed_info(self):
        values = torch.randn(3, 3, 5)
        mixed = MixedInfo(values=values, noise=torch.zeros(3, 5))
        assert torch.equal(aggregate_input(mixed), values.mean(dim=0))


class TestGenerator:
    def test_shapes_even_and_odd_lengths(self):
        for obs_len in (8, 11, 6):
            gen = Generator(n_agents=3, obs_len=obs_len, state_len=20)
            out = gen(torch.randn(5, 3, obs_len))
            assert out.shape == (5, 20)
            single = gen(torch.randn(3, obs_len))
            assert single.shape == (20,)

    def test_length_ladder_halves_twice(self):
        gen = Generator(n_agents=2, obs_len=11, state_len=12)
        assert gen.sequence_lengths() == (12, 6, 3)
        gen = Generator(n_agents=2, obs_len=16, state_len=12)
        assert gen.sequence_lengths() == (16, 8, 4)

    def test_wrong_input_shape_rejected(self):
        gen = Generator(n_agents=3, obs_len=8, state_len=20)
        with pytest.raises(InputError):
            gen(torch.randn(5, 2, 8))

    def test_gradient_flows_to_all_parameters(self):
        gen = Generator(n_agents=2, obs_len=8, state_len=10)
        out = gen(torch.randn(4, 2, 8)).sum()
        out.backward()
        for name, p in gen.named_parameters():
            assert p.grad is not None and p.grad.abs().sum() > 0, name

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigurationError):
            Generator(n_agents=2, obs_len=0, state_len=10)


class TestDiscriminator:
    def test_output_in_open_unit_interval(self):
        disc = Discriminator(state_len=32)
        p = disc(torch.randn(16, 32))
        assert p.shape == (16,)
        assert (p > 0).all() and (p < 1).all()

    def test_single_sample(self):
        disc = Discriminator(state_len=12)
        p = disc(torch.randn(12))
        assert p.dim() == 0

    def test_small_embed_rejected(self):
        with pytest.raises(ConfigurationError):
            Discriminator(state_len=12, embed_dim=8)


class TestMaskedMse:
    def test_scalar_loop_oracle_hallway(self):
        """Vectorized masked MSE equals an index-by-index sum to 1e-12."""
        env = HallwayEnv((4, 6, 8, 10))
        rng = np.random.default_rng(0)
        for trial in range(100):
            res = env.reset(int(rng.integers(0, 2**31)))
            vis = env.visibility(res.state)
            gather, valid = vis_to_tensors(vis, env.spec.obs_len)
            obs = torch.from_numpy(res.obs.values).double()
            generated = torch.randn(env.spec.state_len, dtype=torch.float64)
            got = masked_mse(generated, obs, gather, valid).item()
            expect = 0.0
            for i, g in enumerate(vis.gather):
                for slot, idx in enumerate(g):
                    expect += (generated[idx].item() - obs[i, slot].item()) ** 2
            assert abs(got - expect) <= 1e-12 * max(1.0, abs(expect))

    def test_batched(self):
        torch.manual_seed(0)
        gen = torch.randn(5, 10)
        obs = torch.randn(5, 2, 4)
        gather = torch.randint(0, 10, (5, 2, 4))
        valid = torch.rand(5, 2, 4) > 0.3
        batched = masked_mse(gen, obs, gather, valid)
        assert batched.shape == (5,)
        for b in range(5):
            one = masked_mse(gen[b], obs[b], gather[b], valid[b])
            assert batched[b].item() == pytest.approx(one.item(), abs=1e-6)

    def test_invisible_coordinates_ignored(self):
        gen = torch.zeros(6)
        obs = torch.full((1, 3), 5.0)
        gather = torch.tensor([[0, 1, 0]])
        valid = torch.tensor([[True, False, False]])
        assert masked_mse(gen, obs, gather, valid).item() == pytest.approx(25.0)

    def test_shape_guard(self):
        with pytest.raises(InputError):
            masked_mse(torch.zeros(6), torch.zeros(2, 3), torch.zeros(2, 4).long(),
                       torch.ones(2, 3, dtype=torch.bool))

    def test_vis_to_tensors_padding(self):
        env = HallwayEnv((2, 4))
        res = env.reset(0)
        vis = env.visibility(res.state)
        gather, valid = vis_to_tensors(vis, env.spec.obs_len)
        assert gather.shape == valid.shape == (2, env.spec.obs_len)
        assert valid[0].sum() == 3 and valid[1].sum() == 5
        assert not valid[0, 3:].any()


class FixedProbDisc(torch.nn.Module):
    """Stand-in discriminator that outputs a constant probability."""

    def __init__(self, p: float, state_len: int):
        super().__init__()
        self.register_buffer("p", torch.tensor(p))
        self.bias = torch.nn.Parameter(torch.zeros(1))

    def forward(self, x):
        return (self.p + 0.0 * self.bias).expand(x.shape[0] if x.dim() > 1 else ())


class TestGanLosses:
    def _setup(self, seed=0):
        torch.manual_seed(seed)
        n, l, L, B = 2, 8, 12, 6
        gen = Generator(n, l, L)
        disc = Discriminator(L)
        obs = torch.randn(B, n, l)
        W = torch.rand(B, n, n, l)
        eps = torch.randn(B, n, l)
        real = torch.randn(B, L)
        gather = torch.randint(0, L, (B, n, l))
        valid = torch.ones(B, n, l, dtype=torch.bool)
        return gen, disc, obs, W, eps, real, gather, valid

    def test_half_probability_oracle(self):
        """With D fixed at 0.5: d_loss = 2 ln 2, adversarial term = ln 2."""
        gen, _, obs, W, eps, real, gather, valid = self._setup()
        disc = FixedProbDisc(0.5, 12)
        report = gan_step_losses(real, obs, W, eps, gen, disc, 0.0004, gather, valid)
        assert report.d_loss.item() == pytest.approx(2 * math.log(2), abs=1e-5)
        assert report.g_adv_loss.item() == pytest.approx(math.log(2), abs=1e-5)

    def test_combined_loss_composition(self):
        gen, disc, obs, W, eps, real, gather, valid = self._setup()
        alpha = 0.0004
        report = gan_step_losses(real, obs, W, eps, gen, disc, alpha, gather, valid)
        assert report.combined_g_loss.item() == pytest.approx(
            report.mse_loss.item() + alpha * report.g_adv_loss.item(), rel=1e-6
        )

    def test_alpha_weighting_numeric_example(self):
        """mse = 2.0 and D = 0.5 gives combined = 2 + 0.0004 ln 2."""
        mse = 2.0
        combined = mse + 0.0004 * math.log(2)
        assert combined == pytest.approx(2.000277, abs=1e-5)

    def test_d_loss_does_not_touch_generator(self):
        gen, disc, obs, W, eps, real, gather, valid = self._setup()
        report = gan_step_losses(real, obs, W, eps, gen, disc, 0.0004, gather, valid)
        grads = torch.autograd.grad(
            report.d_loss, list(gen.parameters()), allow_unused=True,
            retain_graph=True,
        )
        assert all(g is None for g in grads)

    def test_g_loss_does_not_touch_discriminator(self):
        gen, disc, obs, W, eps, real, gather, valid = self._setup()
        report = gan_step_losses(real, obs, W, eps, gen, disc, 0.0004, gather, valid)
        grads = torch.autograd.grad(
            report.combined_g_loss, list(disc.parameters()), allow_unused=True,
        )
        assert all(g is None for g in grads)

    def test_g_loss_reaches_weight_graph(self):
        gen, disc, obs, W, eps, real, gather, valid = self._setup()
        W = W.clone().requires_grad_(True)
        report = gan_step_losses(real, obs, W, eps, gen, disc, 0.0004, gather, valid)
        (grad,) = torch.autograd.grad(report.combined_g_loss, W)
        assert grad.abs().sum() > 0

    def test_negative_alpha_rejected(self):
        gen, disc, obs, W, eps, real, gather, valid = self._setup()
        with pytest.raises(ConfigurationError):
            gan_step_losses(real, obs, W, eps, gen, disc, -1.0, gather, valid)

    def test_report_fields(self):
        gen, disc, obs, W, eps, real, gather, valid = self._setup()
        report = gan_step_losses(real, obs, W, eps, gen, disc, 0.0004, gather, valid)
        assert isinstance(report, GanLossReport)
        assert 0 < report.d_real_mean.item() < 1
        assert 0 < report.d_fake_mean.item() < 1
        assert not report.d_real_mean.requires_grad


class TestGradientOracles:
    def _fd_check(self, loss_fn, params, rel_tol=1e-4, h=1e-6, per_param=4):
        loss = loss_fn()
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        for p, g in zip(params, grads):
            if g is None:
                continue
            flat = p.data.flatten()
            gflat = g.flatten()
            idx = torch.randperm(flat.numel())[:per_param]
            for k in idx:
                orig = flat[k].item()
                flat[k] = orig + h
                up = loss_fn().item()
                flat[k] = orig - h
                down = loss_fn().item()
                flat[k] = orig
                fd = (up - down) / (2 * h)
                # the absolute floor keeps finite-difference roundoff from
                # dominating on coordinates whose true gradient is ~0
                denom = max(abs(fd), abs(gflat[k].item()), 1e-4)
                assert abs(fd - gflat[k].item()) / denom < rel_tol

    def test_generator_masked_mse_gradient(self):
        torch.manual_seed(0)
        gen = Generator(2, 8, 12).double()
        obs = torch.randn(3, 2, 8, dtype=torch.float64)
        W = torch.rand(3, 2, 2, 8, dtype=torch.float64)
        eps = torch.randn(3, 2, 8, dtype=torch.float64)
        gather = torch.randint(0, 12, (3, 2, 8))
        valid = torch.ones(3, 2, 8, dtype=torch.bool)

        def loss_fn():
            fake = generate_state(obs, W, eps, gen)
            return masked_mse(fake, obs, gather, valid).mean()

        self._fd_check(loss_fn, list(gen.parameters()))

    def test_discriminator_loss_gradient(self):
        torch.manual_seed(1)
        disc = Discriminator(12, embed_dim=32).double()
        real = torch.randn(4, 12, dtype=torch.float64)
        fake = torch.randn(4, 12, dtype=torch.float64)

        def loss_fn():
            d_real = disc(real).clamp(1e-7, 1 - 1e-7)
            d_fake = disc(fake).clamp(1e-7, 1 - 1e-7)
            return -(torch.log(d_real).mean() + torch.log(1 - d_fake).mean())

        self._fd_check(loss_fn, list(disc.parameters()))


def test_generate_state_deterministic_given_noise():
    torch.manual_seed(0)
    gen = Generator(2, 6, 10)
    obs = torch.randn(4, 2, 6)
    W = torch.rand(4, 2, 2, 6)
    eps = torch.randn(4, 2, 6)
    a = generate_state(obs, W, eps, gen)
    b = generate_state(obs, W, eps, gen)
    assert torch.equal(a, b)
