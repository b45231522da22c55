import copy
import hashlib

import numpy as np
import pytest
import torch

from pagnet.envs import HallwayEnv, make_env
from pagnet.errors import ConfigurationError
from pagnet.training import (
    METRICS_COLUMNS,
    MODES,
    EpisodeRecord,
    EpsilonSchedule,
    ModelBundle,
    ReplayBuffer,
    TrainConfig,
    Trainer,
    apply_mode,
    build_models,
    build_td_batch,
    collect_dataset,
    epsilon_at,
    load_dataset,
    load_models,
    mixed_inputs,
    pretrain,
    rollout,
    save_dataset,
    save_models,
)


def small_config(tmp_path, mode="pagnet", **over):
    train = {
        "mode": mode,
        "seed": 0,
        "batch_size": 4,
        "buffer_capacity": 50,
        "total_env_steps": 120,
        "eval_interval": 100,
        "eval_episodes": 2,
        "target_sync_interval": 3,
        "gan_steps_per_update": 16,
        "decoder_dim": 16,
        "decoder_heads": 2,
        "decoder_blocks": 1,
        "weight_attn_dim": 8,
        "out_dir": str(tmp_path),
    }
    train.update(over)
    return TrainConfig.from_dict({
        "env": {"name": "hallway"},
        "hallway": {"lengths": [2, 3]},
        "train": train,
    })


def param_digest(module):
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


class TestEpsilonSchedule:
    def test_endpoints_and_midpoint(self):
        sched = EpsilonSchedule()
        assert epsilon_at(0, sched) == 1.0
        assert epsilon_at(50_000, sched) == 0.05
        assert epsilon_at(25_000, sched) == pytest.approx(0.525)

    def test_clamped_after_anneal(self):
        sched = EpsilonSchedule()
        assert epsilon_at(10**7, sched) == 0.05

    def test_linear_in_between(self):
        sched = EpsilonSchedule(1.0, 0.0, 100)
        for s in range(0, 100, 10):
            assert epsilon_at(s, sched) == pytest.approx(1.0 - s / 100)


def dummy_episode(i, T=3, n=2, l=4, L=8, A=3):
    return EpisodeRecord(
        obs=np.full((T + 1, n, l), float(i), dtype=np.float32),
        states=np.zeros((T + 1, L), dtype=np.float32),
        gather=np.zeros((T + 1, n, l), dtype=np.int64),
        valid=np.ones((T + 1, n, l), dtype=bool),
        actions=np.zeros((T, n), dtype=np.int64),
        rewards=np.zeros(T, dtype=np.float32),
        avail=np.ones((T + 1, n, A), dtype=bool),
        terminated=np.zeros(T, dtype=bool),
        w_mean=np.zeros((T, n), dtype=np.float32),
    )


class TestReplayBuffer:
    def test_fifo_eviction_at_capacity(self):
        buf = ReplayBuffer(5)
        for i in range(8):
            buf.add(dummy_episode(i))
        assert len(buf) == 5
        kept = [e.obs[0, 0, 0] for e in buf.episodes()]
        assert kept == [3.0, 4.0, 5.0, 6.0, 7.0]
        assert buf.inserted == 8

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            buf.add(dummy_episode(i))
        rng = np.random.default_rng(0)
        batch = buf.sample(10, rng)
        ids = sorted(e.obs[0, 0, 0] for e in batch)
        assert ids == [float(i) for i in range(10)]

    def test_sampling_uniform_within_3_sigma(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            buf.add(dummy_episode(i))
        rng = np.random.default_rng(1)
        counts = np.zeros(10)
        draws = 10_000
        for _ in range(draws):
            (e,) = buf.sample(1, rng)
            counts[int(e.obs[0, 0, 0])] += 1
        p = 0.1
        sigma = np.sqrt(draws * p * (1 - p))
        assert (np.abs(counts - draws * p) < 3 * sigma).all()


class TestTrainConfig:
    def test_defaults_match_documented_values(self):
        cfg = TrainConfig.from_dict({"env": {"name": "hallway"}})
        assert cfg.gamma == 0.99
        assert cfg.buffer_capacity == 5000
        assert cfg.batch_size == 32
        assert cfg.learning_rate == 0.0005
        assert cfg.alpha == 0.0004
        assert cfg.target_sync_interval == 200
        assert cfg.grad_clip == 10.0
        assert cfg.epsilon == EpsilonSchedule(1.0, 0.05, 50_000)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict({"train": {"learningrate": 1}})

    def test_bad_mode_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict({"train": {"mode": "dqn"}})

    def test_bad_gamma_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict({"train": {"gamma": 1.5}})

    def test_epsilon_override(self):
        cfg = TrainConfig.from_dict(
            {"train": {"epsilon": {"start": 0.5, "end": 0.1, "anneal_steps": 10}}}
        )
        assert cfg.epsilon == EpsilonSchedule(0.5, 0.1, 10)


class TestModeSpecs:
    def test_all_modes_resolve(self):
        for m in MODES:
            apply_mode(m)
        with pytest.raises(ConfigurationError):
            apply_mode("vdn")

    def test_own_obs_only_input_layout(self):
        spec = apply_mode("qmix")
        obs = torch.randn(3, 5)
        eps = torch.randn(3, 5)
        x, w = mixed_inputs(obs, None, spec, eps)
        assert (w == 0).all()
        for r in range(3):
            assert torch.equal(x[r, r], obs[r])
            for s in range(3):
                if s != r:
                    assert (x[r, s] == 0).all()

    def test_fixed_zero_weights_pass_messages_through(self):
        spec = apply_mode("pagnet_fc")
        obs = torch.randn(3, 5)
        eps = torch.randn(3, 5)
        x, w = mixed_inputs(obs, None, spec, eps)
        assert (w == 0).all()
        for r in range(3):
            assert torch.equal(x[r], obs)

    def test_learned_weights_mix_noise(self):
        cfg = TrainConfig.from_dict({
            "env": {"name": "hallway"}, "hallway": {"lengths": [2, 3]},
        })
        env = make_env(cfg.env)
        bundle = build_models(env, cfg)
        spec = apply_mode("pagnet")
        obs = torch.randn(2, env.spec.obs_len)
        eps = torch.randn(2, env.spec.obs_len)
        x, w = mixed_inputs(obs, bundle.weight_net, spec, eps)
        assert (w > 0).all() and (w < 1).all()
        expect = (1 - w[0]) * obs + w[0] * eps
        assert torch.allclose(x[0], expect, atol=1e-6)


class TestRollout:
    def _bundle(self):
        cfg = TrainConfig.from_dict({
            "env": {"name": "hallway"},
            "hallway": {"lengths": [2, 3]},
            "train": {"decoder_dim": 16, "decoder_heads": 2, "decoder_blocks": 1},
        })
        env = make_env(cfg.env)
        torch.manual_seed(0)
        return env, build_models(env, cfg)

    def test_record_shapes_consistent(self):
        env, bundle = self._bundle()
        e = rollout(env, bundle, 1.0, np.random.default_rng(0))
        T = e.length
        assert e.obs.shape[0] == T + 1
        assert e.states.shape == (T + 1, env.spec.state_len)
        assert e.actions.shape == (T, env.spec.n_agents)
        assert e.w_mean.shape == (T, env.spec.n_agents)
        assert e.terminated[-1] or T == env.spec.horizon

    def test_seeded_rollouts_identical(self):
        env, bundle = self._bundle()
        a = rollout(env, bundle, 0.3, np.random.default_rng(5))
        env2, bundle2 = self._bundle()
        bundle2.weight_net.load_state_dict(bundle.weight_net.state_dict())
        b = rollout(env2, bundle2, 0.3, np.random.default_rng(5))
        assert np.array_equal(a.obs, b.obs)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)

    def test_qmix_mode_records_zero_weights(self):
        env, bundle = self._bundle()
        e = rollout(env, bundle, 1.0, np.random.default_rng(0), mode="qmix")
        assert (e.w_mean == 0).all()


class TestTdBatchAssembly:
    def test_cond_uses_true_state_in_qmix(self):
        env = HallwayEnv((2, 3))
        config = TrainConfig.from_dict({
            "env": {"name": "hallway"}, "hallway": {"lengths": [2, 3]},
            "train": {"decoder_dim": 16, "decoder_heads": 2, "decoder_blocks": 1},
        })
        bundle = build_models(env, config)
        eps = [rollout(env, bundle, 1.0, np.random.default_rng(i)) for i in range(3)]
        g = torch.Generator().manual_seed(0)
        batch = build_td_batch(eps, bundle, apply_mode("qmix"), g)
        L, n = env.spec.state_len, env.spec.n_agents
        # first episode, step 0: conditioning is state_0 then zeros
        assert np.allclose(batch.cond[0, 0, :L].numpy(), eps[0].states[0])
        assert (batch.cond[..., L:] == 0).all()

    def test_cond_is_generated_state_otherwise(self):
        env = HallwayEnv((2, 3))
        config = TrainConfig.from_dict({
            "env": {"name": "hallway"}, "hallway": {"lengths": [2, 3]},
            "train": {"decoder_dim": 16, "decoder_heads": 2, "decoder_blocks": 1},
        })
        bundle = build_models(env, config)
        eps = [rollout(env, bundle, 1.0, np.random.default_rng(i)) for i in range(2)]
        g = torch.Generator().manual_seed(0)
        batch = build_td_batch(eps, bundle, apply_mode("pagnet"), g)
        L = env.spec.state_len
        # generated conditioning is not the true state and weight summary is live
        assert not np.allclose(batch.cond[0, 0, :L].numpy(), eps[0].states[0])
        assert (batch.cond[..., L:] != 0).any()
        assert not batch.x.requires_grad and not batch.cond.requires_grad


class TestTrainer:
    def test_no_updates_until_buffer_reaches_batch_size(self, tmp_path):
        cfg = small_config(tmp_path, batch_size=10, total_env_steps=30)
        t = Trainer(cfg)
        calls = []
        orig = Trainer.train_iteration
        t.train_iteration = lambda eps: (calls.append(len(t.buffer)),
                                         orig(t, eps))[1]
        t.train()
        assert all(c >= 10 for c in calls)

    def test_update_order_d_g_td(self, tmp_path):
        cfg = small_config(tmp_path, total_env_steps=40)
        t = Trainer(cfg)
        order = []
        for name in ("update_discriminator", "update_generator", "update_td"):
            orig = getattr(t, name)
            def wrapper(*a, _n=name, _f=orig, **k):
                order.append(_n)
                return _f(*a, **k)
            setattr(t, name, wrapper)
        t.train()
        assert order, "no updates ran"
        for i in range(0, len(order) - 2, 3):
            assert order[i : i + 3] == [
                "update_discriminator", "update_generator", "update_td"
            ]

    def test_target_sync_cadence_and_weight_snapshot(self, tmp_path):
        cfg = small_config(tmp_path, total_env_steps=60, target_sync_interval=2)
        t = Trainer(cfg)
        syncs = []
        orig = t.sync_target
        t.sync_target = lambda: (syncs.append(t.update_count), orig())
        t.train()
        assert syncs and all(u % 2 == 0 for u in syncs)
        assert t.weight_ckpt_path.exists()

    def test_qmix_never_touches_gan_nets(self, tmp_path):
        cfg = small_config(tmp_path, mode="qmix", total_env_steps=40)
        t = Trainer(cfg)
        hits = []
        t.bundle.generator.register_forward_hook(lambda *a: hits.append("g"))
        t.bundle.discriminator.register_forward_hook(lambda *a: hits.append("d"))
        g_before = param_digest(t.bundle.generator)
        d_before = param_digest(t.bundle.discriminator)
        t.train()
        assert hits == []
        assert param_digest(t.bundle.generator) == g_before
        assert param_digest(t.bundle.discriminator) == d_before

    def test_fc_mode_zero_weights_but_generator_trains(self, tmp_path):
        cfg = small_config(tmp_path, mode="pagnet_fc", total_env_steps=60)
        t = Trainer(cfg)
        g_before = param_digest(t.bundle.generator)
        w_before = param_digest(t.bundle.weight_net)
        summary = t.train()
        assert param_digest(t.bundle.generator) != g_before
        assert param_digest(t.bundle.weight_net) == w_before
        rows = open(t.metrics_path).read().splitlines()
        import csv as _csv
        for row in _csv.DictReader(rows):
            assert float(row["mean_W"]) == 0.0
        assert summary.mode == "pagnet_fc"

    def test_pretrained_mode_freezes_comm_and_completion(self, tmp_path):
        collect_cfg = small_config(tmp_path)
        env = make_env(collect_cfg.env)
        episodes = collect_dataset(collect_cfg, 6)
        pre_path = tmp_path / "pre.bin"
        pretrain(episodes, collect_cfg, n_updates=3, out_path=pre_path, env=env)

        cfg = small_config(
            tmp_path, mode="pagnet_pt", total_env_steps=60,
            pretrained_path=str(pre_path),
        )
        t = Trainer(cfg)
        g_before = param_digest(t.bundle.generator)
        w_before = param_digest(t.bundle.weight_net)
        t.train()
        assert param_digest(t.bundle.generator) == g_before
        assert param_digest(t.bundle.weight_net) == w_before

    def test_pretrained_mode_requires_path(self, tmp_path):
        with pytest.raises(ConfigurationError):
            Trainer(small_config(tmp_path, mode="pagnet_pt"))

    def test_unfreeze_generator_escape(self, tmp_path):
        collect_cfg = small_config(tmp_path)
        env = make_env(collect_cfg.env)
        episodes = collect_dataset(collect_cfg, 6)
        pre_path = tmp_path / "pre2.bin"
        pretrain(episodes, collect_cfg, n_updates=2, out_path=pre_path, env=env)
        cfg = small_config(
            tmp_path, mode="pagnet_pt", total_env_steps=60,
            pretrained_path=str(pre_path), unfreeze_generator=True,
        )
        t = Trainer(cfg)
        g_before = param_digest(t.bundle.generator)
        w_before = param_digest(t.bundle.weight_net)
        t.train()
        assert param_digest(t.bundle.generator) != g_before
        assert param_digest(t.bundle.weight_net) == w_before

    def test_metrics_csv_schema(self, tmp_path):
        cfg = small_config(tmp_path, total_env_steps=40)
        t = Trainer(cfg)
        t.train()
        import csv as _csv
        with open(t.metrics_path) as fh:
            reader = _csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        assert header == METRICS_COLUMNS
        assert rows
        assert all(len(r) == len(METRICS_COLUMNS) for r in rows)

    def test_checkpoint_written_and_loadable(self, tmp_path):
        cfg = small_config(tmp_path, total_env_steps=40)
        t = Trainer(cfg)
        t.train()
        env = make_env(cfg.env)
        bundle = load_models(t.checkpoint_path, env, cfg)
        for a, b in zip(bundle.policy.parameters(), t.bundle.policy.parameters()):
            assert torch.equal(a, b)

    def test_two_runs_same_seed_identical_metrics(self, tmp_path):
        cfg_a = small_config(tmp_path / "a", total_env_steps=50)
        cfg_b = small_config(tmp_path / "b", total_env_steps=50)
        sa = Trainer(cfg_a).train()
        sb = Trainer(cfg_b).train()
        a = open(sa.metrics_path).read()
        b = open(sb.metrics_path).read()
        assert a == b


class TestOfflineDataset:
    def test_save_load_round_trip(self, tmp_path):
        cfg = small_config(tmp_path)
        episodes = collect_dataset(cfg, 4)
        path = tmp_path / "data.npz"
        save_dataset(path, episodes)
        loaded = load_dataset(path)
        assert len(loaded) == 4
        for a, b in zip(episodes, loaded):
            assert np.array_equal(a.obs, b.obs)
            assert np.array_equal(a.actions, b.actions)
            assert np.array_equal(a.rewards, b.rewards)

    def test_pretrain_rejects_empty(self, tmp_path):
        cfg = small_config(tmp_path)
        with pytest.raises(ConfigurationError):
            pretrain([], cfg)

    def test_pretrain_rejects_shape_mismatch(self, tmp_path):
        cfg = small_config(tmp_path)
        bad = [dummy_episode(0, n=5, l=3)]
        with pytest.raises(ConfigurationError):
            pretrain(bad, cfg)

    def test_pretrain_reduces_heldout_mse(self, tmp_path):
        cfg = TrainConfig.from_dict({
            "env": {"name": "slices"},
            "slices": {"state_len": 12, "n_agents": 2, "latent": 4, "horizon": 8},
            "train": {"seed": 0, "gan_steps_per_update": 32},
        })
        episodes = collect_dataset(cfg, 24)
        train_eps, held = episodes[:18], episodes[18:]
        _, trace = pretrain(train_eps, cfg, n_updates=200, heldout=held)
        assert trace[-1] < trace[0]
