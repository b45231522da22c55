"""
Communication weights and noise mixing, step by step
====================================================

A narrative tour of the message-weighting pipeline on a tiny Hallway
instance: build observations, compute the per-receiver weight tensor,
mix messages with noise, and look at the two exact limits.

Run with: python demos/noise_mixing_walkthrough.py
"""

import numpy as np
import torch

from pagnet.comm import WeightNetwork, mix_information, receiver_mix
from pagnet.envs import HallwayEnv

torch.manual_seed(0)

# Two agents walk chains of length 2 and 3 toward a shared goal cell.
env = HallwayEnv((2, 3))
res = env.reset(seed=7)
print("observation matrix (one-hot positions, padded):")
print(res.obs.values)

obs = torch.from_numpy(res.obs.values.astype(np.float32))
n, l = obs.shape

# The weight network maps the n x l message matrix to an n x n x l tensor:
# entry [i, j, k] says how much of sender j's feature k is replaced by
# noise before receiver i sees it.
net = WeightNetwork(obs_len=l)
net.eval()
with torch.no_grad():
    W = net(obs)
print(f"\nweight tensor shape: {tuple(W.shape)}")
print(f"weights live in (0, 1): min={W.min():.3f} max={W.max():.3f}")

# One noise sample per timestep, shared by every receiver.
eps = torch.randn(n, l)
mixed = receiver_mix(obs, W, eps)
print(f"\nmixed info shape (receiver, sender, feature): {tuple(mixed.values.shape)}")

# Receiver 0's view of sender 1 is a convex combination of message and noise.
r, s = 0, 1
manual = (1 - W[r, s]) * obs[s] + W[r, s] * eps[s]
print("matches the elementwise formula:",
      torch.allclose(mixed.values[r, s], manual))

# The two limits are exact, not approximate.
zeros, ones = torch.zeros_like(obs), torch.ones_like(obs)
print("\nW = 0 passes messages through untouched:",
      torch.equal(mix_information(obs, zeros, eps), obs))
print("W = 1 replaces them with pure noise:",
      torch.equal(mix_information(obs, ones, eps), eps))

# Mean weight per receiver is what training logs as mean_W.
print(f"\nper-receiver mean weight: {W.mean(dim=(-1, -2)).numpy().round(3)}")
