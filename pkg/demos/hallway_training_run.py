"""
A small end-to-end training run on Hallway
==========================================

Runs the full loop (rollouts, replay buffer, adversarial completion
losses, TD updates, target syncs, greedy evaluation pauses) on a short
two-agent Hallway, then reads the metrics CSV back and dumps a greedy
trace of the final policy.

Run with: python demos/hallway_training_run.py   (a couple of minutes)
"""

import csv
import tempfile
from pathlib import Path

from pagnet.evaluation import evaluate, trace
from pagnet.training import TrainConfig, train

out_dir = Path(tempfile.mkdtemp(prefix="hallway_demo_"))
config = TrainConfig.from_dict({
    "env": {"name": "hallway"},
    "hallway": {"lengths": [2, 3]},
    "train": {
        "mode": "pagnet",
        "seed": 0,
        "batch_size": 8,
        "buffer_capacity": 200,
        "total_env_steps": 4000,
        "eval_interval": 1000,
        "eval_episodes": 20,
        "target_sync_interval": 20,
        "gan_steps_per_update": 32,
        "epsilon": {"start": 1.0, "end": 0.05, "anneal_steps": 2000},
        "out_dir": str(out_dir),
    },
})

summary = train(config)
print(f"ran {summary.env_steps} env steps over {summary.episodes} episodes")
print(f"last greedy eval: return={summary.last_test_return} "
      f"win_rate={summary.last_test_win_rate}")

# The metrics CSV has one row per training episode; evaluation pauses fill
# in the test columns.
with open(summary.metrics_path) as fh:
    rows = [r for r in csv.DictReader(fh) if r["test_return"]]
print("\ngreedy evaluation pauses:")
for r in rows:
    print(f"  step {r['step']:>6}  return={r['test_return']}  "
          f"win_rate={r['test_win_rate']}  mean_W={r['mean_W']}")

# Re-load the checkpoint through the public entry points.
report = evaluate(summary.checkpoint_path, config.env, n_episodes=50, seed=1,
                  out_dir=out_dir / "eval")
print(f"\nreloaded checkpoint: mean_return={report.mean_return:.3f} "
      f"+- {report.ci_return:.3f}, win_rate={report.win_rate:.2f}")

_, csv_path, figs = trace(summary.checkpoint_path, config.env, seed=2,
                          out_dir=out_dir / "trace")
print(f"trace CSV: {csv_path}")
print(f"figures: {[str(p) for p in figs]}")
