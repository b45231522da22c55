"""Evaluation harness and analysis artifacts.

Emits per-episode evaluation reports, per-timestep communication/state
traces, and aggregated learning curves. CSV files are the source of truth;
figures are derived from them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .completion import generate_state
from .envs import Env, make_env
from .errors import InputError
from .training import (
    METRICS_COLUMNS,
    ModelBundle,
    TrainConfig,
    apply_mode,
    load_models,
    mixed_inputs,
    rollout,
)

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


def mean_ci(values: np.ndarray) -> tuple[float, float]:
    """Mean and 95% CI half-width (normal approximation, population std)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size <= 1:
        return float(values.mean()) if values.size else float("nan"), 0.0
    half = Z_95 * values.std(ddof=0) / np.sqrt(values.size)
    return float(values.mean()), float(half)


@dataclass
class EvalReport:
    n_episodes: int
    mean_return: float
    ci_return: float
    win_rate: float
    mean_length: float
    rows: list[dict] = field(default_factory=list)
    total_env_steps: int = 0


def run_greedy_episodes(
    env: Env, bundle: ModelBundle, n_episodes: int, seed: int
) -> EvalReport:
    """N greedy (epsilon=0) episodes; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    rows = []
    total_steps = 0
    for k in range(n_episodes):
        record = rollout(env, bundle, 0.0, rng)
        final_state = record.states[-1]
        win = env.success(record.episode_return, final_state)
        total_steps += record.length
        rows.append(
            {
                "episode": k,
                "return": record.episode_return,
                "length": record.length,
                "win": int(win),
            }
        )
    returns = np.array([r["return"] for r in rows])
    mean_ret, ci = mean_ci(returns)
    return EvalReport(
        n_episodes=n_episodes,
        mean_return=mean_ret,
        ci_return=ci,
        win_rate=float(np.mean([r["win"] for r in rows])),
        mean_length=float(np.mean([r["length"] for r in rows])),
        rows=rows,
        total_env_steps=total_steps,
    )


def evaluate(
    checkpoint_path,
    env_config: dict,
    n_episodes: int,
    seed: int,
    out_dir=None,
) -> EvalReport:
    """Load a checkpoint (env-hash validated) and run the greedy protocol."""
    env = make_env(env_config)
    config = TrainConfig.from_dict(env_config)
    bundle = load_models(checkpoint_path, env, config)
    report = run_greedy_episodes(env, bundle, n_episodes, seed)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval_episodes.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["episode", "return", "length", "win"])
            writer.writeheader()
            writer.writerows(report.rows)
        with open(out / "eval_summary.txt", "w") as fh:
            fh.write(
                f"episodes={report.n_episodes}\n"
                f"mean_return={report.mean_return:.6f}\n"
                f"ci95_return={report.ci_return:.6f}\n"
                f"win_rate={report.win_rate:.6f}\n"
                f"mean_length={report.mean_length:.6f}\n"
            )
    return report


# -- trace ---------------------------------------------------------------------


@dataclass
class TraceDump:
    t: np.ndarray
    mean_w: np.ndarray
    mean_one_minus_w: np.ndarray
    liveness: np.ndarray  # (T, n)
    states: np.ndarray  # (T, L)
    generated: np.ndarray  # (T, L)


def trace_columns(n_agents: int, state_len: int) -> list[str]:
    return (
        ["t", "mean_W", "mean_one_minus_W"]
        + [f"liveness_{i}" for i in range(n_agents)]
        + [f"state_{k}" for k in range(state_len)]
        + [f"gen_state_{k}" for k in range(state_len)]
    )


def run_trace(env: Env, bundle: ModelBundle, seed: int) -> TraceDump:
    """One greedy episode with per-step weight, liveness and state recording."""
    mode_spec = apply_mode(bundle.mode)
    rng = np.random.default_rng(seed)
    n, l = env.spec.n_agents, env.spec.obs_len
    res = env.reset(int(rng.integers(0, 2**31 - 1)))
    h = bundle.policy.decoder.initial_hidden(n)
    agent_ids = torch.arange(n)
    ts, mws, livs, states, gens = [], [], [], [], []
    with torch.no_grad():
        while True:
            obs_t = torch.from_numpy(res.obs.values.astype(np.float32))
            eps_t = torch.from_numpy(rng.standard_normal((n, l)).astype(np.float32))
            x, w = mixed_inputs(obs_t, bundle.weight_net, mode_spec, eps_t)
            gen = generate_state(obs_t, w, eps_t, bundle.generator).numpy()
            ts.append(res.t)
            mws.append(float(w.mean()))
            livs.append(env.liveness(res.state))
            states.append(res.state.values.copy())
            gens.append(gen)
            if res.done:
                break
            q, h = bundle.policy.decoder(x, h, agent_ids)
            from .policy import select_action

            acts = [
                select_action(q[i].numpy(), res.avail[i], 0.0, rng) for i in range(n)
            ]
            res = env.step(acts)
    mws = np.asarray(mws)
    return TraceDump(
        t=np.asarray(ts),
        mean_w=mws,
        mean_one_minus_w=1.0 - mws,
        liveness=np.stack(livs),
        states=np.stack(states),
        generated=np.stack(gens),
    )


def write_trace(dump: TraceDump, env: Env, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, L = env.spec.n_agents, env.spec.state_len
    cols = trace_columns(n, L)
    path = out / "trace.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for k in range(len(dump.t)):
            writer.writerow(
                [dump.t[k], f"{dump.mean_w[k]:.8f}", f"{dump.mean_one_minus_w[k]:.8f}"]
                + [f"{v:.8f}" for v in dump.liveness[k]]
                + [f"{v:.8f}" for v in dump.states[k]]
                + [f"{v:.8f}" for v in dump.generated[k]]
            )
    return path


def read_trace(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InputError("malformed trace CSV")
    return {name: data[:, i] for i, name in enumerate(header)}


def trace_figures(dump: TraceDump, env: Env, out_dir) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(8, 4))
    ax2 = ax.twinx()
    T, n = dump.liveness.shape
    width = 0.8 / n
    for i in range(n):
        ax2.bar(
            dump.t + (i - n / 2) * width, dump.liveness[:, i],
            width=width, alpha=0.3, label=f"agent {i}",
        )
    ax.plot(dump.t, dump.mean_w, "k-", label="mean weight")
    ax.plot(dump.t, dump.mean_one_minus_w, "k--", label="mean (1 - weight)")
    ax.set_xlabel("step")
    ax.set_ylabel("communication weight")
    ax2.set_ylabel("agent liveness")
    ax.legend(loc="upper left", fontsize=8)
    ax2.legend(loc="upper right", fontsize=8)
    p = out / "trace_weights.png"
    fig.savefig(p, dpi=120, bbox_inches="tight")
    plt.close(fig)
    paths.append(p)

    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax_, mat, title in (
        (axes[0], dump.states, "true state"),
        (axes[1], dump.generated, "generated state"),
    ):
        ax_.imshow(mat, aspect="auto", interpolation="nearest")
        ax_.set_title(title)
        ax_.set_xlabel("state coordinate")
        for seg in env.state_layout().segments:
            ax_.axvline(seg.stop - 0.5, color="w", lw=0.5)
    axes[0].set_ylabel("step")
    p = out / "trace_states.png"
    fig.savefig(p, dpi=120, bbox_inches="tight")
    plt.close(fig)
    paths.append(p)
    return paths


def trace(checkpoint_path, env_config: dict, seed: int, out_dir):
    env = make_env(env_config)
    config = TrainConfig.from_dict(env_config)
    bundle = load_models(checkpoint_path, env, config)
    dump = run_trace(env, bundle, seed)
    csv_path = write_trace(dump, env, out_dir)
    figure_paths = trace_figures(dump, env, out_dir)
    return dump, csv_path, figure_paths


# -- learning curves -------------------------------------------------------------


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(METRICS_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise InputError(f"metrics file {path} missing columns: {sorted(missing)}")
        return list(reader)


def curves(
    metric_paths: list,
    metrics: list[str] | None = None,
    out_dir=None,
) -> dict[str, np.ndarray]:
    """Aggregate >= 1 metrics CSVs into per-step mean and 95% CI across runs."""
    metrics = metrics or ["test_return", "test_win_rate"]
    runs = [read_metrics(p) for p in metric_paths]
    results = {}
    for metric in metrics:
        if metric not in METRICS_COLUMNS:
            raise InputError(f"unknown metric column: {metric}")
        per_run = []
        for rows in runs:
            series = {
                int(r["step"]): float(r[metric])
                for r in rows
                if r.get(metric) not in (None, "")
            }
            per_run.append(series)
        steps = sorted(set.intersection(*[set(s) for s in per_run]))
        table = np.zeros((len(steps), 4))
        for i, step in enumerate(steps):
            vals = np.array([s[step] for s in per_run])
            m, ci = mean_ci(vals)
            table[i] = (step, m, ci, len(vals))
        results[metric] = table
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        for metric, table in results.items():
            with open(out / f"curve_{metric}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["step", "mean", "ci95_half_width", "n_runs"])
                for row in table:
                    writer.writerow(
                        [int(row[0]), f"{row[1]:.8f}", f"{row[2]:.8f}", int(row[3])]
                    )
            fig, ax = plt.subplots(figsize=(7, 4))
            if len(table):
                ax.plot(table[:, 0], table[:, 1], "-o", ms=3)
                ax.fill_between(
                    table[:, 0], table[:, 1] - table[:, 2], table[:, 1] + table[:, 2],
                    alpha=0.25,
                )
            ax.set_xlabel("env steps")
            ax.set_ylabel(metric)
            fig.savefig(out / f"curve_{metric}.png", dpi=120, bbox_inches="tight")
            plt.close(fig)
    return results


def read_curve(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["step", "mean", "ci95_half_width", "n_runs"]:
            raise InputError(f"unexpected curve columns: {header}")
        return np.asarray([[float(v) for v in row] for row in reader])
