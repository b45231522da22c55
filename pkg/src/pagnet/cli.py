"""Command-line entry point.

Verbs: train, pretrain, collect, evaluate, trace, curves. Configuration
comes from a YAML file plus dotted --set overrides; --seed, --mode and
--out-dir are first-class flags. Exits 0 on success, nonzero with a
one-line machine-parsable "error:<category>: message" on failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .errors import ConfigurationError, PagnetError
from .training import (
    MODES,
    TrainConfig,
    collect_dataset,
    load_dataset,
    pretrain,
    save_dataset,
    train,
)

DEFAULT_CONFIG = {"env": {"name": "hallway"}}


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"--set {dotted}: {k} is not a mapping")
    node[keys[-1]] = value


def load_config(args) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if args.config:
        with open(args.config) as fh:
            cfg = yaml.safe_load(fh) or {}
        if not isinstance(cfg, dict):
            raise ConfigurationError(f"config file {args.config} is not a mapping")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        _apply_override(cfg, key, _coerce(value))
    train_block = cfg.setdefault("train", {})
    if args.seed is not None:
        train_block["seed"] = args.seed
    if getattr(args, "mode", None):
        train_block["mode"] = args.mode
    if args.out_dir:
        train_block["out_dir"] = args.out_dir
    return cfg


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file")
    p.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="dotted config override, e.g. --set hallway.lengths=[4,6,8,10]",
    )
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pagnet")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="run the training loop")
    _add_common(p)
    p.add_argument("--mode", choices=MODES, default=None)

    p = sub.add_parser("collect", help="gather a random-policy offline dataset")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--out", required=True, help="dataset .npz path")

    p = sub.add_parser("pretrain", help="train the completion stack offline")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="dataset .npz from collect")
    p.add_argument("--updates", type=int, default=2000)
    p.add_argument("--out", required=True, help="checkpoint output path")

    p = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)

    p = sub.add_parser("trace", help="dump one greedy episode's weight/state trace")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("curves", help="aggregate metrics CSVs into learning curves")
    _add_common(p)
    p.add_argument("metrics", nargs="+", help="metrics CSV files")
    p.add_argument(
        "--metric", action="append",
        help="metric column to aggregate (repeatable)",
    )
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out_dir or "runs")

    if args.verb == "train":
        cfg = load_config(args)
        summary = train(TrainConfig.from_dict(cfg))
        print(
            f"done: steps={summary.env_steps} episodes={summary.episodes} "
            f"last_test_return={summary.last_test_return} "
            f"last_test_win_rate={summary.last_test_win_rate} "
            f"metrics={summary.metrics_path} checkpoint={summary.checkpoint_path}"
        )
        return 0

    if args.verb == "collect":
        cfg = load_config(args)
        episodes = collect_dataset(TrainConfig.from_dict(cfg), args.episodes)
        save_dataset(args.out, episodes)
        print(f"wrote {len(episodes)} episodes to {args.out}")
        return 0

    if args.verb == "pretrain":
        cfg = load_config(args)
        episodes = load_dataset(args.dataset)
        pretrain(
            episodes, TrainConfig.from_dict(cfg),
            n_updates=args.updates, out_path=args.out,
        )
        print(f"wrote pretrained checkpoint to {args.out}")
        return 0

    if args.verb == "evaluate":
        from .evaluation import evaluate

        cfg = load_config(args)
        report = evaluate(
            args.checkpoint, cfg, args.episodes, args.seed or 0, out_dir=out_dir
        )
        print(
            f"episodes={report.n_episodes} mean_return={report.mean_return:.4f} "
            f"ci95={report.ci_return:.4f} win_rate={report.win_rate:.4f}"
        )
        return 0

    if args.verb == "trace":
        from .evaluation import trace

        cfg = load_config(args)
        _, csv_path, figure_paths = trace(
            args.checkpoint, cfg, args.seed or 0, out_dir
        )
        print(f"trace={csv_path} figures={[str(p) for p in figure_paths]}")
        return 0

    if args.verb == "curves":
        from .evaluation import curves

        curves(args.metrics, metrics=args.metric, out_dir=out_dir)
        print(f"curves written to {out_dir}")
        return 0

    raise ConfigurationError(f"unknown verb {args.verb!r}")


def main(argv=None) -> int:
    try:
        return run(argv)
    except PagnetError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
