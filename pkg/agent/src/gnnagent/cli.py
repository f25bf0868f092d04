"""Command-line interface: train a policy against a serving simulator, or
evaluate a saved checkpoint."""

from __future__ import annotations

import argparse
import sys

from .client import ProtocolError
from .ppo import AgentConfig, Trainer, evaluate_checkpoint


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnnagent",
        description="Graph-attention PPO agent for the task-assignment "
                    "wire protocol")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train against a serving simulator")
    p.add_argument("--endpoint", required=True, help="simulator host:port")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--updates", type=int, default=20)
    p.add_argument("--rollout", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--entropy-coef", type=float, default=0.01)
    p.add_argument("--eval-every", type=int, default=5)
    p.add_argument("--eval-episodes", type=int, default=10)
    p.add_argument("--eval-seed-base", type=int, default=10_000)

    p = sub.add_parser("eval", help="run a saved checkpoint")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed-base", type=int, default=10_000)
    p.add_argument("--sample", action="store_true",
                   help="sample actions instead of acting greedily")
    return parser


def _cmd_train(args) -> int:
    config = AgentConfig(seed=args.seed, learning_rate=args.lr,
                         rollout_steps=args.rollout,
                         entropy_coef=args.entropy_coef)
    trainer = Trainer(args.endpoint, config, args.out)
    try:
        history = trainer.train(args.updates, eval_every=args.eval_every,
                                eval_episodes=args.eval_episodes,
                                eval_seed_base=args.eval_seed_base)
    finally:
        trainer.close()
    for row in history:
        print(f"update {row['update']:4d}  steps {row['steps']:7d}  "
              f"eval mean cycle {row['mean_eval_cycle']:.4f} h")
    best = min(history, key=lambda row: row["mean_eval_cycle"])
    print(f"best eval mean cycle {best['mean_eval_cycle']:.4f} h "
          f"at update {best['update']}; checkpoints in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    summaries = evaluate_checkpoint(args.endpoint, args.checkpoint,
                                    args.episodes, seed_base=args.seed_base,
                                    greedy=not args.sample)
    cycles = [s["mean_cycle_h"] for s in summaries]
    for summary in summaries:
        print(f"seed {summary['seed']:6d}  cases {summary['cases']:5d}  "
              f"mean cycle {summary['mean_cycle_h']:.4f} h")
    print(f"mean over {len(cycles)} episodes: "
          f"{sum(cycles) / len(cycles):.4f} h")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    commands = {"train": _cmd_train, "eval": _cmd_eval}
    try:
        return commands[args.verb](args)
    except (ProtocolError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
