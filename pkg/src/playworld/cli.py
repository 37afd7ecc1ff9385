"""Command line entry points: collect, agent-train, train, finetune, eval, serve."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


def _add_collect(sub):
    p = sub.add_parser("collect", help="run episodes with a policy and store them")
    p.add_argument("--env", choices=["toy", "coinrun"], default="toy")
    p.add_argument("--difficulty", choices=["easy", "hard"], default="hard")
    p.add_argument("--policy", choices=["random", "trained"], default="random")
    p.add_argument("--policy-checkpoint", default=None)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--velocity-overlay", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None,
                   help="truncate recording after this many steps (env cap still 500)")


def _add_agent_train(sub):
    p = sub.add_parser("agent-train", help="train the exploration agent on the toy env")
    p.add_argument("--env", choices=["toy"], default="toy")
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--difficulty", choices=["easy", "hard"], default="easy")


def _add_train(sub):
    p = sub.add_parser("train", help="train tokenizer / lam+dynamics / guided dynamics")
    p.add_argument("--target", choices=["tokenizer", "lam-dynamics", "dynamics-g"],
                   required=True)
    p.add_argument("--config", required=True, help="flat JSON hyperparameter file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)


def _add_finetune(sub):
    p = sub.add_parser("finetune", help="continue training from a checkpoint on new data")
    p.add_argument("--from", dest="base", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tokenizer", default=None,
                   help="tokenizer checkpoint for dynamics finetunes")
    p.add_argument("--total-steps", type=int, required=True)
    p.add_argument("--warmup-steps", type=int, default=None)


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--context", type=int, choices=[1, 4], default=1)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--metrics", default="psnr,ssim,fid,dpsnr")
    p.add_argument("--mask-velocity", action="store_true")
    p.add_argument("--split", default="all")
    p.add_argument("--sequences", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)


def _add_serve(sub):
    p = sub.add_parser("serve", help="interactive play service")
    p.add_argument("--ckpt", required=True, help="checkpoint file or directory")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-sessions", type=int, default=8)
    p.add_argument("--data", default=None, help="dataset for initial frames")
    p.add_argument("--host", default="127.0.0.1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="playworld")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_collect(sub)
    _add_agent_train(sub)
    _add_train(sub)
    _add_finetune(sub)
    _add_eval(sub)
    _add_serve(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    if args.command == "collect":
        from .envs import PolicySpec, collect_episodes, make_env

        env = make_env(args.env, velocity_overlay=args.velocity_overlay)
        spec = PolicySpec(kind=args.policy, checkpoint=args.policy_checkpoint)
        report = collect_episodes(
            env, spec, args.episodes, Path(args.out),
            velocity_overlay=args.velocity_overlay, difficulty=args.difficulty,
            seed=args.seed, max_steps=args.max_steps,
        )
        print(json.dumps(report.to_dict(), indent=2))

    elif args.command == "agent-train":
        from .agents import PpoConfig, train_ppo

        result = train_ppo(
            PpoConfig(total_steps=args.steps, seed=args.seed, difficulty=args.difficulty),
            Path(args.out),
        )
        print(json.dumps({"checkpoint": result["checkpoint"], "steps": result["steps"],
                          "final": result["stats"][-1] if result["stats"] else None}, indent=2))

    elif args.command == "train":
        from .trainer import load_run_config, run_training

        run_cfg, opt_cfg = load_run_config(args.config)
        target = {"tokenizer": "tokenizer", "lam-dynamics": "lam_dynamics",
                  "dynamics-g": "dynamics_guided"}[args.target]
        if run_cfg.target != target:
            run_cfg.target = target
            run_cfg.__post_init__()
        run_cfg.data, run_cfg.out = args.data, args.out
        result = run_training(run_cfg, opt_cfg)
        print(json.dumps({"final": result.final_checkpoint, "best": result.best_checkpoint,
                          "metrics": result.metrics_path}, indent=2))

    elif args.command == "finetune":
        from .trainer import OptimizerConfig, run_finetune

        opt_kwargs = {"total_steps": args.total_steps}
        if args.warmup_steps is not None:
            opt_kwargs["warmup_steps"] = args.warmup_steps
        elif args.total_steps < 5000:
            opt_kwargs["warmup_steps"] = max(args.total_steps // 10, 0)
        result = run_finetune(args.base, args.data, args.out,
                              OptimizerConfig(**opt_kwargs),
                              tokenizer_checkpoint=args.tokenizer)
        print(json.dumps({"final": result.final_checkpoint, "best": result.best_checkpoint},
                         indent=2))

    elif args.command == "eval":
        from .metrics import run_eval

        report = run_eval(
            args.model, args.data, context=args.context, horizon=args.horizon,
            metrics=tuple(args.metrics.split(",")), mask_velocity=args.mask_velocity,
            n_sequences=args.sequences, seed=args.seed, split=args.split, out=args.out,
        )
        print(json.dumps(report, indent=2))

    elif args.command == "serve":
        from .service import serve

        serve(args.ckpt, port=args.port, max_sessions=args.max_sessions,
              data=args.data, host=args.host)

    return 0


if __name__ == "__main__":
    sys.exit(main())
