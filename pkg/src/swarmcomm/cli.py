"""Command line entry point: ``swarmcomm {train,eval,curriculum,zeroshot,render}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="INI run configuration (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides run.out_dir)")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads for numerical kernels")
    p.add_argument("--deterministic", action="store_true", help="single thread and batch-size independent matrix kernels")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmcomm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy with PPO")
    _common(p)
    p.add_argument("--iterations", type=int, help="override run.max_iterations")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("--agents", type=int, help="team size (defaults to the checkpoint's)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--sample", action="store_true", help="sample actions instead of greedy selection")
    p.add_argument("--trajectory", metavar="CSV", help="write a trajectory export")

    p = sub.add_parser("curriculum", help="staged training over increasing team sizes")
    _common(p)
    p.add_argument("--stage-budget", type=int, help="override curriculum.stage_budget")

    p = sub.add_parser("zeroshot", help="evaluate a checkpoint at other team sizes")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("--deltas", default="-2,-1,0,1,2", help="comma separated team-size offsets")
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("render", help="render a trajectory export to SVG")
    _common(p)
    p.add_argument("trajectory")
    p.add_argument("--half-width", type=float, help="arena half width (defaults to task.arena_half_width)")
    return parser


def _configure_threads(args) -> None:
    threads = 1 if args.deterministic else args.threads
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s: %(message)s")
    # must precede the first numpy import to take effect
    _configure_threads(args)

    from . import gradtape
    from .harness import runner
    from .harness.checkpoint import CheckpointError
    from .harness.config import ConfigError, load_config

    gradtape.set_row_stable(args.deterministic)
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        if overrides:
            cfg = cfg.replace(run=overrides)

        if args.command == "train":
            res = runner.cmd_train(cfg, max_iterations=args.iterations)
            print(json.dumps({"iterations": res.iterations, "reached": res.reached, "updates_to_threshold": res.updates_to_threshold,
                              "last_eval": None if res.last_eval is None else res.last_eval.row()}))
        elif args.command == "curriculum":
            res = runner.cmd_curriculum(cfg, stage_budget=args.stage_budget)
            for s in res.stages:
                print(f"M={s.num_agents}: updates={s.iterations} reached={s.reached}")
            return 0 if res.completed else 1
        elif args.command == "eval":
            ev_cfg = cfg if args.config else None
            summary = runner.cmd_eval(args.checkpoint, ev_cfg, args.agents, args.episodes, greedy=not args.sample,
                                      trajectory_path=args.trajectory)
            print(json.dumps(summary.row()))
        elif args.command == "zeroshot":
            deltas = [int(d) for d in args.deltas.split(",") if d.strip()]
            out = os.path.join(args.out, "zeroshot.csv") if args.out else None
            rows = runner.cmd_zeroshot(args.checkpoint, deltas, cfg if args.config else None, args.episodes, out_path=out)
            print(f"{'delta':>5} {'M':>3} {'S%':>6} {'time':>6} {'R':>8}")
            for r in rows:
                print(f"{r['delta']:>+5d} {r['agents']:>3d} {r['success_rate']:>6.1f} {r['mean_time']:>6.2f} {r['mean_final_reward']:>8.3f}")
        elif args.command == "render":
            from .harness.render import cmd_render

            hw = args.half_width if args.half_width is not None else cfg.task.arena_half_width
            for path in cmd_render(args.trajectory, args.out or cfg.run.out_dir, hw):
                print(path)
    except (ConfigError, CheckpointError, ValueError, OSError, FloatingPointError) as exc:
        print(f"swarmcomm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
