"""Command-line entry point: ``rot <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 missing input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from rot.approximator import save_snapshots
from rot.bc_trainer import pretrain
from rot.envs import ExpertFailure, generate_demos, get_spec, load_demos
from rot.harness import (METHODS, ConfigError, MissingInputError, compare_runs, evaluate,
                         load_config, load_policy, policy_fn, run)

EXIT_OK, EXIT_CONFIG, EXIT_MISSING = 0, 2, 3


def _demos(path):
    if not Path(path).exists():
        raise MissingInputError(f"demo file not found: {path}")
    try:
        return load_demos(path)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"malformed demo file {path}: {e}") from None


def cmd_gen_demos(args):
    try:
        spec = get_spec(args.env)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    demos = generate_demos(spec, args.count, args.seed, out=args.out)
    lengths = [len(e.actions) for e in demos.episodes]
    print(f"wrote {len(demos)} demo(s) for {spec.name} to {args.out} (lengths {lengths})")


def cmd_pretrain(args):
    cfg = load_config(args.config).resolved()
    demos = _demos(args.demos)
    spec = get_spec(cfg.env)
    if demos.env != spec.name:
        raise ConfigError(f"env: demos were recorded on {demos.env!r}, config asks for {spec.name!r}")
    res = pretrain(demos, steps=cfg.pretrain_steps, batch_size=cfg.pretrain_batch_size,
                   seed=cfg.seed, learning_rate=cfg.pretrain_learning_rate,
                   feature_dim=cfg.feature_dim, hidden_dim=cfg.hidden_dim,
                   action_bound=spec.action_bound)
    out = Path(args.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    save_snapshots(out / "checkpoints" / "bc.bin", [res.trunk, res.actor])
    sr, _ = evaluate(policy_fn(res.trunk, res.actor, spec.action_bound), spec,
                     cfg.eval_episodes, cfg.eval_seed)
    summary = {"initial_loss": res.initial_loss, "final_loss": res.final_loss,
               "success_rate": sr, "steps": cfg.pretrain_steps}
    (out / "pretrain.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"bc loss {res.initial_loss:.4g} -> {res.final_loss:.4g}; "
          f"success {sr:.2f} over {cfg.eval_episodes} starts")


def cmd_train(args):
    cfg = load_config(args.config, method=args.method, seed=args.seed)
    demos = _demos(args.demos)

    def progress(step, sr):
        if not args.quiet:
            print(f"step {step:>7d}  success {sr:.2f}", flush=True)

    res = run(cfg, out_dir=args.out, demos=demos, progress=progress)
    print(f"done in {res['wall_clock_s']:.1f}s; metrics in {Path(args.out) / 'metrics.csv'}")


def cmd_eval(args):
    trunk, actor = load_policy(args.checkpoint)
    try:
        spec = get_spec(args.env)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if trunk.in_dim != spec.observation_dim or actor.out_dim != spec.action_dim:
        raise ConfigError(f"checkpoint does not match {spec.name} dimensions")
    sr, _ = evaluate(policy_fn(trunk, actor, spec.action_bound), spec, args.episodes, args.seed)
    print(json.dumps({"env": spec.name, "episodes": args.episodes, "seed": args.seed,
                      "success_rate": sr}))


def cmd_compare(args):
    table = compare_runs(args.runs, threshold=args.threshold, baseline=args.baseline)
    print(f"{'run':<40s} {'step@' + str(args.threshold):>12s} {'speedup':>8s}")
    for row in table:
        step = "never" if row["threshold_step"] is None else str(row["threshold_step"])
        ratio = "n/a" if row["speedup"] is None else f"{row['speedup']:.2f}"
        print(f"{row['run']:<40s} {step:>12s} {ratio:>8s}")


def build_parser():
    p = argparse.ArgumentParser(prog="rot", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-demos", help="roll out the scripted expert")
    g.add_argument("--env", required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_demos)

    b = sub.add_parser("pretrain", help="behavior cloning only")
    b.add_argument("--demos", required=True)
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_pretrain)

    t = sub.add_parser("train", help="pretrain (if the method uses it) and finetune online")
    t.add_argument("--method", choices=METHODS)
    t.add_argument("--demos", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="success rate of a saved policy")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env", required=True)
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=10_000)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="threshold-crossing steps and speedups")
    c.add_argument("--runs", nargs="+", required=True)
    c.add_argument("--threshold", type=float, default=0.9)
    c.add_argument("--baseline")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInputError, FileNotFoundError) as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except ExpertFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
