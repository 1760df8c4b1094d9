"""Command-line entry point: ``pomdp-nis <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import Dataset, TrialRecord, estimate
from .experiments import (
    EXPERIMENTS,
    TRIAL_COLUMNS,
    ExperimentSpec,
    resolve_world,
    run,
    world_sha256,
    write_csv,
)
from .io import FormatError, load, load_policy, save_policy, save_trial_log
from .learn import GREEDY_CLIMB, LearnerConfig, ReinforceConfig, greedy_learn, reinforce_learn
from .oracle import exact_returns, moments
from .policy import FscPolicy
from .search import ClimbOptions
from .world import InvalidModelError, Pomdp, sample_episodes, validate


DEFAULT_WORLD = "left-right"


def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--world", default=None,
                   help="built-in world name (left-right, load-unload) or world JSON path; "
                        "default left-right, or the experiment's own world")
    p.add_argument("--horizon", type=int, default=None, help="override the episode length")
    p.add_argument("--seed", type=int, default=0, help="random seed (master seed for experiments)")
    p.add_argument("--trials", type=int, default=None, help="number of trials or episodes")
    p.add_argument("--estimator", choices=("normalized", "unnormalized"), default=None)
    p.add_argument("--memory-states", type=int, default=None, help="controller memory size")
    p.add_argument("--out", default=None, help="output file or directory")
    return p


def _climb_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("climb")
    g.add_argument("--max-iterations", type=int, default=GREEDY_CLIMB.max_iterations)
    g.add_argument("--gradient-tolerance", type=float, default=GREEDY_CLIMB.gradient_tolerance)
    g.add_argument("--logit-bound", type=float, default=GREEDY_CLIMB.logit_bound,
                   help="box on every logit; 0 disables it")


def _climb(args) -> ClimbOptions:
    return ClimbOptions(
        max_iterations=args.max_iterations,
        gradient_tolerance=args.gradient_tolerance,
        logit_bound=args.logit_bound or None,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pomdp-nis",
        description="Importance-sampled policy evaluation and search on tabular POMDPs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    shared = _shared()

    p = sub.add_parser("simulate", parents=[shared], help="run a policy and log its episodes")
    p.add_argument("--policy", help="policy JSON (default: uniform)")

    p = sub.add_parser("oracle", parents=[shared], help="exact returns and estimator moments")
    p.add_argument("--policy", action="append", default=[],
                   help="policy JSON; repeat for several")
    p.add_argument("--sampler", action="append", default=[],
                   help="sampling policy JSON for moments; repeat for a mixture")
    p.add_argument("--n", type=int, default=None, help="data size for moments")

    p = sub.add_parser("learn", parents=[shared], help="greedy climbing of an estimator")
    _climb_flags(p)

    p = sub.add_parser("reinforce", parents=[shared], help="REINFORCE baseline learner")
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--decay", choices=("constant", "inverse"), default="constant")
    p.add_argument("--baseline", choices=("running-mean", "none"), default="running-mean")
    p.add_argument("--memory-mode", choices=("explicit", "external"), default="explicit")

    p = sub.add_parser("experiment", parents=[shared], help="run a seeded experiment")
    p.add_argument("id", choices=EXPERIMENTS)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seeds", type=int, nargs="+", default=None,
                   help="explicit per-run seeds (one per run)")
    p.add_argument("--replications", type=int, default=600)
    p.add_argument("--n-max", type=int, default=100)
    p.add_argument("--reinforce-trials", type=int, default=1000)
    p.add_argument("--ablation", action="store_true",
                   help="load-unload: also run greedy with external memory")
    p.add_argument("--workers", type=int, default=1)
    _climb_flags(p)

    p = sub.add_parser("validate", help="check a world, policy or trial-log file")
    p.add_argument("path")
    return parser


def _policy(args, model: Pomdp, path=None) -> FscPolicy:
    if path:
        return load_policy(path)
    return FscPolicy.uniform(model.n_obs, model.n_actions, args.memory_states or 1)


def cmd_simulate(args) -> int:
    model = resolve_world(args.world or DEFAULT_WORLD, args.horizon)
    policy = _policy(args, model, args.policy)
    rng = np.random.default_rng(args.seed)
    histories = sample_episodes(model, policy, rng, args.trials or 1)
    data = Dataset(TrialRecord(policy, h) for h in histories)
    if args.out:
        save_trial_log(data.records, args.out)
    for k, rec in enumerate(data.records, start=1):
        print(f"episode {k}: return {rec.ret!r}")
    return 0


def cmd_oracle(args) -> int:
    model = resolve_world(args.world or DEFAULT_WORLD, args.horizon)
    policies = [load_policy(p) for p in args.policy] or [_policy(args, model)]
    if args.sampler:
        if len(policies) != 2:
            raise SystemExit("moments need exactly two --policy targets")
        samplers = [load_policy(p) for p in args.sampler]
        report = moments(model, samplers, policies[0], policies[1], args.n or len(samplers))
        text = report.to_json()
    else:
        values = exact_returns(model, policies)
        text = json.dumps({"world": model.name, "exact_returns": [float(v) for v in values]})
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _write_trial_outputs(args, log, model, config: dict, method: str) -> None:
    out = Path(args.out or "learn-out")
    out.mkdir(parents=True, exist_ok=True)
    save_trial_log(log.records, out / "trials.jsonl")
    save_policy(log.final_policy, out / "final_policy.json")
    head = {
        "tool": f"pomdp_nis {__version__}",
        "seed": args.seed,
        "world": model.name,
        "world_sha256": world_sha256(model),
        "horizon": model.horizon,
        "method": method,
        **config,
    }
    rows = ((s.trial, s.ret, s.estimate, s.grad_norm, s.climb_iters) for s in log.stats)
    cols = tuple(c for c in TRIAL_COLUMNS if c != "exact_return")
    write_csv(out / "trials.csv", head, cols, rows)


def cmd_learn(args) -> int:
    model = resolve_world(args.world or DEFAULT_WORLD, args.horizon)
    kind = args.estimator or "normalized"
    config = LearnerConfig(kind=kind, trials=args.trials or 50,
                           n_mem=args.memory_states or 1, climb=_climb(args), seed=args.seed)
    log = greedy_learn(model, config)
    _write_trial_outputs(args, log, model, {"trials": config.trials, "n_mem": config.n_mem,
                                            "estimator": kind,
                                            "climb": config.climb.as_dict()}, "greedy")
    final = estimate(Dataset(log.records), log.final_policy, kind)
    print(f"{config.trials} trials, last return {float(log.returns[-1])!r}, final estimate {final!r}")
    return 0


def cmd_reinforce(args) -> int:
    model = resolve_world(args.world or DEFAULT_WORLD, args.horizon)
    config = ReinforceConfig(base_rate=args.rate, decay=args.decay, baseline=args.baseline,
                             memory=args.memory_mode, n_mem=args.memory_states or 1,
                             trials=args.trials or 500, seed=args.seed)
    log = reinforce_learn(model, config)
    settings = {k: getattr(config, k) for k in
                ("base_rate", "decay", "baseline", "memory", "n_mem", "trials")}
    _write_trial_outputs(args, log, log.world, {"reinforce": settings}, "reinforce")
    tail = float(log.returns[-10:].mean())
    print(f"{config.trials} trials, mean return of the last 10: {tail!r}")
    return 0


def cmd_experiment(args) -> int:
    kinds = (args.estimator,) if args.estimator else ("normalized", "unnormalized")
    spec = ExperimentSpec(
        experiment=args.id,
        world=args.world,
        runs=args.runs, seeds=args.seeds, master_seed=args.seed, kinds=kinds,
        out=args.out or f"results/{args.id}", horizon=args.horizon, trials=args.trials,
        n_mem=args.memory_states, replications=args.replications, n_max=args.n_max,
        climb=_climb(args), reinforce_trials=args.reinforce_trials,
        ablation=args.ablation, workers=args.workers,
    )
    result = run(spec)
    print(json.dumps(result.summary, sort_keys=True, default=str))
    print(f"{len(result.files)} files under {spec.out}")
    return 0


def cmd_validate(args) -> int:
    obj = load(args.path)
    if isinstance(obj, Pomdp):
        validate(obj)
        print(f"world {obj.name!r}: {obj.n_states} states, {obj.n_obs} observations, "
              f"{obj.n_actions} actions, horizon {obj.horizon}")
    elif isinstance(obj, FscPolicy):
        print(f"policy: {obj.n_obs} observations, {obj.n_mem} memory states, "
              f"{obj.n_actions} actions")
    else:
        print(f"trial log: {len(obj)} trials")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "learn": cmd_learn,
    "reinforce": cmd_reinforce,
    "experiment": cmd_experiment,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (FormatError, InvalidModelError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
