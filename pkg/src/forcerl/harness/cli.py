"""Command line: ``forcerl <subcommand> [--config F] [--seed N] [--out DIR] [--episodes N]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .. import mdgps as md
from ..ilqg import InsertionSystem
from . import experiments as ex
from . import logs
from .config import ConfigError, ExperimentConfig
from .selfcheck import lqr_self_check

log = logging.getLogger("forcerl")


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.episodes is not None:
        changes["episodes"] = args.episodes
        changes["generalize"] = {"episodes": args.episodes}
    return cfg.with_(**changes) if changes else cfg


def _finish(summary, out, name="summary.json"):
    os.makedirs(out, exist_ok=True)
    summary.write(os.path.join(out, name))
    print(summary.table())
    return 1 if summary.errored else 0


def cmd_train(args, cfg):
    name = cfg.mode + ("+aug" if cfg.augmented else "")
    try:
        res, _ = ex.run_cell(cfg, name, cfg.seed, args.out)
    except Exception as exc:
        res = ex.CellResult(name, 0, cfg.episodes, float("nan"), 0.0, error=f"{type(exc).__name__}: {exc}")
    return _finish(ex.ResultSummary([res], ex.provenance(cfg, protocol="train")), args.out)


def _teacher(args, cfg):
    cfg = cfg.with_(mode="operational", augmented=False)
    if args.teacher:
        env = ex.build_env(cfg)
        policy = logs.load_policy(args.teacher)
        return ex.Trained(env, InsertionSystem(env), ex.build_cost(cfg, env), policy, None, None)
    return ex.train_ilqg(cfg, ex.child_seeds(cfg.seed, 1)[0])


def cmd_distill(args, cfg):
    teacher = _teacher(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    report = {}
    for kind, (net, info) in ex.distill_policies(cfg, teacher, cfg.seed).items():
        if net is not None:
            logs.save_policy(os.path.join(args.out, f"{kind}.json"), net)
            logs.write_curve_csv(os.path.join(args.out, f"{kind}_curve.csv"),
                                 list(enumerate(info["curve"])), ["epoch", "loss"])
        report[kind] = {k: v for k, v in info.items() if k != "curve"}
        status = "aborted" if info["aborted"] else "ok"
        print(f"{kind:<18}{status:>8}  loss {info['initial_loss']:.4g} -> {info['final_loss']:.4g}")
    with open(os.path.join(args.out, "distill.json"), "w") as fh:
        json.dump({"provenance": ex.provenance(cfg, protocol="distill"), "policies": report}, fh, indent=2)
    return 0


def cmd_eval(args, cfg):
    if not args.policy:
        raise ConfigError("eval needs --policy <file>")
    policy = logs.load_policy(args.policy)
    seeds = ex.child_seeds(cfg.seed, cfg.episodes)
    try:
        if isinstance(policy, md.MlpPolicy):
            cfg = cfg.with_(mode="operational", augmented=False)
            env = ex.build_env(cfg)
            trajs, wall = ex.evaluate_mlp(env, policy, ex.build_cost(cfg, env), seeds, cfg.distill["alpha_f"])
        else:
            cfg = cfg.with_(mode=policy.mode, augmented=policy.augmented)
            env = ex.build_env(cfg)
            system = InsertionSystem(env, augmented=policy.augmented)
            trajs, wall = ex.evaluate_ilqg(system, policy, ex.build_cost(cfg, env), seeds)
        res = ex.summarize(os.path.basename(args.policy), trajs, wall)
        ex._write_rollouts(os.path.join(args.out, "rollouts"), trajs, env.model,
                           logs.policy_std(policy, cfg.env["horizon"]))
    except Exception as exc:
        res = ex.CellResult(os.path.basename(args.policy), 0, cfg.episodes, float("nan"), 0.0,
                            error=f"{type(exc).__name__}: {exc}")
    return _finish(ex.ResultSummary([res], ex.provenance(cfg, protocol="eval")), args.out)


def cmd_ablate(args, cfg):
    summary = ex.run_ablation_matrix(cfg, args.out)
    print(summary.table())
    return 1 if summary.errored else 0


def cmd_generalize(args, cfg):
    summary = ex.run_generalization(cfg, args.out)
    print(summary.table())
    return 1 if summary.errored else 0


def cmd_selfcheck(args, cfg):
    results = lqr_self_check(fault=args.fault)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_export(args, cfg):
    if not args.log:
        raise ConfigError("export needs --log <rollout.csv>")
    try:
        paths = logs.plot_export(args.log, args.out)
    except (logs.MalformedLog, OSError) as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


COMMANDS = {
    "train": (cmd_train, "optimize one iLQG configuration and evaluate it"),
    "distill": (cmd_distill, "distill the operational-mode teacher into late- and first-layer-fusion networks"),
    "eval": (cmd_eval, "evaluate a frozen policy file"),
    "ablate": (cmd_ablate, "run the baseline comparison matrix"),
    "generalize": (cmd_generalize, "evaluate frozen policies at shifted goals"),
    "selfcheck": (cmd_selfcheck, "run the analytic fixtures"),
    "export": (cmd_export, "turn a rollout log into plot-ready series"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="forcerl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI experiment file (see schema.ini)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default=os.path.join("results", name), help="output directory")
        p.add_argument("--episodes", type=int, help="evaluation episodes (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "distill":
            p.add_argument("--teacher", help="saved linear-Gaussian policy; trained afresh if omitted")
        if name == "eval":
            p.add_argument("--policy", help="policy file written by train or distill")
        if name == "selfcheck":
            p.add_argument("--fault", choices=["qux_sign"], help="inject a known bug to see the checks fail")
        if name == "export":
            p.add_argument("--log", help="rollout CSV to export")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        return COMMANDS[args.command][0](args, cfg)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
