"""The ablation matrix and the goal-shift generalization study."""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import contact_sim as cs
from .. import mdgps as md
from .. import opspace_ctrl as oc
from ..ilqg import CostSpec, InsertionSystem, forward_pass, optimize
from ..ilqg.types import Trajectory
from . import logs
from .config import ExperimentConfig

log = logging.getLogger(__name__)

ENV_MODES = {"operational": "operational", "torque": "torque", "kinematics": "position"}

# (cell name, action mode, augmented state)
ABLATION_CELLS = (
    ("kinematics", "kinematics", False),
    ("torque", "torque", False),
    ("torque+aug", "torque", True),
    ("operational", "operational", False),
    ("operational+aug", "operational", True),
)

FUSION = {"mlp-late-fusion": None, "mlp-first-layer": 0}


def code_version():
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # not installed: running from a source checkout
        return "source"


def child_seeds(seed, n):
    """Independent integer seeds, one per consumer, spawned from ``seed``."""
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


# -- results ----------------------------------------------------------------

@dataclass
class CellResult:
    name: str
    successes: int
    episodes: int
    mean_final_cost: float
    mean_wall_time: float
    error: str = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.successes <= self.episodes:
            raise ValueError("successes must lie in [0, episodes]")


@dataclass
class ResultSummary:
    cells: list
    provenance: dict
    artifacts: dict = field(default_factory=dict, repr=False)  # in-memory only

    @property
    def errored(self):
        return [c.name for c in self.cells if c.error]

    def cell(self, name):
        for c in self.cells:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"provenance": self.provenance, "cells": [asdict(c) for c in self.cells]}

    def deterministic_dict(self):
        """Everything except wall-clock timings, which no seed can pin down."""
        d = self.to_dict()
        for c in d["cells"]:
            c.pop("mean_wall_time")
        return d

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def table(self):
        lines = [f"{'cell':<28}{'success':>10}{'final cost':>14}{'s/episode':>11}"]
        for c in self.cells:
            status = f"{c.successes}/{c.episodes}"
            if c.error:
                status = "ERROR"
            elif c.extra.get("aborted"):
                status = f"abort {status}"
            lines.append(f"{c.name:<28}{status:>10}{c.mean_final_cost:>14.4g}{c.mean_wall_time:>11.3f}")
            if c.error:
                lines.append(f"    {c.error}")
        return "\n".join(lines)


def provenance(cfg, **extra):
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "code_version": code_version(),
            "numpy": np.__version__, **extra}


# -- construction -----------------------------------------------------------

def build_env(cfg, mode=None):
    e = cfg.env
    mode = mode or cfg.mode
    limit = np.array([e["force_limit"]] * 3 + [e["moment_limit"]] * 3)
    return cs.make_env(
        geometry=cs.HoleGeometry(clearance=e["clearance"]),
        noise=cs.FtNoiseModel(np.array(e["ft_sigma"])),
        height=e["height"], registration=e["registration"], horizon=e["horizon"],
        start_sigma=e["start_sigma"], substeps=e["substeps"], reach_fraction=e["reach_fraction"],
        qd_limit=e["qd_limit"], wrench_limit=limit, gains=oc.HybridGains.stiff(3, motion=e["motion_weight"]),
        mode=ENV_MODES[mode], seed=cfg.seed)


def build_cost(cfg, env):
    tp = env.target_pose
    pose_index = InsertionSystem(env.with_mode("operational")).pose_index
    return CostSpec.for_pose(tp.position, tp.orientation, pose_index=pose_index, **cfg.cost)


@dataclass
class Trained:
    env: cs.TaskEnv
    system: InsertionSystem
    cost: CostSpec
    policy: object
    log: object
    nominal: Trajectory


def train_ilqg(cfg, seed):
    if cfg.mode == "kinematics":
        raise ValueError("kinematics-only mode is not trained")
    env = build_env(cfg)
    system = InsertionSystem(env, augmented=cfg.augmented)
    cost = build_cost(cfg, env)
    policy, tlog, nominal = optimize(system, cfg.ilqg_config(), cost, seed=seed)
    return Trained(env, system, cost, policy, tlog, nominal)


# -- evaluation -------------------------------------------------------------

def _timed(fn, seeds):
    out, times = [], []
    for s in seeds:
        t0 = time.perf_counter()
        out.append(fn(np.random.default_rng(s)))
        times.append(time.perf_counter() - t0)
    return out, float(np.mean(times)) if times else 0.0


def evaluate_ilqg(system, policy, cost, seeds):
    """Sampled executions of the linear-Gaussian controller from perturbed starts."""
    return _timed(lambda rng: forward_pass(system, policy, cost, alpha=0.0, noise=True, rng=rng,
                                           perturb=True), seeds)


def kinematics_rollout(env, cost, rng):
    """Servo the joints along the believed straight-line plan; no learning."""
    observer = InsertionSystem(env.with_mode("operational"))
    T = env.horizon
    s = cs.reset(env, rng)
    reading = cs.sense(env, s, rng)
    X, U, R, W, Q, QD, V = [], [], [], [], [], [], []
    for t in range(T):
        X.append(observer.observe(s, reading))
        q_star = cs.setpoint(env, t)
        U.append(q_star)
        R.append(reading.f_t)
        W.append(reading.true_wrench)
        Q.append(s.q)
        QD.append(s.qdot)
        V.append(env.model.tool_twist(s.q, s.qdot))
        if t < T - 1:
            s, reading, _ = cs.step(env, s, q_star, rng, t=t)
    zero = np.zeros(3)
    costs = np.array([cost(X[t], zero, final=(t == T - 1)) for t in range(T)])
    return Trajectory(np.array(X), np.array(U), costs, readings=np.array(R), true_wrench=np.array(W),
                      q=np.array(Q), qdot=np.array(QD), twist=np.array(V),
                      success=cs.is_success(env, s), final_state=s)


def evaluate_kinematics(env, cost, seeds):
    return _timed(lambda rng: kinematics_rollout(env, cost, rng), seeds)


def evaluate_mlp(env, policy, cost, seeds, alpha_f=0.2):
    """Executions of a distilled network sampled from its Gaussian.

    The teacher is scored the same way.  Its mean action alone does not
    find a hole that has moved away from the believed position; the
    exploration noise does.
    """
    return _timed(lambda rng: md.run_policy(env, policy, deterministic=False, rng=rng, alpha_f=alpha_f,
                                            cost=cost), seeds)


def summarize(name, trajs, wall, **extra):
    return CellResult(name, int(sum(bool(t.success) for t in trajs)), len(trajs),
                      float(np.mean([t.costs[-1] for t in trajs])), wall, extra=extra)


def insertion_constraint(geometry):
    """Natural constraints of a peg in its hole: no sideways motion, no rotation.

    The rotation row is scaled by the peg half-width so both rows measure a
    speed (m/s) at the peg's edge.
    """
    A = np.zeros((2, 6))
    A[0, 0:2] = geometry.lateral
    A[1, 5] = 0.5 * geometry.peg_width
    return oc.PfaffianConstraint(A)


def constraint_ratio(env, trajs):
    """mean |A V| over contact steps divided by mean |V| (planar twist, same units).

    Returns ``(ratio, contact steps)``; the ratio is NaN without contact.
    """
    con = insertion_constraint(env.geometry)
    g = env.geometry
    # the full planar twist in the hole frame, rotation scaled like the constraint row
    frame = np.zeros((3, 6))
    frame[0, 0:2], frame[1, 0:2], frame[2, 5] = g.lateral, g.axis, 0.5 * g.peg_width
    num, den = [], []
    for tr in trajs:
        for V, W in zip(tr.twist, tr.true_wrench):
            if np.any(W):
                num.append(np.abs(oc.constraint_violation(con, V)).sum())
                den.append(np.abs(frame @ V).sum())
    if not num:
        return float("nan"), 0
    return float(np.mean(num) / np.mean(den)), len(num)


def _write_rollouts(out_dir, trajs, model, std=None):
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    for i, tr in enumerate(trajs):
        logs.write_rollout_csv(os.path.join(out_dir, f"rollout_{i:03d}.csv"), tr, model, std)


def _cell_dir(out, name):
    return None if out is None else os.path.join(out, name.replace("+", "_").replace("@", "_"))


# -- protocols --------------------------------------------------------------

def run_cell(cfg, name, seed, out=None):
    """Train (unless kinematics-only) and evaluate one configuration.

    Returns ``(CellResult, artifact)`` where the artifact is the ``Trained``
    bundle, or None for the learning-free servo.
    """
    train_seed, eval_seed = child_seeds(seed, 2)
    eval_seeds = child_seeds(eval_seed, cfg.episodes)
    cell_dir = _cell_dir(out, name)
    if cfg.mode == "kinematics":
        env = build_env(cfg)
        cost = build_cost(cfg, env)
        trajs, wall = evaluate_kinematics(env, cost, eval_seeds)
        _write_rollouts(cell_dir, trajs, env.model)
        return summarize(name, trajs, wall), None
    trained = train_ilqg(cfg, train_seed)
    trajs, wall = evaluate_ilqg(trained.system, trained.policy, trained.cost, eval_seeds)
    curve = [(r.iteration, r.mean_cost, r.successes, r.alpha, r.mean_force) for r in trained.log.records]
    if cell_dir is not None:
        _write_rollouts(cell_dir, trajs, trained.env.model, logs.policy_std(trained.policy, cfg.env["horizon"]))
        logs.save_policy(os.path.join(cell_dir, "policy.json"), trained.policy)
        logs.write_curve_csv(os.path.join(cell_dir, "training.csv"), curve,
                             ["iteration", "mean_cost", "successes", "alpha", "mean_abs_action"])
    return summarize(name, trajs, wall, training_successes=[c[2] for c in curve]), trained


def run_ablation_matrix(cfg, out=None, cells=ABLATION_CELLS):
    """Every baseline of the comparison table, ``cfg.episodes`` evaluations each.

    Each cell draws its own seed from the master seed; a failing cell is
    recorded with its error and the matrix carries on.
    """
    results, artifacts = [], {}
    for (name, mode, aug), seed in zip(cells, child_seeds(cfg.seed, len(cells))):
        try:
            cell_cfg = cfg.with_(mode=mode, augmented=aug, policy="ilqg")
            res, art = run_cell(cell_cfg, name, seed, out)
            artifacts[name] = art
        except Exception as exc:  # recorded, the matrix continues
            log.exception("cell %s failed", name)
            res = CellResult(name, 0, cfg.episodes, float("nan"), 0.0, error=f"{type(exc).__name__}: {exc}")
        results.append(res)
        log.info("cell %s: %d/%d", name, res.successes, res.episodes)
    summary = ResultSummary(results, provenance(cfg, protocol="ablation"), artifacts)
    if out is not None:
        os.makedirs(out, exist_ok=True)
        summary.write(os.path.join(out, "summary.json"))
    return summary


def distill_policies(cfg, teacher, seed):
    """Distill late- and first-layer-fusion networks from one teacher dataset.

    Returns ``{kind: (MlpPolicy or None, info)}``; an aborted run maps to None.
    """
    d = cfg.distill
    data_seed, *net_seeds = child_seeds(seed, 1 + len(FUSION))
    dataset = md.collect_dataset(teacher.env, teacher.policy, rollouts=d["rollouts"], seed=data_seed,
                                 alpha_f=d["alpha_f"])
    out = {}
    for (kind, fusion), net_seed in zip(FUSION.items(), net_seeds):
        net = md.MlpPolicy(md.observation_dim(teacher.env), 6, hidden=d["hidden"], fusion=fusion,
                           seed=net_seed)
        try:
            res = md.distill(dataset, net, epochs=d["epochs"], lr=d["lr"], momentum=d["momentum"],
                             batch=d["batch"], seed=net_seed)
            out[kind] = (net, {"aborted": False, "initial_loss": res.initial_loss, "final_loss": res.final_loss,
                               "curve": res.curve})
        except md.DivergenceAbort as exc:
            log.warning("%s: %s", kind, exc)
            out[kind] = (None, {"aborted": True, "initial_loss": exc.initial, "final_loss": exc.loss,
                                "abort_epoch": exc.epoch})
    return out


def shifted_env(cfg, env, mult):
    g = env.geometry
    return cs.shift_goal(env, cfg.generalize["direction"] * mult * g.gap * g.lateral)


def run_generalization(cfg, out=None, teacher=None, shifts=None):
    """Evaluate the iLQG teacher and both distilled networks at shifted goals.

    Policies are trained once on the nominal goal and then frozen.  An
    aborted distillation scores 0 at every shift.
    """
    cfg = cfg.with_(mode="operational", augmented=False)
    shifts = tuple(cfg.generalize["shifts"] if shifts is None else shifts)
    episodes = cfg.generalize["episodes"]
    train_seed, distill_seed, eval_seed = child_seeds(cfg.seed, 3)
    if teacher is None:
        teacher = train_ilqg(cfg, train_seed)
    nets = distill_policies(cfg, teacher, distill_seed)
    cells, artifacts = [], {"ilqg": teacher}
    for kind, (net, info) in nets.items():
        artifacts[kind] = net
        if out is not None and net is not None:
            os.makedirs(out, exist_ok=True)
            logs.save_policy(os.path.join(out, f"{kind}.json"), net)
            logs.write_curve_csv(os.path.join(out, f"{kind}_curve.csv"),
                                 list(enumerate(info["curve"])), ["epoch", "loss"])
    for mult, shift_seed in zip(shifts, child_seeds(eval_seed, len(shifts))):
        # every policy sees the same perturbed starts at a given shift
        seeds = child_seeds(shift_seed, episodes)
        try:
            env = shifted_env(cfg, teacher.env, mult)
        except Exception as exc:
            for kind in ("ilqg", *FUSION):
                cells.append(CellResult(f"{kind}@{mult:g}x", 0, episodes, float("nan"), 0.0,
                                        error=f"{type(exc).__name__}: {exc}"))
            continue
        system = InsertionSystem(env)
        trajs, wall = evaluate_ilqg(system, teacher.policy, teacher.cost, seeds)
        cells.append(summarize(f"ilqg@{mult:g}x", trajs, wall, shift=mult))
        _write_rollouts(_cell_dir(out, f"ilqg@{mult:g}x"), trajs, env.model,
                        logs.policy_std(teacher.policy, env.horizon))
        for kind, (net, info) in nets.items():
            name = f"{kind}@{mult:g}x"
            if net is None:
                cells.append(CellResult(name, 0, episodes, float("nan"), 0.0,
                                        extra={"shift": mult, "aborted": True}))
                continue
            try:
                trajs, wall = evaluate_mlp(env, net, teacher.cost, seeds, cfg.distill["alpha_f"])
            except Exception as exc:
                cells.append(CellResult(name, 0, episodes, float("nan"), 0.0, error=f"{type(exc).__name__}: {exc}"))
                continue
            cells.append(summarize(name, trajs, wall, shift=mult))
            _write_rollouts(_cell_dir(out, name), trajs, env.model, logs.policy_std(net, env.horizon))
    distill_info = {k: {kk: vv for kk, vv in info.items() if kk != "curve"} for k, (_, info) in nets.items()}
    summary = ResultSummary(cells, provenance(cfg, protocol="generalization", distill=distill_info), artifacts)
    if out is not None:
        os.makedirs(out, exist_ok=True)
        summary.write(os.path.join(out, "summary.json"))
    return summary
