"""The outer iLQG loop: sample, fit, solve, line-search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .backward import NotPositiveDefinite, backward_pass_adaptive
from .fit import fit_dynamics
from .rollout import RolloutDiverged, active_actions, forward_pass
from .types import LinearGaussianPolicy

log = logging.getLogger(__name__)


class OptimizationAborted(RuntimeError):
    pass


@dataclass
class IterationRecord:
    iteration: int
    mean_cost: float
    successes: int
    rollouts: int
    alpha: float
    mean_force: float
    nominal_cost: float
    mu: float


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    mode: str = ""
    augmented: bool = False

    def append(self, rec):
        self.records.append(rec)

    def rows(self):
        for r in self.records:
            yield (r.iteration, r.mean_cost, r.successes, r.alpha, r.mean_force)


def initial_policy(system, config):
    """Zero-gain Gaussian around the base controller's hold action."""
    T, dx, du = system.horizon, system.state_dim, system.action_dim
    if system.action_rows is not None:
        var = np.array([config.force_std**2, config.force_std**2, config.moment_std**2])
    else:
        var = np.full(du, config.torque_std**2)
    u_hold = np.asarray(system.hold_action(), dtype=float)
    return LinearGaussianPolicy(
        K=np.zeros((T, du, dx)), k=np.zeros((T, du)), C=np.tile(np.diag(var), (T, 1, 1)),
        x_ref=np.zeros((T, dx)), u_ref=np.tile(u_hold, (T, 1)),
        action_rows=system.action_rows, full_dim=getattr(system, "full_dim", du),
        mode=getattr(getattr(system, "env", None), "mode", "linear"),
        augmented=getattr(system, "augmented", False))


def rebase(policy, alpha, nominal, system):
    """Re-express the accepted controller around its own noise-free rollout."""
    U = active_actions(system, nominal)
    return replace(policy, k=np.zeros_like(policy.k), x_ref=nominal.X.copy(), u_ref=U.copy(),
                   meta=dict(policy.meta, alpha=alpha))


def expansions_along(cost, X, U):
    T = len(X)
    return [cost.expand(X[t], U[t], final=(t == T - 1)) for t in range(T)]


def optimize(system, config, cost, seed=0, policy=None, callback=None):
    """Run ``config.iterations`` rounds; returns ``(policy, TrainingLog, nominal)``.

    Each round collects ``config.rollouts`` noisy samples, fits the dynamics,
    solves the regularized backward pass around the current nominal, and
    accepts the first line-search step whose noise-free rollout cost beats
    the nominal.  The accepted policy is rebased on its new nominal.
    """
    root = np.random.SeedSequence(seed)
    fresh = policy is None
    policy = initial_policy(system, config) if fresh else policy
    nominal = forward_pass(system, policy, cost, alpha=0.0, noise=False,
                           rng=np.random.default_rng(root.spawn(1)[0]))
    if fresh:
        # the base controller has no state reference yet
        policy = rebase(policy, 0.0, nominal, system)
    tlog = TrainingLog(mode=policy.mode, augmented=policy.augmented)
    for it, it_seq in enumerate(root.spawn(config.iterations + 1)[1:], start=1):
        sample_seqs, ls_seq = it_seq.spawn(config.rollouts), it_seq.spawn(1)[0]
        samples = [forward_pass(system, policy, cost, alpha=0.0, noise=True,
                                rng=np.random.default_rng(sq), perturb=True) for sq in sample_seqs]
        X = np.stack([s.X for s in samples])
        U = np.stack([active_actions(system, s) for s in samples])
        dyn = fit_dynamics(X, U, config.fit_reg, config.fit_window)
        U_nom = active_actions(system, nominal)
        exps = expansions_along(cost, nominal.X, U_nom)
        try:
            result = backward_pass_adaptive(
                dyn, exps, nominal.X, U_nom, config.mu_init, config.mu_factor, config.mu_max,
                config.entropy_weight, action_rows=policy.action_rows, full_dim=policy.full_dim,
                mode=policy.mode, augmented=policy.augmented)
        except NotPositiveDefinite as exc:
            raise OptimizationAborted(f"iteration {it}: regularization exceeded mu_max ({exc})") from exc
        accepted = 0.0
        ls_rng = np.random.default_rng(ls_seq)
        ls_seed = int(ls_rng.integers(2**63))
        for alpha in config.line_search:
            try:
                cand = forward_pass(system, result.policy, cost, alpha=alpha, noise=False,
                                    rng=np.random.default_rng(ls_seed))
            except RolloutDiverged as exc:
                log.debug("alpha %g rejected: %s", alpha, exc)
                continue
            if cand.total_cost < nominal.total_cost:
                accepted = alpha
                nominal = cand
                policy = rebase(result.policy, alpha, cand, system)
                break
        else:
            # keep the old mean but adopt the refit covariance so exploration adapts
            policy = replace(policy, C=result.policy.C)
        wrench = [np.abs(s.U).mean() for s in samples]
        rec = IterationRecord(it, float(np.mean([s.total_cost for s in samples])),
                              int(sum(s.success for s in samples)), len(samples), accepted,
                              float(np.mean(wrench)), nominal.total_cost, result.mu)
        tlog.append(rec)
        log.info("iter %d: mean cost %.4g, %d/%d successes, alpha %.3g, nominal %.4g",
                 it, rec.mean_cost, rec.successes, rec.rollouts, accepted, nominal.total_cost)
        if callback is not None:
            callback(rec, samples, policy, result)
    return policy, tlog, nominal
