"""Systems the optimizer can roll out, and the forward pass."""
from __future__ import annotations

import numpy as np

from .. import contact_sim as cs
from .. import manip_model as mm
from .cost import trajectory_cost
from .types import Trajectory


class RolloutDiverged(RuntimeError):
    pass


class LinearSystem:
    """x' = A x + B u (+ noise); the analytic fixture for LQR checks."""

    def __init__(self, A, B, x0, process_std=0.0, start_std=0.0, horizon=10):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.process_std = process_std
        self.start_std = start_std
        self.horizon = horizon
        self.action_rows = None

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def action_dim(self):
        return self.B.shape[1]

    def reset(self, rng, perturb=True):
        x = self.x0.copy()
        if perturb and self.start_std:
            x = x + self.start_std * rng.standard_normal(len(x))
        return x, x.copy()

    def advance(self, state, u, rng):
        x = self.A @ state + self.B @ u
        if self.process_std:
            x = x + self.process_std * rng.standard_normal(len(x))
        return x, x.copy(), {}

    def success(self, state):
        return False

    def embed(self, u):
        return u

    def hold_action(self):
        return np.zeros(self.action_dim)


class InsertionSystem:
    """Adapter from a ``TaskEnv`` to the optimizer's state/action vectors.

    State: ``[q, qdot, tool x, tool y, tool angle, vx, vy, omega]``, with the
    measured tool-frame F/T 6-vector appended when ``augmented``.  In
    operational mode the optimized action is (Fx, Fy, Mz) and is embedded into
    a 6-vector wrench; in torque mode it is the joint torque vector.
    """

    def __init__(self, env, augmented=False):
        if env.mode == "position":
            raise ValueError("position mode is not optimized")
        self.env = env
        self.augmented = augmented
        self.horizon = env.horizon
        n = env.model.n_joints
        self.n = n
        if env.mode == "operational":
            self.action_rows = mm.PLANAR_ROWS
            self.full_dim = 6
        else:
            self.action_rows = None
            self.full_dim = n

    @property
    def pose_index(self):
        return (2 * self.n, 2 * self.n + 1, 2 * self.n + 2)

    @property
    def state_dim(self):
        return 2 * self.n + 6 + (6 if self.augmented else 0)

    @property
    def action_dim(self):
        return 3 if self.action_rows is not None else self.n

    def observe(self, s, reading):
        model = self.env.model
        pose = model.forward_kinematics(s.q)
        V = model.tool_twist(s.q, s.qdot)
        parts = [s.q, s.qdot, pose.position, [pose.orientation], V[mm.PLANAR_ROWS]]
        if self.augmented:
            parts.append(reading.f_t)
        return np.concatenate(parts)

    def reset(self, rng, perturb=True):
        env = self.env
        s = cs.reset(env, rng) if perturb else mm.JointState.at_rest(env.q_start)
        reading = cs.sense(env, s, rng)
        return (s, reading, 0), self.observe(s, reading)

    def advance(self, state, u, rng):
        s, _, t = state
        s, reading, info = cs.step(self.env, s, u, rng, t=t)
        info["reading"] = reading
        return (s, reading, t + 1), self.observe(s, reading), info

    def success(self, state):
        return cs.is_success(self.env, state[0])

    def embed(self, u):
        if self.action_rows is None:
            return u
        full = np.zeros(self.full_dim)
        full[self.action_rows] = u
        return full

    def hold_action(self):
        """Nominal action of the base controller: zero wrench, or gravity torques."""
        if self.action_rows is not None:
            return np.zeros(3)
        _, _, g = self.env.model.dynamics_terms(self.env.q_start, np.zeros(self.n))
        return g


def forward_pass(system, policy, cost, alpha=1.0, noise=False, rng=None, perturb=False):
    """Execute ``u = u_ref + alpha*k + K (x - x_ref)`` (+ N(0, C) when ``noise``).

    ``X`` holds the ``T`` visited states; the last action is recorded for the
    cost but not executed, so ``final_state`` corresponds to ``X[-1]``.
    """
    if policy.horizon != system.horizon:
        raise ValueError(f"policy horizon {policy.horizon} != system horizon {system.horizon}")
    rng = rng if rng is not None else np.random.default_rng(0)
    T = system.horizon
    state, x = system.reset(rng, perturb)
    X = np.empty((T, system.state_dim))
    U_act = np.empty((T, system.action_dim))
    U = []
    extra = {"readings": [], "true": [], "q": [], "qdot": [], "twist": [], "work": []}
    for t in range(T):
        X[t] = x
        if isinstance(state, tuple):
            s, reading = state[:2]
            extra["readings"].append(reading.f_t)
            extra["true"].append(reading.true_wrench)
            extra["q"].append(s.q)
            extra["qdot"].append(s.qdot)
            extra["twist"].append(system.env.model.tool_twist(s.q, s.qdot))
        u = policy.sample(t, x, rng, alpha) if noise else policy.mean(t, x, alpha)
        U_act[t] = u
        u_full = system.embed(u)
        U.append(u_full)
        if t == T - 1:
            # the final action is scored but never executed: success is judged
            # on the same state as the final cost
            break
        try:
            state, x, info = system.advance(state, u_full, rng)
        except (ValueError, mm.DynamicsError, FloatingPointError) as exc:
            raise RolloutDiverged(f"rollout diverged at step {t}: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise RolloutDiverged(f"non-finite state at step {t}")
        if "contact_work" in info:
            extra["work"].append(info["contact_work"])
    costs = trajectory_cost(cost, X, U_act)

    def arr(key):
        return np.array(extra[key]) if extra[key] else None

    return Trajectory(X, np.array(U), costs, readings=arr("readings"), true_wrench=arr("true"),
                      q=arr("q"), qdot=arr("qdot"), twist=arr("twist"),
                      success=system.success(state), final_state=state[0] if isinstance(state, tuple) else state,
                      contact_work=arr("work"))


def active_actions(system, traj):
    if system.action_rows is None:
        return traj.U
    return traj.U[:, system.action_rows]
