"""Planar slot-insertion world with penalty contact and a noisy wrist F/T sensor.

The hole is a square-edged slot cut into a floor.  Geometry is expressed in
a hole frame whose origin is the rim center, ``s`` runs laterally and ``h``
runs up (against the insertion axis).  Solid material occupies
``{h <= 0, |s| >= W/2}`` and ``{h <= -depth}`` where ``W`` is the hole width.

The peg is a rectangle rigidly attached to the tool frame: its tip is the
tool point and its axis the tool x-axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import manip_model as mm
from . import opspace_ctrl as oc

CONTROL_DT = 0.05  # 20 Hz
PAPER_FT_SIGMA = (2.0, 2.0, 0.5, 0.5, 0.5, 0.1)

MODES = ("operational", "torque", "position")


@dataclass(frozen=True)
class HoleGeometry:
    center: np.ndarray = field(default_factory=lambda: np.array([0.55, -0.25]))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, -1.0]))
    depth: float = 0.015
    peg_width: float = 0.04
    peg_length: float = 0.06
    clearance: float = 0.005
    k_wall: float = 1e6
    damping: float = 100.0
    mu: float = 0.3
    slip_band: float = 1e-3

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(2)
        a = np.asarray(self.axis, dtype=float).reshape(2)
        if np.linalg.norm(a) == 0:
            raise ValueError("hole axis must be nonzero")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "axis", a / np.linalg.norm(a))
        if not 0 < self.clearance <= 0.05:
            raise ValueError("clearance must lie in (0, 0.05]")
        if min(self.k_wall, self.depth, self.peg_width, self.peg_length) <= 0:
            raise ValueError("stiffness, depth and peg dimensions must be positive")
        if self.mu < 0 or self.damping < 0 or self.slip_band <= 0:
            raise ValueError("friction, damping and slip band must be nonnegative")

    @property
    def hole_width(self):
        return self.peg_width * (1.0 + self.clearance)

    @property
    def gap(self):
        """Total lateral play of a centered peg (m)."""
        return self.peg_width * self.clearance

    @property
    def lateral(self):
        # unit vector s of the hole frame; up is -axis
        return np.array([-self.axis[1], self.axis[0]])

    @property
    def bottom(self):
        return self.center + self.depth * self.axis

    @property
    def insert_angle(self):
        return float(np.arctan2(self.axis[1], self.axis[0]))

    def to_hole(self, p):
        d = np.asarray(p) - self.center
        return np.array([d @ self.lateral, -(d @ self.axis)])


@dataclass(frozen=True)
class FtNoiseModel:
    sigma: np.ndarray = field(default_factory=lambda: np.array(PAPER_FT_SIGMA))

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float).reshape(6)
        if np.any(s < 0):
            raise ValueError("noise standard deviations must be nonnegative")
        object.__setattr__(self, "sigma", s)


@dataclass(frozen=True)
class SensorReading:
    f_t: np.ndarray
    true_wrench: np.ndarray


def _contact_points(geom, pose):
    """Yield ``(point, normal_on_peg, depth)`` for every penetrating feature."""
    half_w, half_W = 0.5 * geom.peg_width, 0.5 * geom.hole_width
    e = np.array([np.cos(pose.orientation), np.sin(pose.orientation)])
    side = np.array([-e[1], e[0]])
    tip = pose.position
    lat, up = geom.lateral, -geom.axis
    out = []
    # fast exit: a peg entirely above the rim plane touches nothing
    lowest = (tip - geom.center) @ up - geom.peg_length * max(e @ up, 0.0) - half_w * abs(side @ up)
    if lowest > 0.0:
        return out

    # peg corners inside solid blocks
    for a in (0.0, geom.peg_length):
        for b in (-half_w, half_w):
            p = tip - a * e + b * side
            s, h = geom.to_hole(p)
            best = None
            if h < -geom.depth:
                best = (-geom.depth - h, up)
            if h < 0 and abs(s) > half_W:
                sgn = np.sign(s)
                cand = min((-h, up), (abs(s) - half_W, -sgn * lat), key=lambda t: t[0])
                if best is None or cand[0] < best[0]:
                    best = cand
            if best is not None:
                out.append((p, best[1], best[0]))

    # convex rim corners inside the peg rectangle (the bottom corners are concave)
    for s in (-half_W, half_W):
        p = geom.center + s * lat
        d = p - tip
        a, b = -(d @ e), d @ side
        if 0 < a < geom.peg_length and abs(b) < half_w:
            faces = [(a, e), (half_w - abs(b), np.sign(b) * side), (geom.peg_length - a, -e)]
            depth, n_out = min(faces, key=lambda t: t[0])
            out.append((p, -n_out, depth))
    return out


def contact_wrench(geom, pose, twist, mobility=None):
    """Resultant contact wrench on the peg, world axes, about the tool point.

    Per penetrating feature: normal force ``k*depth - damping*v_n`` clipped at
    zero, plus regularized Coulomb friction.  Returns a 6-vector with the
    planar rows (Fx, Fy, Mz) populated.

    ``mobility=(J, M, h)`` caps each friction force at the value that
    would stop the local slip within one integration step of length ``h``;
    without it the stick band acts as a stiff viscous law that explicit
    integration cannot resolve at millisecond steps.
    """
    return _contact(geom, pose, twist, mobility)[0]


def contact_terms(geom, pose, twist, J, M, h):
    """``(wrench, S, D)`` for the simulator's implicit contact update.

    ``S`` and ``D`` are the joint-space stiffness and damping of the active
    normal springs, ``sum k n_q n_q^T`` and ``sum c n_q n_q^T`` with ``n_q``
    the joint-space image of each contact normal.
    """
    return _contact(geom, pose, twist, (J, M, h), implicit=True)


def _contact(geom, pose, twist, mobility=None, implicit=False):
    W = np.zeros(6)
    tip = pose.position
    v_tip, omega = np.asarray(twist)[0:2], float(twist[5])
    n_dof = mobility[0].shape[1] if mobility is not None else 0
    S = np.zeros((n_dof, n_dof))
    D = np.zeros((n_dof, n_dof))
    for p, n, depth in _contact_points(geom, pose):
        r = p - tip
        v_p = v_tip + omega * np.array([-r[1], r[0]])
        v_n = v_p @ n
        fn = max(geom.k_wall * depth - geom.damping * v_n, 0.0)
        if fn == 0.0:
            continue
        t = np.array([-n[1], n[0]])
        v_t = v_p @ t
        ft = -geom.mu * fn * np.clip(v_t / geom.slip_band, -1.0, 1.0)
        if mobility is not None:
            J, M, h = mobility
            Jp = J[0:2] + np.outer([-r[1], r[0]], J[5])
            if ft != 0.0:
                Jt = t @ Jp
                m_eff = 1.0 / max(Jt @ np.linalg.solve(M, Jt), 1e-12)
                ft = float(np.clip(ft, -m_eff * abs(v_t) / h, m_eff * abs(v_t) / h))
            if implicit:
                Jn = n @ Jp
                S += geom.k_wall * np.outer(Jn, Jn)
                D += geom.damping * np.outer(Jn, Jn)
        f = fn * n + ft * t
        W[0:2] += f
        W[5] += r[0] * f[1] - r[1] * f[0]
    if implicit:
        return W, S, D
    return W, None, None


def elastic_energy(geom, pose):
    return sum(0.5 * geom.k_wall * d**2 for _, _, d in _contact_points(geom, pose))


def wrench_to_tool_frame(wrench, orientation):
    c, s = np.cos(orientation), np.sin(orientation)
    out = np.zeros(6)
    out[0] = c * wrench[0] + s * wrench[1]
    out[1] = -s * wrench[0] + c * wrench[1]
    out[5] = wrench[5]
    return out


@dataclass(frozen=True)
class TaskEnv:
    """One insertion task instance.

    ``believed_center`` is where the operator thinks the hole rim is; the cost
    target and the kinematic baseline use it.  It differs from the true
    ``geometry.center`` by the registration error and by any later goal shift.
    """

    model: mm.PlanarArm
    geometry: HoleGeometry
    noise: FtNoiseModel
    q_start: np.ndarray
    start_sigma: float = 0.01
    pos_tol: float = None
    ori_tol: float = 0.05
    horizon: int = 60
    seed: int = 0
    believed_center: np.ndarray = None
    gains: oc.HybridGains = None
    q_goal: np.ndarray = None
    mode: str = "operational"
    substeps: int = 50
    wrench_limit: np.ndarray = field(default_factory=lambda: np.array([30.0, 30.0, 30.0, 3.0, 3.0, 3.0]))
    reach_fraction: float = 0.5
    qd_limit: float = 6.0
    plan: np.ndarray = None

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.mode not in MODES:
            raise ValueError(f"unknown action mode {self.mode!r}")
        if self.pos_tol is None:
            object.__setattr__(self, "pos_tol", self.geometry.gap)
        if self.pos_tol <= 0 or self.ori_tol <= 0:
            raise ValueError("success tolerances must be positive")
        if self.believed_center is None:
            object.__setattr__(self, "believed_center", self.geometry.center.copy())
        object.__setattr__(self, "believed_center", np.asarray(self.believed_center, dtype=float))
        object.__setattr__(self, "q_start", np.asarray(self.q_start, dtype=float))
        if self.gains is None:
            object.__setattr__(self, "gains", oc.HybridGains.stiff(self.model.n_joints))
        if self.q_goal is None:
            object.__setattr__(self, "q_goal", mm.inverse_kinematics(self.model, self.target_pose, self.q_start))
        if self.plan is None or len(self.plan) != self.horizon:
            object.__setattr__(self, "plan", servo_plan(self.model, self.q_start, self.target_pose,
                                                        self.horizon, self.reach_fraction))

    @property
    def target_pose(self):
        """Believed hole-bottom tool pose (peg tip at the bottom center)."""
        g = self.geometry
        return mm.EePose(self.believed_center + g.depth * g.axis, g.insert_angle)

    @property
    def true_target_pose(self):
        g = self.geometry
        return mm.EePose(g.bottom, g.insert_angle)

    @property
    def dt(self):
        return CONTROL_DT

    def rng(self, episode=0):
        return np.random.default_rng([self.seed, episode])

    def with_mode(self, mode):
        return replace(self, mode=mode)


def servo_plan(model, q_start, target, horizon, reach_fraction=0.5):
    """Joint setpoints along the straight tool line from the start pose to ``target``.

    The line is covered in the first ``reach_fraction`` of the horizon and the
    target is held afterwards.  Row ``t`` is the setpoint during tick ``t``.
    """
    start = model.forward_kinematics(q_start)
    reach = max(1, int(round(reach_fraction * horizon)))
    plan = np.empty((horizon, model.n_joints))
    q = np.asarray(q_start, dtype=float)
    for t in range(horizon):
        a = min(1.0, (t + 1) / reach)
        pose = mm.EePose(start.position + a * (target.position - start.position),
                         start.orientation + a * (target.orientation - start.orientation))
        q = mm.inverse_kinematics(model, pose, q)
        plan[t] = q
    return plan


def setpoint(env, t):
    if t is None:
        return env.q_goal
    return env.plan[min(int(t), len(env.plan) - 1)]


def reset(env, rng):
    q = env.q_start + env.start_sigma * rng.standard_normal(env.model.n_joints)
    return mm.JointState.at_rest(q)


def sense(env, s, rng):
    pose = mm.forward_kinematics(env.model, s.q)
    twist = env.model.tool_twist(s.q, s.qdot)
    true = wrench_to_tool_frame(contact_wrench(env.geometry, pose, twist), pose.orientation)
    return SensorReading(true + env.noise.sigma * rng.standard_normal(6), true)


def step(env, s, u, rng, t=None):
    """Advance one 20 Hz control tick.

    ``u`` is a 6-vector wrench (operational), an n-vector of joint torques
    (torque) or an n-vector of joint setpoints (position).  The torque law is
    re-evaluated at every simulation substep; the action is held.  In
    operational mode the weak position loop tracks ``env.plan[t]`` (or the
    goal configuration when ``t`` is None).
    Returns ``(next_state, reading, info)``.
    """
    model, geom = env.model, env.geometry
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite action")
    qd_star = np.zeros(model.n_joints)
    work = [0.0]

    def contact(cur, terms, h):
        M, J = terms[0], terms[3]
        pose = model.forward_kinematics(cur.q)
        F_c, S, D = contact_terms(geom, pose, J @ cur.qdot, J, M, h)
        work[0] += h * float(F_c @ (J @ cur.qdot))
        return F_c, S, D

    if env.mode == "operational":
        u = np.clip(u, -env.wrench_limit, env.wrench_limit)
        q_star = setpoint(env, t)

        def torque(cur, terms, h):
            return oc.hybrid_torque(model, cur, u, (q_star, qd_star), env.gains, terms=terms)
    elif env.mode == "torque":
        torque = u
    else:
        zero = np.zeros(6)

        def torque(cur, terms, h):
            return oc.hybrid_torque(model, cur, zero, (u, qd_star), env.gains, terms=terms)

    s = mm.forward_simulate(model, s, torque, contact, dt=env.dt, substep=env.dt / env.substeps,
                            qd_limit=env.qd_limit)
    reading = sense(env, s, rng)
    info = {"contact_work": work[0], "in_contact": bool(np.any(reading.true_wrench))}
    return s, reading, info


def insertion_depth(env, s):
    pose = mm.forward_kinematics(env.model, s.q)
    return -env.geometry.to_hole(pose.position)[1]


def is_success(env, s):
    g = env.geometry
    pose = mm.forward_kinematics(env.model, s.q)
    lateral, height = g.to_hole(pose.position)
    ang = np.arctan2(np.sin(pose.orientation - g.insert_angle), np.cos(pose.orientation - g.insert_angle))
    return bool(abs(lateral) <= env.pos_tol and -height >= 0.95 * g.depth and abs(ang) <= env.ori_tol)


def shift_goal(env, offset):
    """Translate the true hole; the believed target and policies stay put."""
    offset = np.asarray(offset, dtype=float).reshape(2)
    geom = replace(env.geometry, center=env.geometry.center + offset)
    bottom = mm.EePose(geom.bottom, geom.insert_angle)
    mm.inverse_kinematics(env.model, bottom, env.q_goal)  # raises Unreachable
    return replace(env, geometry=geom)


def make_env(model=None, geometry=None, noise=None, height=0.03, registration=3.0, **kw):
    """Build the default task: start ``height`` above the believed rim.

    ``registration`` is the lateral registration error of the believed hole
    position, in multiples of the clearance gap.
    """
    model = model or mm.default_planar3()
    geometry = geometry or HoleGeometry()
    noise = noise or FtNoiseModel()
    believed = geometry.center + registration * geometry.gap * geometry.lateral
    above = mm.EePose(believed - height * geometry.axis, geometry.insert_angle)
    seed_q = np.array([-0.2, -1.2, -0.17])
    q_start = mm.inverse_kinematics(model, above, _ik_seed(model, seed_q))
    return TaskEnv(model=model, geometry=geometry, noise=noise, q_start=q_start,
                   believed_center=believed, **kw)


def _ik_seed(model, q):
    q = np.asarray(q, dtype=float)
    if q.size == model.n_joints:
        return q
    out = np.full(model.n_joints, -0.3)
    out[0] = 0.0
    return out
