"""Rigid-body kinematics and dynamics of simulated serial arms.

Two embeddings are supported:

* ``PlanarArm``: n revolute joints in a vertical plane (x horizontal, y up).
  Closed-form kinematics, mass matrix, Coriolis and gravity terms.
* ``SpatialArm``: n revolute joints described by standard DH parameters.
  Mass matrix from link Jacobians, velocity terms from Christoffel symbols.

Twists and wrenches are always 6-vectors ``[v; w]`` / ``[F; M]``.  The planar
embedding populates rows (0, 1, 5) and leaves the rest at zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PLANAR_ROWS = np.array([0, 1, 5])
DEFAULT_TORQUE_LIMIT = 50.0
SIM_DT = 0.002


class DimensionError(ValueError):
    pass


class Unreachable(RuntimeError):
    """Inverse kinematics could not reach the requested pose."""

    def __init__(self, message, best_q=None, error=None):
        super().__init__(message)
        self.best_q = best_q
        self.error = error


class DynamicsError(RuntimeError):
    pass


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        qd = np.asarray(self.qdot, dtype=float).reshape(-1)
        if q.shape != qd.shape:
            raise DimensionError(f"q has {q.size} entries, qdot has {qd.size}")
        if q.size < 1:
            raise DimensionError("empty joint state")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("joint state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)

    @classmethod
    def at_rest(cls, q):
        q = np.asarray(q, dtype=float)
        return cls(q, np.zeros_like(q))


@dataclass(frozen=True)
class EePose:
    """Tool pose.  ``orientation`` is an angle (planar) or a 3x3 rotation."""

    position: np.ndarray
    orientation: object

    @property
    def planar(self):
        return np.ndim(self.orientation) == 0


def _perp(v):
    # rotate 2-vectors by +90 degrees, last axis
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _check_q(model, q):
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.size != model.n_joints:
        raise DimensionError(f"expected {model.n_joints} joint angles, got {q.size}")
    return q


@dataclass(frozen=True)
class ManipulatorModel:
    """Shared fields for both embeddings; see ``PlanarArm`` / ``SpatialArm``."""

    lengths: np.ndarray
    masses: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    gravity: np.ndarray
    torque_limits: np.ndarray

    @property
    def n_joints(self):
        return len(self.masses)

    def _validate(self):
        if self.n_joints < 1:
            raise ValueError("need at least one joint")
        if np.any(np.asarray(self.lengths) <= 0) or np.any(np.asarray(self.masses) <= 0):
            raise ValueError("link lengths and masses must be strictly positive")
        if np.any(np.asarray(self.inertia) < 0):
            raise ValueError("link inertia must be nonnegative")


@dataclass(frozen=True)
class PlanarArm(ManipulatorModel):
    """n-link arm in the vertical x-y plane.

    ``com`` holds the distance of each link's center of mass from its proximal
    joint along the link; ``inertia`` the rotational inertia about the COM.
    """

    base: np.ndarray = field(default_factory=lambda: np.zeros(2))
    embedding = "planar"
    task_dim = 3

    def __post_init__(self):
        n = len(self.masses)
        for name in ("lengths", "masses", "com", "inertia"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != n:
                raise DimensionError(f"{name} must have {n} entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        g = np.asarray(self.gravity, dtype=float).reshape(-1)[:2]
        lim = np.broadcast_to(np.asarray(self.torque_limits, dtype=float), (n,)).copy()
        base = np.asarray(self.base, dtype=float).reshape(2)
        for name, arr in (("gravity", g), ("torque_limits", lim), ("base", base)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()
        n_idx = np.arange(n)
        object.__setattr__(self, "_below", (n_idx[None, :] <= n_idx[:, None]).astype(float))
        object.__setattr__(self, "_rot_inertia",
                           np.cumsum(self.inertia[::-1])[::-1][np.maximum.outer(n_idx, n_idx)])

    # -- kinematics -------------------------------------------------------
    def terms(self, q, qdot):
        """``(M, c_vec, g_vec, J)`` from a single pass over the chain.

        Same quantities as ``dynamics_terms`` and ``jacobian``; this is the
        per-substep fast path used by the simulator.
        """
        q = np.asarray(q, dtype=float)
        phi = np.cumsum(q)
        co, si = np.cos(phi), np.sin(phi)
        jx = np.empty(len(q) + 1)
        jy = np.empty(len(q) + 1)
        jx[0], jy[0] = self.base
        np.cumsum(self.lengths * co, out=jx[1:])
        np.cumsum(self.lengths * si, out=jy[1:])
        jx[1:] += self.base[0]
        jy[1:] += self.base[1]
        cx = jx[:-1] + self.com * co
        cy = jy[:-1] + self.com * si
        # column j of link i's COM Jacobian is perp(com_i - joint_j) for j <= i
        Jcx = -(cy[:, None] - jy[None, :-1]) * self._below
        Jcy = (cx[:, None] - jx[None, :-1]) * self._below
        m = self.masses
        M = Jcx.T @ (m[:, None] * Jcx) + Jcy.T @ (m[:, None] * Jcy) + self._rot_inertia
        w2 = np.cumsum(qdot) ** 2
        ax_seg = self.lengths * co * w2
        ay_seg = self.lengths * si * w2
        ax = -(np.cumsum(ax_seg) - ax_seg + self.com * co * w2)
        ay = -(np.cumsum(ay_seg) - ay_seg + self.com * si * w2)
        c_vec = Jcx.T @ (m * ax) + Jcy.T @ (m * ay)
        g_vec = -(Jcx.T @ (m * self.gravity[0]) + Jcy.T @ (m * self.gravity[1]))
        J = np.zeros((6, len(q)))
        J[0] = -(jy[-1] - jy[:-1])
        J[1] = jx[-1] - jx[:-1]
        J[5] = 1.0
        return M, c_vec, g_vec, J

    def _frames(self, q):
        phi = np.cumsum(q)
        e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        joints = self.base + np.vstack([np.zeros(2), np.cumsum(self.lengths[:, None] * e, axis=0)])
        coms = joints[:-1] + self.com[:, None] * e
        return phi, e, joints, coms

    def forward_kinematics(self, q):
        phi = np.cumsum(q)
        tip = self.base + np.array([self.lengths @ np.cos(phi), self.lengths @ np.sin(phi)])
        return EePose(tip, float(phi[-1]))

    def point_jacobians(self, joints, points, upto):
        """2 x n Jacobians of ``points[i]`` attached to link ``upto[i]``."""
        n = self.n_joints
        out = np.zeros((len(points), 2, n))
        for i, (p, k) in enumerate(zip(points, upto)):
            r = p - joints[: k + 1]
            out[i, :, : k + 1] = _perp(r).T
        return out

    def jacobian(self, q):
        _, _, joints, _ = self._frames(q)
        J = np.zeros((6, self.n_joints))
        J[0:2] = _perp(joints[-1] - joints[:-1]).T
        J[5] = 1.0
        return J

    def dynamics_terms(self, q, qdot):
        n = self.n_joints
        phi, e, joints, coms = self._frames(q)
        Jc = self.point_jacobians(joints, coms, range(n))
        M = np.einsum("i,iaj,iak->jk", self.masses, Jc, Jc)
        cum_inertia = np.cumsum(self.inertia[::-1])[::-1]
        M += cum_inertia[np.maximum.outer(np.arange(n), np.arange(n))]
        # velocity-product acceleration of each COM: -sum_k a_ik * phidot_k^2 * e_k
        phid = np.cumsum(qdot)
        seg = self.lengths[:, None] * e * (phid**2)[:, None]
        acc = -(np.vstack([np.zeros(2), np.cumsum(seg, axis=0)])[:-1] + self.com[:, None] * e * (phid**2)[:, None])
        c_vec = np.einsum("i,iaj,ia->j", self.masses, Jc, acc)
        g_vec = -np.einsum("i,iaj,a->j", self.masses, Jc, self.gravity)
        return M, c_vec, g_vec

    def potential_energy(self, q):
        _, _, _, coms = self._frames(q)
        return float(-np.sum(self.masses * (coms @ self.gravity)))

    def tool_twist(self, q, qdot):
        return self.jacobian(q) @ qdot

    def pose_vector(self, pose):
        return np.array([pose.position[0], pose.position[1], pose.orientation])

    def pose_error(self, target, current):
        """Task-space error ``target - current`` in active coordinates."""
        d = np.empty(3)
        d[:2] = target.position - current.position
        d[2] = np.arctan2(np.sin(target.orientation - current.orientation),
                          np.cos(target.orientation - current.orientation))
        return d


def _dh(a, alpha, d, theta):
    ct, st, ca, sa = np.cos(theta), np.sin(theta), np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _rot_log(R):
    """Axis-angle vector of a rotation matrix."""
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-9:
        return 0.5 * w
    if np.pi - angle < 1e-6:
        # near pi: axis from the diagonal
        axis = np.sqrt(np.maximum((np.diag(R) + 1.0) / 2.0, 0.0))
        k = int(np.argmax(axis))
        axis[np.arange(3) != k] *= np.sign(R[k, np.arange(3) != k] + R[np.arange(3) != k, k])
        return angle * axis / np.linalg.norm(axis)
    return angle * w / (2.0 * np.sin(angle))


@dataclass(frozen=True)
class SpatialArm(ManipulatorModel):
    """Revolute chain with standard DH parameters (a, alpha, d, theta offset).

    ``lengths`` are the link ``a`` parameters where nonzero, otherwise ``d``;
    they are only used for validation and workspace bounds.  ``com`` is an
    (n, 3) array of COM offsets in each link frame, ``inertia`` an (n, 3)
    array of principal inertias about the COM in the link frame.
    """

    dh: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    embedding = "spatial"
    task_dim = 6

    def __post_init__(self):
        n = len(self.masses)
        dh = np.asarray(self.dh, dtype=float).reshape(n, 4)
        com = np.asarray(self.com, dtype=float).reshape(n, 3)
        inertia = np.asarray(self.inertia, dtype=float).reshape(n, 3)
        lengths = np.asarray(self.lengths, dtype=float).reshape(n)
        masses = np.asarray(self.masses, dtype=float).reshape(n)
        g = np.asarray(self.gravity, dtype=float).reshape(3)
        lim = np.broadcast_to(np.asarray(self.torque_limits, dtype=float), (n,)).copy()
        for name, arr in (("dh", dh), ("com", com), ("inertia", inertia), ("lengths", lengths),
                          ("masses", masses), ("gravity", g), ("torque_limits", lim)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()

    def _frames(self, q):
        T = np.eye(4)
        frames = [T]
        for (a, alpha, d, off), qi in zip(self.dh, q):
            T = T @ _dh(a, alpha, d, qi + off)
            frames.append(T)
        return frames

    def forward_kinematics(self, q):
        T = self._frames(q)[-1]
        return EePose(T[:3, 3].copy(), T[:3, :3].copy())

    def _jac_point(self, frames, p, k):
        n = self.n_joints
        Jv, Jw = np.zeros((3, n)), np.zeros((3, n))
        for j in range(k + 1):
            z, o = frames[j][:3, 2], frames[j][:3, 3]
            Jv[:, j] = np.cross(z, p - o)
            Jw[:, j] = z
        return Jv, Jw

    def jacobian(self, q):
        frames = self._frames(q)
        Jv, Jw = self._jac_point(frames, frames[-1][:3, 3], self.n_joints - 1)
        return np.vstack([Jv, Jw])

    def _mass_matrix(self, q):
        frames = self._frames(q)
        M = np.zeros((self.n_joints, self.n_joints))
        for i in range(self.n_joints):
            R = frames[i + 1][:3, :3]
            p = frames[i + 1][:3, 3] + R @ self.com[i]
            Jv, Jw = self._jac_point(frames, p, i)
            Iw = R @ np.diag(self.inertia[i]) @ R.T
            M += self.masses[i] * Jv.T @ Jv + Jw.T @ Iw @ Jw
        return M, frames

    def dynamics_terms(self, q, qdot):
        n = self.n_joints
        M, frames = self._mass_matrix(q)
        g_vec = np.zeros(n)
        for i in range(n):
            R = frames[i + 1][:3, :3]
            p = frames[i + 1][:3, 3] + R @ self.com[i]
            Jv, _ = self._jac_point(frames, p, i)
            g_vec -= self.masses[i] * Jv.T @ self.gravity
        if not np.any(qdot):
            return M, np.zeros(n), g_vec
        # Christoffel form with central differences of M
        h = 1e-6
        dM = np.empty((n, n, n))
        for k in range(n):
            dq = np.zeros(n)
            dq[k] = h
            dM[k] = (self._mass_matrix(q + dq)[0] - self._mass_matrix(q - dq)[0]) / (2 * h)
        # c_i = sum_jk (dM_ij/dq_k - 0.5 dM_jk/dq_i) qd_j qd_k
        c_vec = np.einsum("kij,j,k->i", dM, qdot, qdot) - 0.5 * np.einsum("ijk,j,k->i", dM, qdot, qdot)
        return M, c_vec, g_vec

    def potential_energy(self, q):
        frames = self._frames(q)
        V = 0.0
        for i in range(self.n_joints):
            R = frames[i + 1][:3, :3]
            p = frames[i + 1][:3, 3] + R @ self.com[i]
            V -= self.masses[i] * p @ self.gravity
        return float(V)

    def tool_twist(self, q, qdot):
        return self.jacobian(q) @ qdot

    def pose_vector(self, pose):
        return np.concatenate([pose.position, _rot_log(pose.orientation)])

    def pose_error(self, target, current):
        d = np.empty(6)
        d[:3] = target.position - current.position
        d[3:] = current.orientation @ _rot_log(current.orientation.T @ target.orientation)
        return d


# -- module-level operations ------------------------------------------------

def forward_kinematics(model, q):
    return model.forward_kinematics(_check_q(model, q))


def jacobian(model, q):
    """6 x n geometric Jacobian of the tool point in the world frame."""
    return model.jacobian(_check_q(model, q))


def dynamics_terms(model, s):
    """Return ``(M, c_vec, g_vec)`` with ``c_vec = c(q, qdot) qdot``."""
    q = _check_q(model, s.q)
    M, c_vec, g_vec = model.dynamics_terms(q, s.qdot)
    return M, c_vec, g_vec


def active_rows(model):
    return PLANAR_ROWS if model.embedding == "planar" else np.arange(6)


def kinetic_energy(model, s):
    M, _, _ = dynamics_terms(model, s)
    return 0.5 * float(s.qdot @ M @ s.qdot)


def total_energy(model, s):
    return kinetic_energy(model, s) + model.potential_energy(s.q)


def clamp_torque(model, tau):
    lim = model.torque_limits
    clamped = np.clip(tau, -lim, lim)
    if np.any(clamped != tau):
        log.debug("torque clamped: %s -> %s", tau, clamped)
    return clamped


def dynamics_with_jacobian(model, q, qdot):
    if hasattr(model, "terms"):
        return model.terms(q, qdot)
    M, c_vec, g_vec = model.dynamics_terms(q, qdot)
    return M, c_vec, g_vec, model.jacobian(q)


def joint_acceleration(model, q, qdot, tau, external=None, terms=None):
    M, c_vec, g_vec, J = terms if terms is not None else dynamics_with_jacobian(model, q, qdot)
    rhs = tau - c_vec - g_vec
    if external is not None and np.any(external):
        rhs = rhs + J.T @ external
    return _solve_mass(M, rhs, q)


def _solve_mass(M, rhs, q):
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise DynamicsError(f"mass matrix not positive definite at q={q}") from exc
    return np.linalg.solve(M, rhs)


def forward_simulate(model, s, tau, external=None, dt=SIM_DT, substep=SIM_DT, qd_limit=None):
    """Integrate ``M qdd + c + g = tau + J^T external`` for ``dt`` seconds.

    Semi-implicit Euler with fixed substeps of at most ``substep`` seconds.
    ``tau`` and ``external`` are either held constant over the interval or
    callables ``f(state, terms, h)`` re-evaluated every substep, where
    ``terms = (M, c_vec, g_vec, J)`` at the current state.  Torques are
    clamped to the model limits before integration.

    An ``external`` callable may return ``(wrench, S, D)`` instead of a
    wrench, where ``S`` and ``D`` are the joint-space stiffness and damping
    of the springs that produced it.  Those springs are then integrated
    linearly-implicitly, ``(M + h D + h^2 S) qdd = rhs - h S qdot``, which
    stays stable for stiff contact at millisecond steps.

    ``qd_limit`` (rad/s) saturates joint speeds after every substep, the way
    a robot's speed limiter would.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_sub = max(1, int(np.ceil(dt / substep - 1e-9)))
    h = dt / n_sub
    tau_fn = tau if callable(tau) else None
    ext_fn = external if callable(external) else None
    if tau_fn is None:
        tau = _check_torque(model, tau)
    if ext_fn is None and external is not None:
        external = np.asarray(external, dtype=float).reshape(6)
    q, qd = s.q.copy(), s.qdot.copy()
    for _ in range(n_sub):
        terms = dynamics_with_jacobian(model, q, qd)
        cur = JointState(q, qd) if (tau_fn or ext_fn) else None
        tq = _check_torque(model, tau_fn(cur, terms, h)) if tau_fn else tau
        ext = ext_fn(cur, terms, h) if ext_fn else external
        if isinstance(ext, tuple):
            ext, S, D = ext
            M, c_vec, g_vec, J = terms
            rhs = tq - c_vec - g_vec + J.T @ ext - h * (S @ qd)
            qdd = _solve_mass(M + h * D + h * h * S, rhs, q)
        else:
            qdd = joint_acceleration(model, q, qd, tq, ext, terms)
        qd = qd + h * qdd
        if qd_limit is not None:
            qd = np.clip(qd, -qd_limit, qd_limit)
        q = q + h * qd
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise DynamicsError("simulation diverged to a non-finite state")
    return JointState(q, qd)


def _check_torque(model, tau):
    tau = np.asarray(tau, dtype=float).reshape(-1)
    if tau.size != model.n_joints:
        raise DimensionError(f"expected {model.n_joints} torques, got {tau.size}")
    if not np.all(np.isfinite(tau)):
        raise ValueError("non-finite torque")
    return clamp_torque(model, tau)


def inverse_kinematics(model, target, seed, tol=1e-6, max_iter=200, damping=1e-3,
                       accept=1e-4, position_only=False):
    """Damped least-squares IK.

    Returns the best joint vector found.  Raises ``Unreachable`` if the task
    error is still above ``accept`` after ``max_iter`` iterations.
    """
    q = _check_q(model, seed).copy()
    rows = active_rows(model)
    if position_only:
        rows = rows[:2] if model.embedding == "planar" else rows[:3]
        sel = slice(0, len(rows))
    else:
        sel = slice(None)

    def err_of(qq):
        return model.pose_error(target, model.forward_kinematics(qq))[sel]

    err = err_of(q)
    best_q, best = q.copy(), np.linalg.norm(err)
    lam = damping
    for _ in range(max_iter):
        if best < tol:
            break
        J = model.jacobian(q)[rows]
        dq = J.T @ np.linalg.solve(J @ J.T + lam**2 * np.eye(len(rows)), err)
        q_new = q + dq
        err_new = err_of(q_new)
        e = np.linalg.norm(err_new)
        if e < best:
            q, err, best, best_q = q_new, err_new, e, q_new.copy()
            lam = max(lam * 0.5, 1e-9)
        else:
            lam *= 10.0
            if lam > 1e6:
                break
    if best > accept:
        raise Unreachable(f"IK residual {best:.3g} above {accept:g}", best_q, best)
    return best_q


# -- stock models -------------------------------------------------------------

def planar_arm(lengths, masses, com=None, inertia=None, gravity=9.81,
               torque_limit=DEFAULT_TORQUE_LIMIT, base=(0.0, 0.0)):
    lengths = np.asarray(lengths, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if com is None:
        com = 0.5 * lengths
    if inertia is None:
        inertia = masses * lengths**2 / 12.0
    return PlanarArm(lengths=lengths, masses=masses, com=np.asarray(com, dtype=float),
                     inertia=np.asarray(inertia, dtype=float),
                     gravity=np.array([0.0, -gravity]),
                     torque_limits=np.full(len(masses), float(torque_limit)),
                     base=np.asarray(base, dtype=float))


def default_planar3():
    """Desk-scale 3-link testbed; the last link carries the peg."""
    return planar_arm(lengths=[0.40, 0.35, 0.15], masses=[2.0, 1.5, 0.5])


def default_spatial6():
    """A 6R arm with PUMA-like DH parameters and uniform-rod links."""
    dh = np.array([
        [0.0, np.pi / 2, 0.35, 0.0],
        [0.40, 0.0, 0.0, 0.0],
        [0.05, np.pi / 2, 0.0, 0.0],
        [0.0, -np.pi / 2, 0.35, 0.0],
        [0.0, np.pi / 2, 0.0, 0.0],
        [0.0, 0.0, 0.10, 0.0],
    ])
    masses = np.array([3.0, 2.5, 1.5, 1.0, 0.6, 0.3])
    lengths = np.array([0.35, 0.40, 0.05, 0.35, 0.05, 0.10])
    com = np.array([
        [0.0, -0.15, 0.0],
        [-0.20, 0.0, 0.0],
        [0.0, 0.0, 0.02],
        [0.0, 0.15, 0.0],
        [0.0, 0.0, 0.02],
        [0.0, 0.0, -0.04],
    ])
    inertia = np.array([m * np.array([1.0, 1.0, 0.3]) * L**2 / 12.0 + 1e-4
                        for m, L in zip(masses, lengths)])
    return SpatialArm(lengths=lengths, masses=masses, com=com, inertia=inertia,
                      gravity=np.array([0.0, 0.0, -9.81]),
                      torque_limits=np.full(6, DEFAULT_TORQUE_LIMIT), dh=dh)
