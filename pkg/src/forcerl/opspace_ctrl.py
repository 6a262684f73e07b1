"""Operational-space force/motion control laws and constrained-dynamics identities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import manip_model as mm

SVD_RTOL = 1e-6


class TaskSingularity(np.linalg.LinAlgError):
    pass


class RankDeficient(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class HybridGains:
    K_qp: np.ndarray
    K_qd: np.ndarray
    sigma_motion: np.ndarray
    sigma_force: np.ndarray
    q_rest: np.ndarray = None
    k_posture: float = 1.0

    def __post_init__(self):
        for name in ("K_qp", "K_qd", "sigma_motion", "sigma_force"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, arr)
        for name in ("sigma_motion", "sigma_force"):
            if np.any(getattr(self, name) > 1):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        if self.q_rest is not None:
            object.__setattr__(self, "q_rest", np.asarray(self.q_rest, dtype=float))

    @classmethod
    def default(cls, n, q_rest=None, kp=2.0, kd=0.5, motion=0.3, force=1.0, k_posture=1.0):
        return cls(np.full(n, kp), np.full(n, kd), np.full(n, motion), np.full(n, force),
                   q_rest, k_posture)

    @classmethod
    def stiff(cls, n, motion=0.3, force=1.0, q_rest=None, k_posture=1.0):
        """Per-joint gains that hold the arm on its servo plan to under a millimetre.

        Gains fall off from the shoulder to the wrist; a uniformly stiff wrist
        rings at the control rate.
        """
        if n == 3:
            kp, kd = np.array([800.0, 400.0, 40.0]), np.array([60.0, 30.0, 2.0])
        else:
            kp = np.geomspace(800.0, 40.0, n)
            kd = np.geomspace(60.0, 2.0, n)
        return cls(kp, kd, np.full(n, motion), np.full(n, force), q_rest, k_posture)

    def null_torque(self, q):
        if self.q_rest is None:
            return np.zeros_like(q)
        return self.k_posture * (self.q_rest - q)


def pinv(A, rtol=SVD_RTOL):
    """SVD pseudo-inverse; singular values below ``rtol * s_max`` are zeroed."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.T.shape)
    inv = np.where(s > rtol * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (Vt.T * inv) @ U.T


def nullspace_projector(J):
    """``I - J^T (J^T)^+`` for a 6 x n Jacobian."""
    Jt = J.T
    return np.eye(Jt.shape[0]) - Jt @ pinv(Jt)


def wrench_to_torque(model, s, F_tip, tau_null=None):
    """tau = g(q) + J^T F + [I - J^T (J^T)^+] tau_null."""
    q = s.q
    J = model.jacobian(q)
    _, _, g_vec = model.dynamics_terms(q, np.zeros_like(q))
    tau = g_vec + J.T @ np.asarray(F_tip, dtype=float)
    if tau_null is not None:
        tau = tau + nullspace_projector(J) @ tau_null
    return tau


def hybrid_torque(model, s, F_tip, desired, gains, tau_null=None, terms=None):
    """Weak joint-space position loop around the wrench law.

    Uses the stabilizing sign ``K_qp (q* - q) + K_qd (qd* - qd)``.  If
    ``tau_null`` is not given it is taken from the gains' posture target.
    ``terms=(M, c_vec, g_vec, J)`` may be passed to skip recomputation.
    """
    q, qd = s.q, s.qdot
    q_star, qd_star = (np.asarray(a, dtype=float) for a in desired)
    if q_star.shape != q.shape or qd_star.shape != q.shape:
        raise mm.DimensionError("desired joint state has wrong length")
    if tau_null is None:
        tau_null = gains.null_torque(q)
    if terms is None:
        J = model.jacobian(q)
        _, _, g_vec = model.dynamics_terms(q, np.zeros_like(q))
    else:
        g_vec, J = terms[2], terms[3]
    servo = gains.K_qp * (q_star - q) + gains.K_qd * (qd_star - qd)
    tau = gains.sigma_motion * servo + gains.sigma_force * (J.T @ np.asarray(F_tip, dtype=float)) + g_vec
    if np.any(tau_null):
        tau = tau + nullspace_projector(J) @ tau_null
    return tau


def _task_inverse(model, J):
    rows = mm.active_rows(model)
    Ja = J[rows]
    if np.linalg.matrix_rank(Ja, tol=SVD_RTOL * max(np.linalg.norm(Ja, 2), 1e-300)) < len(rows):
        raise TaskSingularity("Jacobian rank deficient in the active task rows")
    Jinv = np.zeros((J.shape[1], 6))
    Jinv[:, rows] = pinv(Ja)
    return Jinv


def opspace_dynamics(model, s, h=1e-6):
    """Operational-space inertia and bias: ``F = Lambda Vdot + eta``.

    Inverses are taken over the active task rows (pseudo-inverse when the arm
    is redundant); inactive rows of ``Lambda`` and ``eta`` are zero.
    """
    q, qd = s.q, s.qdot
    J = model.jacobian(q)
    Jinv = _task_inverse(model, J)
    M, _, _ = model.dynamics_terms(q, np.zeros_like(q))
    Lam = Jinv.T @ M @ Jinv
    V = J @ qd
    qd_task = Jinv @ V
    _, c_task, _ = model.dynamics_terms(q, qd_task)
    Jdot = (model.jacobian(q + h * qd) - model.jacobian(q - h * qd)) / (2 * h)
    eta = Jinv.T @ c_task - Lam @ Jdot @ qd_task
    return Lam, eta


@dataclass(frozen=True)
class PfaffianConstraint:
    A: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[1] != 6:
            raise mm.DimensionError("constraint rows must have 6 columns")
        object.__setattr__(self, "A", A)

    @property
    def k(self):
        return self.A.shape[0]


def pfaffian_project(constraint, F_tip):
    """Split ``F_tip = A^T lam + residual`` with the residual orthogonal to rows of A."""
    A = constraint.A
    F = np.asarray(F_tip, dtype=float)
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise RankDeficient(f"constraint matrix has rank < {A.shape[0]}")
    lam = np.linalg.solve(A @ A.T, A @ F)
    return lam, F - A.T @ lam


def constraint_violation(constraint, V):
    return constraint.A @ np.asarray(V, dtype=float)


def planar_constraint(*axes):
    """Rows selecting twist components by name: 'x', 'y', 'rot'."""
    index = {"x": 0, "y": 1, "rot": 5}
    A = np.zeros((len(axes), 6))
    for i, a in enumerate(axes):
        A[i, index[a]] = 1.0
    return PfaffianConstraint(A)
