"""Plane-matching cost and its analytic second-order expansion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CostExpansion:
    l: float
    lx: np.ndarray
    lu: np.ndarray
    lxx: np.ndarray
    luu: np.ndarray
    lux: np.ndarray


def _planar_body_points():
    # tool frame: x along the peg axis, y across it
    return np.array([[0.0, 0.0], [-0.05, 0.0], [0.0, 0.02]])


@dataclass(frozen=True)
class CostSpec:
    """Weighted l1/l2 distance between three tool points and their targets.

    ``d`` stacks the differences of the three current body points from the
    targets; the running cost is
    ``w_l1 * sum_i sqrt(d_i^2 + alpha^2) + w_l2 * |d|^2 + w_u * |u|^2``,
    multiplied by ``final_weight`` at the last step.  ``pose_index`` locates
    (x, y, theta) of the tool inside the state vector.
    """

    targets: np.ndarray
    body_points: np.ndarray = field(default_factory=_planar_body_points)
    w_l1: float = 1000.0
    w_l2: float = 10000.0
    alpha: float = 1e-4
    w_u: float = 0.02
    final_weight: float = 10.0
    pose_index: tuple = (6, 7, 8)

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=float).reshape(3, 2)
        b = np.asarray(self.body_points, dtype=float).reshape(3, 2)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "body_points", b)
        if min(self.w_l1, self.w_l2, self.w_u) < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("l1 smoothing must be positive")
        e1, e2 = t[1] - t[0], t[2] - t[0]
        area = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(area) < 1e-12:
            raise ValueError("target points are collinear")

    @classmethod
    def for_pose(cls, position, angle, **kw):
        body = kw.pop("body_points", _planar_body_points())
        return cls(targets=body_world(body, np.asarray(position, dtype=float), angle),
                   body_points=body, **kw)

    def points(self, x):
        i, j, k = self.pose_index
        return body_world(self.body_points, np.array([x[i], x[j]]), x[k])

    def residual(self, x):
        return (self.points(x) - self.targets).reshape(-1)

    def __call__(self, x, u, final=False):
        d = self.residual(x)
        scale = self.final_weight if final else 1.0
        return scale * (self.w_l1 * np.sum(np.sqrt(d**2 + self.alpha**2)) + self.w_l2 * d @ d) \
            + self.w_u * u @ u

    def expand(self, x, u, final=False):
        dx, du = len(x), len(u)
        i, j, k = self.pose_index
        th = x[k]
        c, s = np.cos(th), np.sin(th)
        d = self.residual(x)
        # Jacobian / Hessian of each body point w.r.t. (x, y, theta)
        Jp = np.zeros((6, 3))
        Hth = np.zeros(6)  # only the theta-theta second derivative is nonzero
        for n, (bx, by) in enumerate(self.body_points):
            Jp[2 * n:2 * n + 2, 0:2] = np.eye(2)
            Jp[2 * n, 2] = -s * bx - c * by
            Jp[2 * n + 1, 2] = c * bx - s * by
            Hth[2 * n] = -c * bx + s * by
            Hth[2 * n + 1] = -s * bx - c * by
        root = np.sqrt(d**2 + self.alpha**2)
        g_d = self.w_l1 * d / root + 2 * self.w_l2 * d
        h_d = self.w_l1 * self.alpha**2 / root**3 + 2 * self.w_l2
        scale = self.final_weight if final else 1.0
        idx = [i, j, k]
        lx = np.zeros(dx)
        lx[idx] = scale * (Jp.T @ g_d)
        lxx = np.zeros((dx, dx))
        sub = Jp.T @ (h_d[:, None] * Jp)
        sub[2, 2] += g_d @ Hth
        lxx[np.ix_(idx, idx)] = scale * sub
        l = self(x, u, final)
        return CostExpansion(l, lx, 2 * self.w_u * u, lxx, 2 * self.w_u * np.eye(du), np.zeros((du, dx)))


def body_world(body, position, angle):
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])
    return position + body @ R.T


@dataclass(frozen=True)
class QuadraticCost:
    """x'Qx + u'Ru (+ x'Qf x at the last step); used by the LQR fixtures."""

    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray = None

    def __call__(self, x, u, final=False):
        Q = self.Qf if (final and self.Qf is not None) else self.Q
        return float(x @ Q @ x + u @ self.R @ u)

    def expand(self, x, u, final=False):
        Q = self.Qf if (final and self.Qf is not None) else self.Q
        return CostExpansion(self(x, u, final), 2 * Q @ x, 2 * self.R @ u, 2 * Q, 2 * self.R,
                             np.zeros((len(u), len(x))))


def trajectory_cost(cost, X, U):
    T = len(X)
    return np.array([cost(X[t], U[t], final=(t == T - 1)) for t in range(T)])
