"""Analytic fixtures that a correct build must reproduce.

Each check returns a measured error and a tolerance; nothing raises.  The
fixtures use independent oracles: the textbook Riccati recursion, algebraic
identities of the control law, and central finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import manip_model as mm
from .. import mdgps as md
from .. import opspace_ctrl as oc
from ..ilqg import CostSpec, LinearSystem, QuadraticCost, backward_pass, fit_dynamics, forward_pass
from ..ilqg.types import LinearGaussianDynamics, LinearGaussianPolicy


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tol)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} error {self.error:.3e}  (tol {self.tol:g})"


def riccati_gains(A, B, Q, R, Qf, T):
    """Finite-horizon discrete Riccati recursion for ``sum x'Qx + u'Ru + x_T'Qf x_T``.

    Returns gains ``K[0..T-2]`` with ``u_t = K_t x_t``.
    """
    P = Qf
    K = []
    for _ in range(T - 1):
        Kt = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ A + A.T @ P @ B @ Kt
        K.append(Kt)
    return np.array(K[::-1])


def lqr_gains(A, B, Q, R, Qf, T, entropy_weight=0.0, fault=None):
    """Gains from the optimizer's backward pass on exact linear dynamics."""
    dx, du = B.shape
    dyn = LinearGaussianDynamics(np.tile(A, (T - 1, 1, 1)), np.tile(B, (T - 1, 1, 1)),
                                 np.zeros((T - 1, dx)), np.zeros((T - 1, dx, dx)))
    cost = QuadraticCost(Q, R, Qf)
    x0, u0 = np.zeros((T, dx)), np.zeros((T, du))
    exps = [cost.expand(x0[t], u0[t], final=(t == T - 1)) for t in range(T)]
    return backward_pass(dyn, exps, x0, u0, 0.0, entropy_weight, fault=fault)


def check_riccati_scalar(fault=None):
    one = np.eye(1)
    res = lqr_gains(one, one, one, one, one, 2, fault=fault)
    # one step to go: K = -B P A / (R + B P B) = -1/2
    return CheckResult("riccati scalar K=-0.5", float(abs(res.policy.K[0, 0, 0] + 0.5)), 1e-8)


def check_riccati_random(seed=0, fault=None):
    rng = np.random.default_rng(seed)
    dx, du, T = 4, 2, 12
    A = np.eye(dx) + 0.2 * rng.standard_normal((dx, dx))
    B = rng.standard_normal((dx, du))
    L = rng.standard_normal((dx, dx))
    Q = L @ L.T + np.eye(dx)
    R = np.eye(du) * 0.5
    res = lqr_gains(A, B, Q, R, 2 * Q, T, fault=fault)
    oracle = riccati_gains(A, B, Q, R, 2 * Q, T)
    return CheckResult("riccati random 4x2", float(np.max(np.abs(res.policy.K[:-1] - oracle))), 1e-8)


def check_entropy_law(seed=0):
    """C_t Quu_t = I at every step of a backward pass over a fitted model."""
    rng = np.random.default_rng(seed)
    dx, du, T = 6, 3, 10
    A = np.eye(dx) + 0.05 * rng.standard_normal((dx, dx))
    B = 0.5 * rng.standard_normal((dx, du))
    system = LinearSystem(A, B, np.ones(dx), process_std=0.01, start_std=0.1, horizon=T)
    policy = LinearGaussianPolicy(np.zeros((T, du, dx)), np.zeros((T, du)), np.tile(np.eye(du), (T, 1, 1)),
                                  np.zeros((T, dx)), np.zeros((T, du)), mode="linear")
    cost = QuadraticCost(np.eye(dx), 0.1 * np.eye(du), 10 * np.eye(dx))
    trajs = [forward_pass(system, policy, cost, noise=True, rng=rng, perturb=True) for _ in range(20)]
    dyn = fit_dynamics(np.stack([t.X for t in trajs]), np.stack([t.U for t in trajs]))
    nominal = trajs[0]
    exps = [cost.expand(nominal.X[t], nominal.U[t], final=(t == T - 1)) for t in range(T)]
    res = backward_pass(dyn, exps, nominal.X, nominal.U, 0.0, 1.0)
    err = max(np.max(np.abs(res.policy.C[t] @ res.Quu[t] - np.eye(du))) for t in range(T))
    return CheckResult("entropy law C Quu = I", float(err), 1e-8)


def check_gravity_equilibrium():
    """Zero wrench with q* = q holds the arm still: tau equals g(q)."""
    model = mm.default_planar3()
    gains = oc.HybridGains.stiff(3)
    err = 0.0
    for q in (np.array([0.3, -1.0, 0.4]), np.array([-0.2, -1.2, -0.17]), np.zeros(3)):
        s = mm.JointState.at_rest(q)
        tau = oc.hybrid_torque(model, s, np.zeros(6), (q, np.zeros(3)), gains)
        nxt = mm.forward_simulate(model, s, tau, dt=0.05, substep=0.001)
        err = max(err, np.max(np.abs(nxt.q - q)), np.max(np.abs(nxt.qdot)))
    return CheckResult("gravity equilibrium", float(err), 1e-9)


def check_projector(seed=0):
    """Nullspace projector of a redundant 4-link arm: idempotent and wrench-free."""
    rng = np.random.default_rng(seed)
    model = mm.planar_arm([0.3, 0.3, 0.2, 0.1], [1.0, 1.0, 0.5, 0.3])
    err = 0.0
    for _ in range(10):
        q = rng.uniform(-1.5, 1.5, 4)
        J = model.jacobian(q)[mm.PLANAR_ROWS]
        N = oc.nullspace_projector(J)
        tau = rng.standard_normal(4)
        # the wrench a torque produces at the tip is (J^T)^+ tau
        wrench = oc.pinv(J.T) @ (N @ tau)
        err = max(err, np.max(np.abs(N @ N - N)), np.max(np.abs(wrench)))
    return CheckResult("nullspace projector", float(err), 1e-10)


def check_pfaffian(seed=0):
    rng = np.random.default_rng(seed)
    err = 0.0
    for k in (1, 2, 3):
        con = oc.PfaffianConstraint(rng.standard_normal((k, 6)))
        F = rng.standard_normal(6)
        lam, resid = oc.pfaffian_project(con, F)
        err = max(err, np.max(np.abs(con.A.T @ lam + resid - F)), np.max(np.abs(con.A @ resid)))
    return CheckResult("pfaffian reconstruction", float(err), 1e-10)


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


def cost_gradient_error(rng, h=1e-6):
    """Relative error of the cost expansion against central differences at a random point."""
    targets = np.array([[0.55, -0.265], [0.56, -0.245], [0.54, -0.245]])
    cost = CostSpec(targets, pose_index=(6, 7, 8), w_l1=rng.uniform(0, 10), w_l2=rng.uniform(0, 100),
                    w_u=rng.uniform(0.01, 1), alpha=1e-2, final_weight=rng.uniform(1, 10))
    x = rng.standard_normal(12) * 0.05
    x[6:9] += [0.55, -0.25, -np.pi / 2]
    u = rng.standard_normal(3)
    final = bool(rng.integers(2))
    e = cost.expand(x, u, final)
    dx, du = len(x), len(u)

    def grad(f, z):
        g = np.zeros(len(z))
        for i in range(len(z)):
            d = np.zeros(len(z))
            d[i] = h
            g[i] = (f(z + d) - f(z - d)) / (2 * h)
        return g

    lx = grad(lambda z: cost(z, u, final), x)
    lu = grad(lambda z: cost(x, z, final), u)
    lxx = np.array([grad(lambda z: cost.expand(z, u, final).lx[i], x) for i in range(dx)])
    luu = np.array([grad(lambda z: cost.expand(x, z, final).lu[i], u) for i in range(du)])
    lux = np.array([grad(lambda z: cost.expand(z, u, final).lu[i], x) for i in range(du)])
    return max(_rel(e.lx, lx), _rel(e.lu, lu), _rel(e.lxx, lxx), _rel(e.luu, luu),
               _rel(e.lux, lux) if np.any(lux) else float(np.max(np.abs(e.lux))))


def distill_gradient_error(rng, h=1e-6, fusion=None):
    """Relative error of the KL-surrogate gradient on a small random network."""
    n = 8
    net = md.MlpPolicy(3, 2, hidden=(4, 3), fusion=fusion, seed=int(rng.integers(2**31)))
    for W in net.weights:
        W *= 3.0  # leave the near-linear regime of the small-head initialization
    X = rng.standard_normal((n, 3))
    F = rng.standard_normal((n, md.FT_DIM))
    mu = rng.standard_normal((n, 2))
    L = rng.standard_normal((n, 2, 2))
    P = L @ np.swapaxes(L, 1, 2) + 0.1 * np.eye(2)
    _, g = md.kl_loss(net, X, F, mu, P)
    theta = net.get_params()
    idx = rng.choice(len(theta), size=min(10, len(theta)), replace=False)
    fd = np.zeros(len(idx))
    for j, i in enumerate(idx):
        for sgn in (1, -1):
            th = theta.copy()
            th[i] += sgn * h
            net.set_params(th)
            fd[j] += sgn * md.kl_loss(net, X, F, mu, P)[0] / (2 * h)
    net.set_params(theta)
    return _rel(g[idx], fd)


def check_cost_gradient(seed=0, probes=20):
    rng = np.random.default_rng(seed)
    return CheckResult("cost expansion vs FD", max(cost_gradient_error(rng) for _ in range(probes)), 1e-4)


def check_distill_gradient(seed=0, probes=20):
    rng = np.random.default_rng(seed)
    return CheckResult("distillation grad vs FD", max(distill_gradient_error(rng) for _ in range(probes)), 1e-4)


def lqr_self_check(fault=None):
    """Run every fixture; ``fault="qux_sign"`` breaks the Riccati recursion on purpose."""
    return [
        check_riccati_scalar(fault=fault),
        check_riccati_random(fault=fault),
        check_entropy_law(),
        check_gravity_equilibrium(),
        check_projector(),
        check_pfaffian(),
        check_cost_gradient(),
        check_distill_gradient(),
    ]
