"""LQR-style backward pass for the entropy-regularized objective.

With the entropy bonus the optimal local controller is Gaussian with mean
``u_ref + k + K (x - x_ref)`` and covariance ``entropy_weight * Quu^-1``;
the mean is identical to the deterministic iLQG solution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import LinearGaussianPolicy


class NotPositiveDefinite(np.linalg.LinAlgError):
    def __init__(self, t, mu):
        super().__init__(f"Quu + mu*I not positive definite at t={t} (mu={mu:g})")
        self.t = t
        self.mu = mu


@dataclass
class BackwardResult:
    policy: LinearGaussianPolicy
    Quu: np.ndarray  # regularized Quu actually inverted, (T, du, du)
    Qu: np.ndarray
    Vxx: np.ndarray  # value Hessians, (T, dx, dx)
    Vx: np.ndarray
    mu: float

    def expected_change(self, alpha=1.0):
        """Quadratic-model change of total cost for step ``alpha`` (negative = improvement)."""
        k = self.policy.k
        lin = np.einsum("ti,ti->", k, self.Qu)
        quad = np.einsum("ti,tij,tj->", k, self.Quu, k)
        return alpha * lin + 0.5 * alpha**2 * quad


def backward_pass(dyn, expansions, x_ref, u_ref, mu=0.0, entropy_weight=1.0, fault=None, **policy_kw):
    """Run the recursion over the fitted model around ``(x_ref, u_ref)``.

    ``expansions[t]`` is the cost expansion at the reference point.  The
    model defect ``A x_ref + B u_ref + f - x_ref[t+1]`` enters the linear
    terms, so the reference need not be a model rollout.  Raises
    ``NotPositiveDefinite`` carrying the offending step.

    ``fault="qux_sign"`` flips the sign of Qux; it exists only so the
    self-check can show that it catches a broken recursion.
    """
    if fault not in (None, "qux_sign"):
        raise ValueError(f"unknown fault {fault!r}")
    T = len(expansions)
    dx, du = len(x_ref[0]), len(u_ref[0])
    K = np.zeros((T, du, dx))
    k = np.zeros((T, du))
    C = np.zeros((T, du, du))
    Quu_all = np.zeros((T, du, du))
    Qu_all = np.zeros((T, du))
    Vxx_all = np.zeros((T, dx, dx))
    Vx_all = np.zeros((T, dx))
    Vx = np.zeros(dx)
    Vxx = np.zeros((dx, dx))
    eye = np.eye(du)
    for t in range(T - 1, -1, -1):
        e = expansions[t]
        Qx, Qu = e.lx.copy(), e.lu.copy()
        Qxx, Quu, Qux = e.lxx.copy(), e.luu.copy(), e.lux.copy()
        if t < T - 1:
            A, B = dyn.A[t], dyn.B[t]
            defect = A @ x_ref[t] + B @ u_ref[t] + dyn.f[t] - x_ref[t + 1]
            g = Vx + Vxx @ defect
            Qx += A.T @ g
            Qu += B.T @ g
            Qxx += A.T @ Vxx @ A
            Quu += B.T @ Vxx @ B
            Qux += B.T @ Vxx @ A
        if fault == "qux_sign":
            Qux = -Qux
        Quu = 0.5 * (Quu + Quu.T) + mu * eye
        try:
            L = np.linalg.cholesky(Quu)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(t, mu) from None
        Linv = np.linalg.solve(L, eye)
        Quu_inv = Linv.T @ Linv
        K[t] = -Quu_inv @ Qux
        k[t] = -Quu_inv @ Qu
        C[t] = entropy_weight * Quu_inv
        Quu_all[t], Qu_all[t] = Quu, Qu
        Vx = Qx + K[t].T @ Quu @ k[t] + K[t].T @ Qu + Qux.T @ k[t]
        Vxx = Qxx + K[t].T @ Quu @ K[t] + K[t].T @ Qux + Qux.T @ K[t]
        Vxx = 0.5 * (Vxx + Vxx.T)
        Vx_all[t], Vxx_all[t] = Vx, Vxx
    policy = LinearGaussianPolicy(K, k, C, np.array(x_ref, dtype=float), np.array(u_ref, dtype=float),
                                  **policy_kw)
    return BackwardResult(policy, Quu_all, Qu_all, Vxx_all, Vx_all, mu)


def backward_pass_adaptive(dyn, expansions, x_ref, u_ref, mu0=1e-6, factor=10.0, mu_max=1e6,
                           entropy_weight=1.0, **policy_kw):
    """Retry with ``mu *= factor`` until every Quu is positive definite."""
    mu = 0.0
    while True:
        try:
            return backward_pass(dyn, expansions, x_ref, u_ref, mu, entropy_weight, **policy_kw)
        except NotPositiveDefinite as exc:
            mu = mu0 if mu == 0.0 else mu * factor
            if mu > mu_max:
                raise NotPositiveDefinite(exc.t, mu) from None
