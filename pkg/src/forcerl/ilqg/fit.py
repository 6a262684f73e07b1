from __future__ import annotations

import numpy as np

from .types import LinearGaussianDynamics

MAX_WINDOW = 5


class InsufficientData(ValueError):
    pass


def fit_dynamics(X, U, reg=1e-6, window=2):
    """Time-varying linear-Gaussian fit ``x_{t+1} ~ A_t x_t + B_t u_t + f_t``.

    ``X`` is (N, T, dx) and ``U`` is (N, T, du).  Each step pools the samples
    of steps ``t-window .. t+window``, widening up to ``MAX_WINDOW`` if there
    are fewer pooled samples than regression unknowns.  Features are centered
    before the ridge solve so the offset is not shrunk.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    if X.ndim != 3 or U.ndim != 3 or X.shape[:2] != U.shape[:2]:
        raise ValueError("X and U must be (N, T, d) arrays with matching N and T")
    N, T, dx = X.shape
    du = U.shape[2]
    if N < 2:
        raise InsufficientData("need at least two trajectories")
    if T < 2:
        raise InsufficientData("need at least two time steps")
    need = dx + du + 1
    A = np.empty((T - 1, dx, dx))
    B = np.empty((T - 1, dx, du))
    f = np.empty((T - 1, dx))
    Sigma = np.empty((T - 1, dx, dx))
    for t in range(T - 1):
        w = window
        while True:
            lo, hi = max(0, t - w), min(T - 2, t + w)
            count = N * (hi - lo + 1)
            if count >= need or w >= MAX_WINDOW or (lo == 0 and hi == T - 2):
                break
            w += 1
        if count < need:
            raise InsufficientData(f"step {t}: {count} pooled samples, need {need}")
        Phi = np.concatenate([X[:, lo:hi + 1], U[:, lo:hi + 1]], axis=2).reshape(-1, dx + du)
        Y = X[:, lo + 1:hi + 2].reshape(-1, dx)
        mp, my = Phi.mean(axis=0), Y.mean(axis=0)
        Pc, Yc = Phi - mp, Y - my
        G = Pc.T @ Pc + reg * np.eye(dx + du)
        W = np.linalg.solve(G, Pc.T @ Yc)  # (dx+du, dx)
        A[t] = W[:dx].T
        B[t] = W[dx:].T
        f[t] = my - W.T @ mp
        R = Yc - Pc @ W
        S = R.T @ R / len(R)
        Sigma[t] = 0.5 * (S + S.T) + reg * np.eye(dx)
    return LinearGaussianDynamics(A, B, f, Sigma)
