from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """One rollout.  Row ``t`` of ``X``/``U`` holds x_t and u_t.

    ``U`` holds the full action sent to the environment (a 6-vector wrench in
    operational mode); ``readings``/``true_wrench`` are tool-frame F/T rows.
    """

    X: np.ndarray
    U: np.ndarray
    costs: np.ndarray
    readings: np.ndarray = None
    true_wrench: np.ndarray = None
    q: np.ndarray = None
    qdot: np.ndarray = None
    twist: np.ndarray = None
    success: bool = False
    final_state: object = None
    contact_work: np.ndarray = None

    def __post_init__(self):
        T = len(self.X)
        if len(self.U) != T or len(self.costs) != T:
            raise ValueError("trajectory arrays must share the horizon length")
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("non-finite cost in trajectory")

    @property
    def horizon(self):
        return len(self.X)

    @property
    def total_cost(self):
        return float(np.sum(self.costs))


@dataclass
class LinearGaussianDynamics:
    A: np.ndarray  # (T-1, dx, dx)
    B: np.ndarray  # (T-1, dx, du)
    f: np.ndarray  # (T-1, dx)
    Sigma: np.ndarray  # (T-1, dx, dx)

    @property
    def horizon(self):
        return len(self.A) + 1

    def predict(self, t, x, u):
        return self.A[t] @ x + self.B[t] @ u + self.f[t]


@dataclass
class LinearGaussianPolicy:
    """u_t ~ N(u_ref + alpha*k + K (x - x_ref), C) over the *active* action.

    ``action_rows`` maps active components into the full action vector sent
    to the environment (``None`` when they coincide).
    """

    K: np.ndarray  # (T, du, dx)
    k: np.ndarray  # (T, du)
    C: np.ndarray  # (T, du, du)
    x_ref: np.ndarray  # (T, dx)
    u_ref: np.ndarray  # (T, du)
    action_rows: np.ndarray = None
    full_dim: int = None
    mode: str = "operational"
    augmented: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        T, du, dx = self.K.shape
        for name, shape in (("k", (T, du)), ("C", (T, du, du)), ("x_ref", (T, dx)), ("u_ref", (T, du))):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.full_dim is None:
            self.full_dim = du if self.action_rows is None else int(max(self.action_rows)) + 1

    @property
    def horizon(self):
        return self.K.shape[0]

    @property
    def dx(self):
        return self.K.shape[2]

    @property
    def du(self):
        return self.K.shape[1]

    def mean(self, t, x, alpha=1.0):
        return self.u_ref[t] + alpha * self.k[t] + self.K[t] @ (x - self.x_ref[t])

    def chol(self, t):
        C = self.C[t]
        if not np.any(C):
            return np.zeros_like(C)
        return np.linalg.cholesky(C + 1e-12 * np.eye(len(C)))

    def sample(self, t, x, rng, alpha=1.0):
        return self.mean(t, x, alpha) + self.chol(t) @ rng.standard_normal(self.du)

    def embed(self, u):
        if self.action_rows is None:
            return u
        full = np.zeros(self.full_dim)
        full[self.action_rows] = u
        return full

    def affine(self, t):
        """Absolute-form gain and offset: mean = K x + k_abs."""
        return self.K[t], self.u_ref[t] + self.k[t] - self.K[t] @ self.x_ref[t]

    def embed_cov(self, t):
        if self.action_rows is None:
            return self.C[t]
        full = np.zeros((self.full_dim, self.full_dim))
        full[np.ix_(self.action_rows, self.action_rows)] = self.C[t]
        return full


@dataclass
class IlqgConfig:
    horizon: int = 60
    rollouts: int = 4
    iterations: int = 8
    entropy_weight: float = 1.0
    fit_reg: float = 1e-6
    fit_window: int = 2
    mu_init: float = 1e-6
    mu_factor: float = 10.0
    mu_max: float = 1e6
    line_search: tuple = (1.0, 0.5, 0.25, 0.1, 0.05)
    force_std: float = 5.0
    moment_std: float = 0.5
    torque_std: float = 1.0

    def __post_init__(self):
        if self.rollouts < 2 or self.horizon < 2:
            raise ValueError("need at least 2 rollouts and a horizon of at least 2")
        if self.fit_reg <= 0:
            raise ValueError("fit regularizer must be positive")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
