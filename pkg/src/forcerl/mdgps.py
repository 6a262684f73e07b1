"""Distilling the local linear-Gaussian controller into a neural policy.

The network sees the robot state through a tanh trunk; the low-pass
filtered F/T 6-vector is concatenated onto the activations at a chosen
layer.  ``fusion=len(hidden) - 1`` feeds it into the last hidden layer
(late fusion), ``fusion=0`` appends it to the normalized state input.
Training minimizes the precision-weighted squared error between network
and teacher means, which is the KL divergence between the two Gaussians up
to covariance terms that do not depend on the weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import contact_sim as cs
from .ilqg.rollout import InsertionSystem
from .ilqg.types import Trajectory

log = logging.getLogger(__name__)

FT_DIM = 6


class DivergenceAbort(RuntimeError):
    def __init__(self, epoch, loss, initial):
        super().__init__(f"distillation diverged at epoch {epoch}: loss {loss:.4g} > 10 x {initial:.4g}")
        self.epoch = epoch
        self.loss = loss
        self.initial = initial


# -- sensor filtering -------------------------------------------------------

@dataclass
class LowPassFilter:
    """First-order filter ``y <- a*raw + (1-a)*y``; the first call adopts ``raw``."""

    alpha: float = 0.2
    state: np.ndarray = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("smoothing coefficient must lie in (0, 1]")

    def reset(self, value=None):
        self.state = None if value is None else np.array(value, dtype=float)


def lpf_step(filt, raw):
    raw = np.asarray(raw, dtype=float)
    if filt.state is None:
        filt.state = raw.copy()
    else:
        filt.state = filt.alpha * raw + (1.0 - filt.alpha) * filt.state
    return filt.state.copy()


def filter_series(readings, alpha):
    """Filter a (T, 6) reading series from a freshly reset state."""
    filt = LowPassFilter(alpha)
    return np.array([lpf_step(filt, r) for r in readings])


# -- network ----------------------------------------------------------------

@dataclass
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        scale = np.where(std > 1e-8, std, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, X):
        return (X - self.mean) / self.scale


class MlpPolicy:
    """tanh MLP with F/T concatenated at layer ``fusion``.

    ``weights[i]`` maps the (possibly F/T-augmented) input of layer ``i`` to
    its output; the last layer is the linear head.  ``cov_diag`` is the
    state-independent action variance.
    """

    def __init__(self, state_dim, action_dim=6, hidden=(64, 64), fusion=None, seed=0,
                 normalizer=None, cov_diag=None):
        hidden = tuple(int(h) for h in hidden)
        if not hidden:
            raise ValueError("need at least one hidden layer")
        fusion = len(hidden) - 1 if fusion is None else int(fusion)
        if not 0 <= fusion < len(hidden):
            raise ValueError(f"fusion index must lie in [0, {len(hidden) - 1}]")
        self.state_dim, self.action_dim = int(state_dim), int(action_dim)
        self.hidden, self.fusion = hidden, fusion
        rng = np.random.default_rng(seed)
        sizes = (self.state_dim,) + hidden + (self.action_dim,)
        self.weights, self.biases = [], []
        for i in range(len(sizes) - 1):
            fan_in = sizes[i] + (FT_DIM if i == fusion else 0)
            scale = 1.0 / np.sqrt(fan_in)
            if i == len(sizes) - 2:
                scale *= 0.1  # small head so the initial policy is near zero
            self.weights.append(scale * rng.standard_normal((sizes[i + 1], fan_in)))
            self.biases.append(np.zeros(sizes[i + 1]))
        self.normalizer = normalizer or Normalizer.identity(self.state_dim)
        self.cov_diag = np.ones(self.action_dim) if cov_diag is None else np.asarray(cov_diag, dtype=float)

    @property
    def n_layers(self):
        return len(self.weights)

    def _forward(self, X, F):
        """Batch forward pass; returns the mean and the per-layer inputs."""
        h = self.normalizer(X)
        inputs = []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if i == self.fusion:
                h = np.concatenate([h, F], axis=1)
            inputs.append(h)
            z = h @ W.T + b
            h = z if i == self.n_layers - 1 else np.tanh(z)
        return h, inputs

    def activations(self, x, f):
        """Per-layer inputs for one sample (used to check fusion locality)."""
        _, inputs = self._forward(np.atleast_2d(x), np.atleast_2d(f))
        return [a[0] for a in inputs]

    def forward(self, x, f):
        x = np.asarray(x, dtype=float)
        f = np.asarray(f, dtype=float)
        if x.shape[-1] != self.state_dim or f.shape[-1] != FT_DIM:
            raise ValueError(f"expected state dim {self.state_dim} and F/T dim {FT_DIM}, "
                             f"got {x.shape[-1]} and {f.shape[-1]}")
        mean, _ = self._forward(np.atleast_2d(x), np.atleast_2d(f))
        if x.ndim == 1:
            mean = mean[0]
        return mean, np.diag(self.cov_diag)

    def backward(self, X, F, grad_out):
        """Parameter gradients of ``sum(grad_out * mean)``; also input gradients."""
        _, inputs = self._forward(X, F)
        gW, gb = [None] * self.n_layers, [None] * self.n_layers
        g = grad_out
        g_f = None
        for i in range(self.n_layers - 1, -1, -1):
            gW[i] = g.T @ inputs[i]
            gb[i] = g.sum(axis=0)
            g_in = g @ self.weights[i]
            h_in = inputs[i]
            if i == self.fusion:
                g_f = g_in[:, -FT_DIM:]
                g_in, h_in = g_in[:, :-FT_DIM], h_in[:, :-FT_DIM]
            if i == 0:
                g_x = g_in / self.normalizer.scale
            else:
                g = g_in * (1.0 - h_in**2)  # h_in = tanh of the previous layer
        return gW, gb, g_x, g_f

    def input_jacobian(self, x, f):
        """d mean / d (x, f) for one sample, by backprop of each output."""
        X, F = np.atleast_2d(x), np.atleast_2d(f)
        Jx = np.zeros((self.action_dim, self.state_dim))
        Jf = np.zeros((self.action_dim, FT_DIM))
        for a in range(self.action_dim):
            e = np.zeros((1, self.action_dim))
            e[0, a] = 1.0
            _, _, gx, gf = self.backward(X, F, e)
            Jx[a], Jf[a] = gx[0], gf[0]
        return Jx, Jf

    # -- flat parameter view (optimizer and gradient checks) -------------
    def get_params(self):
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_params(self, theta):
        i = 0
        for k in range(self.n_layers):
            for arr in (self.weights[k], self.biases[k]):
                arr[...] = theta[i:i + arr.size].reshape(arr.shape)
                i += arr.size

    def flat_grad(self, gW, gb):
        return np.concatenate([p.ravel() for pair in zip(gW, gb) for p in pair])

    # -- serialization -----------------------------------------------------
    def to_dict(self):
        return {
            "state_dim": self.state_dim, "action_dim": self.action_dim,
            "hidden": list(self.hidden), "fusion": self.fusion, "ft_dim": FT_DIM,
            "layers": [{"shape": list(W.shape), "weight": W.tolist(), "bias": b.tolist()}
                       for W, b in zip(self.weights, self.biases)],
            "normalizer": {"mean": self.normalizer.mean.tolist(), "scale": self.normalizer.scale.tolist()},
            "cov_diag": self.cov_diag.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        pol = cls(d["state_dim"], d["action_dim"], d["hidden"], d["fusion"],
                  normalizer=Normalizer(np.array(d["normalizer"]["mean"]), np.array(d["normalizer"]["scale"])),
                  cov_diag=np.array(d["cov_diag"]))
        for k, layer in enumerate(d["layers"]):
            W = np.array(layer["weight"], dtype=float).reshape(layer["shape"])
            if W.shape != pol.weights[k].shape:
                raise ValueError(f"layer {k}: stored shape {W.shape} != architecture {pol.weights[k].shape}")
            pol.weights[k] = W
            pol.biases[k] = np.array(layer["bias"], dtype=float)
        return pol


def policy_forward(policy, x, f_filtered):
    return policy.forward(x, f_filtered)


# -- distillation -----------------------------------------------------------

def policy_observation(env, s, reading, t):
    """Network state: the optimizer's robot state, the motion setpoint at ``t``
    and the episode phase ``t / horizon``.

    The hybrid controller tracks a time-indexed joint setpoint, so the
    setpoint is part of the closed-loop state.  The setpoint stops moving
    once the servo plan arrives, so the phase is given separately: the
    teacher's gains keep changing through the insertion.  F/T is not
    included here; it enters the network at the fusion layer.
    """
    base = InsertionSystem(env, augmented=False).observe(s, reading)
    return np.concatenate([base, cs.setpoint(env, t), [t / env.horizon]])


def observation_dim(env):
    return InsertionSystem(env, augmented=False).state_dim + env.model.n_joints + 1


@dataclass
class DistillDataset:
    X: np.ndarray  # (N, state_dim)
    F: np.ndarray  # (N, 6) filtered F/T
    mu: np.ndarray  # (N, action_dim) teacher means
    P: np.ndarray  # (N, action_dim, action_dim) teacher precisions

    def __post_init__(self):
        n = len(self.X)
        if n == 0:
            raise ValueError("empty distillation dataset")
        if not (len(self.F) == len(self.mu) == len(self.P) == n):
            raise ValueError("dataset arrays must have the same length")
        if not np.allclose(self.P, np.swapaxes(self.P, 1, 2)):
            raise ValueError("precisions must be symmetric")

    def __len__(self):
        return len(self.X)


def teacher_targets(teacher, t, x):
    """Full-action mean and precision of the teacher at ``(t, x)``.

    Channels the teacher does not drive get zero mean and unit precision.
    """
    mean = teacher.embed(teacher.mean(t, x))
    full = teacher.full_dim
    P = np.eye(full)
    rows = teacher.action_rows if teacher.action_rows is not None else np.arange(full)
    P[np.ix_(rows, rows)] = np.linalg.inv(teacher.C[t])
    return mean, 0.5 * (P + P.T)


def collect_dataset(env, teacher, rollouts=20, seed=0, alpha_f=0.2):
    """Roll out the teacher with its own noise and label each visited state.

    Target means are saturated at the environment's wrench limit: the
    teacher's feedback can ask for far more than the controller executes,
    and those unreachable targets would otherwise dominate the loss.
    """
    system = InsertionSystem(env, augmented=teacher.augmented)
    X, F, mu, P = [], [], [], []
    for child in np.random.SeedSequence(seed).spawn(rollouts):
        rng = np.random.default_rng(child)
        state, x = system.reset(rng, perturb=True)
        filt = LowPassFilter(alpha_f)
        for t in range(env.horizon):
            s, reading = state[:2]
            f = lpf_step(filt, reading.f_t)
            m, p = teacher_targets(teacher, t, x)
            if env.mode == "operational":
                # label with the wrench the controller will actually execute
                m = np.clip(m, -env.wrench_limit, env.wrench_limit)
            X.append(policy_observation(env, s, reading, t))
            F.append(f)
            mu.append(m)
            P.append(p)
            u = teacher.sample(t, x, rng)
            if t < env.horizon - 1:
                state, x, _ = system.advance(state, teacher.embed(u), rng)
    return DistillDataset(np.array(X), np.array(F), np.array(mu), np.array(P))


def kl_loss(policy, X, F, mu, P):
    """Mean of ``0.5 (m - mu)^T P (m - mu)`` and the flat parameter gradient."""
    mean, _ = policy._forward(X, F)
    err = mean - mu
    Pe = np.einsum("nij,nj->ni", P, err)
    n = len(X)
    loss = 0.5 * float(np.einsum("ni,ni->", err, Pe)) / n
    gW, gb, _, _ = policy.backward(X, F, Pe / n)
    return loss, policy.flat_grad(gW, gb)


@dataclass
class DistillResult:
    policy: MlpPolicy
    final_loss: float
    initial_loss: float
    curve: list = field(default_factory=list)


def distill(dataset, policy, epochs=400, lr=1e-3, momentum=0.9, batch=64, seed=0,
            fit_normalizer=True):
    """Mini-batch gradient descent with momentum on the KL surrogate.

    Raises ``DivergenceAbort`` as soon as the full-data loss exceeds ten
    times its initial value.  Sets the policy covariance to the inverse of
    the mean target precision.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if fit_normalizer:
        policy.normalizer = Normalizer.fit(dataset.X)
    rng = np.random.default_rng(seed)
    X, F, mu, P = dataset.X, dataset.F, dataset.mu, dataset.P
    initial, _ = kl_loss(policy, X, F, mu, P)
    curve = [initial]
    theta = policy.get_params()
    velocity = np.zeros_like(theta)
    n = len(X)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            _, grad = kl_loss(policy, X[idx], F[idx], mu[idx], P[idx])
            velocity = momentum * velocity - lr * grad
            theta = theta + velocity
            policy.set_params(theta)
        loss, _ = kl_loss(policy, X, F, mu, P)
        curve.append(loss)
        if not np.isfinite(loss) or loss > 10.0 * initial:
            raise DivergenceAbort(epoch, loss, initial)
    mean_P = P.mean(axis=0)
    policy.cov_diag = np.clip(np.diag(np.linalg.inv(mean_P)), 1e-12, None)
    log.info("distilled: loss %.4g -> %.4g over %d epochs", initial, curve[-1], epochs)
    return DistillResult(policy, curve[-1], initial, curve)


# -- execution --------------------------------------------------------------

def run_policy(env, policy, deterministic=True, rng=None, alpha_f=0.2, cost=None, perturb=True):
    """Execute the network through the hybrid controller for one episode."""
    rng = rng if rng is not None else np.random.default_rng(0)
    system = InsertionSystem(env, augmented=False)
    state, x = system.reset(rng, perturb)
    filt = LowPassFilter(alpha_f)
    T = env.horizon
    X = np.empty((T, system.state_dim))  # optimizer state, for the cost
    U = np.empty((T, policy.action_dim))
    readings, true, q, qdot, twist = [], [], [], [], []
    std = np.sqrt(policy.cov_diag)
    for t in range(T):
        s, reading = state[:2]
        X[t] = x
        readings.append(reading.f_t)
        true.append(reading.true_wrench)
        q.append(s.q)
        qdot.append(s.qdot)
        twist.append(env.model.tool_twist(s.q, s.qdot))
        f = lpf_step(filt, reading.f_t)
        mean, _ = policy.forward(policy_observation(env, s, reading, t), f)
        u = mean if deterministic else mean + std * rng.standard_normal(policy.action_dim)
        U[t] = u
        if t < T - 1:
            state, x, _ = system.advance(state, u, rng)
    if cost is not None:
        rows = system.action_rows if system.action_rows is not None else slice(None)
        costs = np.array([cost(X[t], U[t][rows], final=(t == T - 1)) for t in range(T)])
    else:
        costs = np.zeros(T)
    return Trajectory(X, U, costs, readings=np.array(readings), true_wrench=np.array(true),
                      q=np.array(q), qdot=np.array(qdot), twist=np.array(twist),
                      success=cs.is_success(env, state[0]), final_state=state[0])
