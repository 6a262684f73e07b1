"""Rollout CSV logs, plot-ready exports and policy files."""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from .. import manip_model as mm
from ..ilqg.types import LinearGaussianPolicy
from ..mdgps import MlpPolicy


class MalformedLog(ValueError):
    pass


def rollout_columns(n_joints, action_dim):
    cols = ["t"]
    cols += [f"q{i}" for i in range(n_joints)] + [f"qd{i}" for i in range(n_joints)]
    cols += ["tool_x", "tool_y", "tool_angle"]
    cols += [f"u{i}" for i in range(action_dim)] + [f"u_std{i}" for i in range(action_dim)]
    cols += [f"ft{i}" for i in range(6)] + [f"ft_true{i}" for i in range(6)]
    cols += ["cost"]
    return cols


def policy_std(policy, horizon):
    """Per-step action std, shape ``(T, full action dim)``."""
    if isinstance(policy, LinearGaussianPolicy):
        return np.array([np.sqrt(np.diag(policy.embed_cov(t))) for t in range(policy.horizon)])
    if isinstance(policy, MlpPolicy):
        return np.tile(np.sqrt(policy.cov_diag), (horizon, 1))
    raise TypeError(f"no covariance for {type(policy).__name__}")


def write_rollout_csv(path, traj, model, std=None):
    """One row per tick: joint state, tool pose, action, its std, F/T, cost."""
    T = traj.horizon
    du = traj.U.shape[1]
    std = np.zeros((T, du)) if std is None else np.asarray(std)
    n = model.n_joints
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(rollout_columns(n, du))
        for t in range(T):
            pose = mm.forward_kinematics(model, traj.q[t])
            row = [t, *traj.q[t], *traj.qdot[t], *pose.position, pose.orientation,
                   *traj.U[t], *std[t], *traj.readings[t], *traj.true_wrench[t], traj.costs[t]]
            w.writerow([repr(float(v)) if not isinstance(v, int) else v for v in row])


def read_rollout_csv(path):
    """Columns of a rollout log as float arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedLog(f"{path}: no header")
    header = rows[0]
    required = {"t", "cost", "ft0", "ft_true5", "u0", "u_std0"}
    missing = required - set(header)
    if missing:
        raise MalformedLog(f"{path}: missing columns {sorted(missing)}")
    body = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise MalformedLog(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
        try:
            body.append([float(v) for v in row])
        except ValueError as exc:
            raise MalformedLog(f"{path}:{i}: {exc}") from None
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def plot_export(log_path, out_dir):
    """Write ``actions.csv`` (mean, mean - std, mean + std per channel) and
    ``ft.csv`` (measured and true six-axis F/T) from a rollout log."""
    cols = read_rollout_csv(log_path)
    n_u = sum(1 for k in cols if k.startswith("u") and k[1:].isdigit())
    os.makedirs(out_dir, exist_ok=True)
    T = len(cols["t"])
    a_header = ["t"]
    for i in range(n_u):
        a_header += [f"u{i}_mean", f"u{i}_lo", f"u{i}_hi", f"u{i}_std"]
    a_path = os.path.join(out_dir, "actions.csv")
    with open(a_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(a_header)
        for t in range(T):
            row = [int(cols["t"][t])]
            for i in range(n_u):
                m, s = cols[f"u{i}"][t], cols[f"u_std{i}"][t]
                row += [m, m - s, m + s, s]
            w.writerow(row)
    f_path = os.path.join(out_dir, "ft.csv")
    names = ("fx", "fy", "fz", "mx", "my", "mz")
    with open(f_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + list(names) + [f"{n}_true" for n in names])
        for t in range(T):
            w.writerow([int(cols["t"][t])] + [cols[f"ft{i}"][t] for i in range(6)]
                       + [cols[f"ft_true{i}"][t] for i in range(6)])
    return a_path, f_path


def std_phase_pattern(std):
    """Explore, settle, re-explore: the interior minimum of the mean std is
    below 60% of both its first and last values."""
    s = np.asarray(std, dtype=float)
    s = s.mean(axis=1) if s.ndim == 2 else s
    if len(s) < 3:
        return False
    mid = s[1:-1].min()
    return bool(mid < 0.6 * s[0] and mid < 0.6 * s[-1])


# -- policy files -----------------------------------------------------------

def policy_to_dict(policy):
    if isinstance(policy, MlpPolicy):
        return {"kind": "mlp", **policy.to_dict()}
    if isinstance(policy, LinearGaussianPolicy):
        return {
            "kind": "linear-gaussian", "mode": policy.mode, "augmented": policy.augmented,
            "full_dim": policy.full_dim,
            "action_rows": None if policy.action_rows is None else [int(r) for r in policy.action_rows],
            "shapes": {"K": list(policy.K.shape), "C": list(policy.C.shape)},
            **{name: getattr(policy, name).tolist() for name in ("K", "k", "C", "x_ref", "u_ref")},
        }
    raise TypeError(f"cannot serialize {type(policy).__name__}")


def policy_from_dict(d):
    kind = d.get("kind")
    if kind == "mlp":
        return MlpPolicy.from_dict(d)
    if kind == "linear-gaussian":
        arrays = {name: np.array(d[name], dtype=float) for name in ("K", "k", "C", "x_ref", "u_ref")}
        if list(arrays["K"].shape) != d["shapes"]["K"] or list(arrays["C"].shape) != d["shapes"]["C"]:
            raise ValueError("stored arrays do not match their recorded shapes")
        rows = None if d["action_rows"] is None else np.array(d["action_rows"])
        return LinearGaussianPolicy(**arrays, action_rows=rows, full_dim=d["full_dim"], mode=d["mode"],
                                    augmented=d["augmented"])
    raise ValueError(f"unknown policy kind {kind!r}")


def save_policy(path, policy):
    with open(path, "w") as fh:
        json.dump(policy_to_dict(policy), fh)


def load_policy(path):
    with open(path) as fh:
        return policy_from_dict(json.load(fh))


def write_curve_csv(path, rows, header):
    """Append rows to a training-curve CSV, writing the header for a new file."""
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(header)
        w.writerows(rows)
