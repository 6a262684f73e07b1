import numpy as np
import pytest

from forcerl import contact_sim as cs
from forcerl import mdgps as md
from forcerl.ilqg import IlqgConfig, InsertionSystem, initial_policy


def dataset(rng, n=64, sdim=4, adim=2, fscale=1.0):
    X = rng.standard_normal((n, sdim))
    F = fscale * rng.standard_normal((n, 6))
    mu = rng.standard_normal((n, adim))
    L = rng.standard_normal((n, adim, adim))
    P = L @ np.swapaxes(L, 1, 2) + 0.5 * np.eye(adim)
    return md.DistillDataset(X, F, mu, P)


# ---------------------------------------------------------------- filter

def test_lpf_step_response():
    filt = md.LowPassFilter(0.2)
    filt.reset(np.zeros(6))
    out = [md.lpf_step(filt, np.ones(6))[0] for _ in range(3)]
    np.testing.assert_allclose(out, [0.2, 0.36, 0.488], atol=1e-15)


def test_lpf_dc_gain_and_passthrough():
    c = np.array([1.0, -2.0, 0.5, 0, 3, 4])
    filt = md.LowPassFilter(0.2)
    for _ in range(50):
        # 0.2 c + 0.8 c can round by one ulp
        np.testing.assert_allclose(md.lpf_step(filt, c), c, rtol=1e-15, atol=0)
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((20, 6))
    np.testing.assert_array_equal(md.filter_series(raw, 1.0), raw)


def test_lpf_output_within_input_hull():
    rng = np.random.default_rng(1)
    raw = rng.uniform(-3, 5, (200, 6))
    out = md.filter_series(raw, 0.2)
    assert np.all(out <= raw.max(axis=0) + 1e-12) and np.all(out >= raw.min(axis=0) - 1e-12)


def test_lpf_validation():
    with pytest.raises(ValueError):
        md.LowPassFilter(0.0)
    with pytest.raises(ValueError):
        md.LowPassFilter(1.5)


# ---------------------------------------------------------------- network

def test_zero_weight_network_outputs_head_bias():
    net = md.MlpPolicy(5, 6, hidden=(8, 8))
    for W in net.weights:
        W[...] = 0.0
    net.biases[-1][...] = np.arange(6.0)
    rng = np.random.default_rng(2)
    for _ in range(3):
        mean, cov = net.forward(rng.standard_normal(5), rng.standard_normal(6))
        np.testing.assert_array_equal(mean, np.arange(6.0))
    np.testing.assert_array_equal(cov, np.eye(6))


@pytest.mark.parametrize("fusion", [None, 1, 0])
def test_fusion_locality(fusion):
    net = md.MlpPolicy(5, 6, hidden=(8, 8, 8), fusion=fusion, seed=3)
    rng = np.random.default_rng(3)
    x = rng.standard_normal(5)
    a = net.activations(x, np.zeros(6))
    b = net.activations(x, rng.standard_normal(6))
    for i in range(net.fusion):
        np.testing.assert_array_equal(a[i], b[i])
    # at the fusion layer only the appended F/T slots differ
    np.testing.assert_array_equal(a[net.fusion][:-6], b[net.fusion][:-6])
    assert np.any(a[net.fusion][-6:] != b[net.fusion][-6:])


def test_late_fusion_is_second_to_last_layer():
    net = md.MlpPolicy(5, 6, hidden=(64, 64))
    assert net.fusion == 1 and net.n_layers == 3
    assert net.weights[1].shape == (64, 64 + 6)
    first = md.MlpPolicy(5, 6, hidden=(64, 64), fusion=0)
    assert first.weights[0].shape == (64, 5 + 6)
    with pytest.raises(ValueError):
        md.MlpPolicy(5, 6, hidden=(64, 64), fusion=2)


def test_forward_dimension_mismatch():
    net = md.MlpPolicy(5, 6)
    with pytest.raises(ValueError):
        net.forward(np.zeros(4), np.zeros(6))
    with pytest.raises(ValueError):
        net.forward(np.zeros(5), np.zeros(3))


@pytest.mark.parametrize("fusion", [None, 0])
def test_input_jacobian_matches_finite_differences(fusion):
    net = md.MlpPolicy(4, 3, hidden=(6, 5), fusion=fusion, seed=4)
    for W in net.weights:
        W *= 3.0
    net.normalizer = md.Normalizer(np.array([0.1, -0.2, 0.0, 0.3]), np.array([1.0, 2.0, 0.5, 1.5]))
    rng = np.random.default_rng(4)
    x, f = rng.standard_normal(4), rng.standard_normal(6)
    Jx, Jf = net.input_jacobian(x, f)
    h = 1e-6
    fx = np.array([(net.forward(x + h * e, f)[0] - net.forward(x - h * e, f)[0]) / (2 * h) for e in np.eye(4)]).T
    ff = np.array([(net.forward(x, f + h * e)[0] - net.forward(x, f - h * e)[0]) / (2 * h) for e in np.eye(6)]).T
    assert np.max(np.abs(Jx - fx)) <= 1e-4 * np.max(np.abs(fx))
    assert np.max(np.abs(Jf - ff)) <= 1e-4 * np.max(np.abs(ff))


def test_loss_gradient_on_ten_parameter_probe():
    # one hidden unit fed by 1 state + 6 F/T inputs, then a scalar head: 8 + 2 parameters
    net = md.MlpPolicy(1, 1, hidden=(1,), fusion=0, seed=5)
    rng = np.random.default_rng(5)
    net.set_params(rng.standard_normal(10))
    assert net.get_params().size == 10
    d = dataset(rng, n=16, sdim=1, adim=1)
    _, g = md.kl_loss(net, d.X, d.F, d.mu, d.P)
    theta = net.get_params()
    h = 1e-6
    fd = np.zeros(10)
    for i in range(10):
        for sgn in (1, -1):
            th = theta.copy()
            th[i] += sgn * h
            net.set_params(th)
            fd[i] += sgn * md.kl_loss(net, d.X, d.F, d.mu, d.P)[0] / (2 * h)
    net.set_params(theta)
    assert np.max(np.abs(g - fd)) <= 1e-4 * np.max(np.abs(fd))


def test_loss_invariant_to_shared_bias_shift():
    rng = np.random.default_rng(6)
    net = md.MlpPolicy(4, 2, hidden=(5, 5), seed=6)
    d = dataset(rng, sdim=4, adim=2)
    before, _ = md.kl_loss(net, d.X, d.F, d.mu, d.P)
    shift = np.array([3.0, -7.0])
    net.biases[-1] += shift
    after, _ = md.kl_loss(net, d.X, d.F, d.mu + shift, d.P)
    assert after == pytest.approx(before, rel=1e-12)


def test_loss_matches_direct_kl_mean_term():
    rng = np.random.default_rng(7)
    net = md.MlpPolicy(4, 2, hidden=(5,), seed=7)
    d = dataset(rng, n=5, sdim=4, adim=2)
    loss, _ = md.kl_loss(net, d.X, d.F, d.mu, d.P)
    direct = 0.0
    for i in range(5):
        e = net.forward(d.X[i], d.F[i])[0] - d.mu[i]
        direct += 0.5 * e @ d.P[i] @ e
    assert loss == pytest.approx(direct / 5, rel=1e-12)


# ---------------------------------------------------------------- distillation

def test_realizable_regression():
    rng = np.random.default_rng(0)
    n = 256
    X = rng.standard_normal((n, 4))
    W = 0.3 * rng.standard_normal((2, 4))
    d = md.DistillDataset(X, np.zeros((n, 6)), X @ W.T + 0.1, np.tile(np.eye(2), (n, 1, 1)))
    res = md.distill(d, md.MlpPolicy(4, 2, hidden=(16, 16), seed=1), epochs=400, lr=5e-2, batch=32)
    assert res.final_loss < 1e-3 * res.initial_loss


def test_single_sample_interpolation():
    rng = np.random.default_rng(8)
    d = dataset(rng, n=1, sdim=4, adim=2)
    res = md.distill(d, md.MlpPolicy(4, 2, hidden=(8,), seed=8), epochs=300, lr=1e-2, batch=1,
                     fit_normalizer=False)
    assert res.final_loss < 1e-8


def test_covariance_is_inverse_mean_precision():
    rng = np.random.default_rng(9)
    d = dataset(rng, n=32, sdim=4, adim=2)
    d.P[:] = np.diag([4.0, 0.25])
    res = md.distill(d, md.MlpPolicy(4, 2, hidden=(4,), seed=9), epochs=2)
    np.testing.assert_allclose(res.policy.cov_diag, [0.25, 4.0])


def test_divergence_abort():
    rng = np.random.default_rng(10)
    d = dataset(rng, n=64, sdim=4, adim=2, fscale=50.0)
    with pytest.raises(md.DivergenceAbort) as info:
        md.distill(d, md.MlpPolicy(4, 2, hidden=(8, 8), fusion=0, seed=10), epochs=50, lr=1.0)
    assert info.value.loss > 10 * info.value.initial or not np.isfinite(info.value.loss)


def test_distillation_is_seed_deterministic():
    rng = np.random.default_rng(11)
    d = dataset(rng)
    a = md.distill(d, md.MlpPolicy(4, 2, hidden=(8,), seed=1), epochs=5, seed=3)
    b = md.distill(d, md.MlpPolicy(4, 2, hidden=(8,), seed=1), epochs=5, seed=3)
    assert a.policy.get_params().tobytes() == b.policy.get_params().tobytes()


def test_dataset_validation():
    with pytest.raises(ValueError):
        md.DistillDataset(np.zeros((0, 2)), np.zeros((0, 6)), np.zeros((0, 1)), np.zeros((0, 1, 1)))
    with pytest.raises(ValueError):
        md.DistillDataset(np.zeros((1, 2)), np.zeros((1, 6)), np.zeros((1, 2)), np.array([[[1.0, 1.0], [0.0, 1.0]]]))


def test_serialization_round_trip():
    rng = np.random.default_rng(12)
    net = md.MlpPolicy(4, 6, hidden=(7, 5), fusion=0, seed=12)
    net.normalizer = md.Normalizer(rng.standard_normal(4), rng.uniform(0.5, 2, 4))
    net.cov_diag = rng.uniform(0.1, 1, 6)
    back = md.MlpPolicy.from_dict(net.to_dict())
    x, f = rng.standard_normal(4), rng.standard_normal(6)
    assert back.forward(x, f)[0].tobytes() == net.forward(x, f)[0].tobytes()
    assert back.fusion == 0 and back.hidden == (7, 5)
    bad = net.to_dict()
    bad["layers"][0]["shape"] = [7, 5]
    bad["layers"][0]["weight"] = np.zeros((7, 5)).tolist()
    with pytest.raises(ValueError):
        md.MlpPolicy.from_dict(bad)


# ---------------------------------------------------------------- with the simulator

def test_teacher_targets_fill_inactive_channels():
    env = cs.make_env()
    teacher = initial_policy(InsertionSystem(env), IlqgConfig(horizon=env.horizon))
    x = np.zeros(teacher.dx)
    mean, P = md.teacher_targets(teacher, 0, x)
    assert mean.shape == (6,)
    np.testing.assert_array_equal(mean[[2, 3, 4]], 0.0)
    np.testing.assert_allclose(P[np.ix_([0, 1, 5], [0, 1, 5])], np.linalg.inv(teacher.C[0]))
    np.testing.assert_array_equal(np.diag(P)[[2, 3, 4]], 1.0)


def test_collect_dataset_shapes_and_clipping():
    env = cs.make_env()
    teacher = initial_policy(InsertionSystem(env), IlqgConfig(horizon=env.horizon))
    teacher.u_ref[:] = [100.0, -100.0, 10.0]  # far beyond the wrench limit
    d = md.collect_dataset(env, teacher, rollouts=2, seed=0)
    assert len(d) == 2 * env.horizon
    assert d.X.shape[1] == md.observation_dim(env)
    assert np.all(np.abs(d.mu) <= env.wrench_limit)


def test_run_policy_is_reproducible():
    env = cs.make_env()
    net = md.MlpPolicy(md.observation_dim(env), 6, hidden=(8, 8), seed=0)
    a = md.run_policy(env, net, rng=np.random.default_rng(4))
    b = md.run_policy(env, net, rng=np.random.default_rng(4))
    assert a.X.tobytes() == b.X.tobytes() and a.U.tobytes() == b.U.tobytes()


def test_free_space_actions_depend_only_on_state():
    env = cs.make_env(noise=cs.FtNoiseModel(np.zeros(6)))
    net = md.MlpPolicy(md.observation_dim(env), 6, hidden=(8, 8), seed=1)
    traj = md.run_policy(env, net, rng=np.random.default_rng(0))
    free = np.flatnonzero(np.cumsum(np.any(traj.true_wrench != 0, axis=1)) == 0)
    assert len(free) > 5
    for t in free:
        np.testing.assert_array_equal(traj.readings[t], 0.0)
        obs = np.r_[traj.X[t], cs.setpoint(env, t), t / env.horizon]
        np.testing.assert_array_equal(traj.U[t], net.forward(obs, np.zeros(6))[0])
