"""End-to-end acceptance checks A1-A10.

Each test prints one ``A<n> PASS|FAIL`` line with the measured values, and
the session prints them all again in a summary section.  The slow protocols
(ablation matrix, generalization study) come from session fixtures in
conftest.py and take several minutes together.
"""
import time

import numpy as np

from forcerl import contact_sim as cs
from forcerl import manip_model as mm
from forcerl.harness import experiments as ex
from forcerl.harness import logs, selfcheck
from forcerl.ilqg import InsertionSystem, fit_dynamics, optimize


def test_a1_riccati_equivalence(report):
    start = time.perf_counter()
    scalar = selfcheck.check_riccati_scalar()
    random = selfcheck.check_riccati_random()
    elapsed = time.perf_counter() - start
    ok = scalar.passed and random.passed and elapsed < 1.0
    report("A1", ok, f"scalar K gap {scalar.error:.1e}, random 4x2 gap {random.error:.1e} "
                     f"(tol 1e-8), {elapsed * 1e3:.0f} ms (limit 1 s)")
    assert ok


def test_a2_entropy_law_on_fitted_models(report, base_config):
    worst = []

    def check(rec, samples, policy, result):
        eye = np.eye(result.Quu.shape[1])
        worst.append(max(np.max(np.abs(result.policy.C[t] @ result.Quu[t] - eye))
                         for t in range(len(result.Quu))))

    # every fitted model of a short insertion run, plus the synthetic fixture
    cfg = base_config.with_(ilqg={"iterations": 2})
    env = ex.build_env(cfg)
    optimize(InsertionSystem(env), cfg.ilqg_config(), ex.build_cost(cfg, env), seed=0, callback=check)
    synthetic = selfcheck.check_entropy_law()
    err = max(max(worst), synthetic.error)
    ok = err <= 1e-8
    report("A2", ok, f"max |C Quu - I| = {err:.1e} over {len(worst)} insertion fits and one synthetic fit (tol 1e-8)")
    assert ok


def test_a3_control_law_identities(report):
    checks = [selfcheck.check_gravity_equilibrium(), selfcheck.check_projector(), selfcheck.check_pfaffian()]
    ok = all(c.passed for c in checks)
    report("A3", ok, ", ".join(f"{c.name} {c.error:.1e} (tol {c.tol:g})" for c in checks))
    assert ok


def test_a4_derivative_correctness(report):
    cost = selfcheck.check_cost_gradient(seed=1, probes=100)
    late = selfcheck.check_distill_gradient(seed=2, probes=100)
    rng = np.random.default_rng(3)
    first = max(selfcheck.distill_gradient_error(rng, fusion=0) for _ in range(100))
    ok = cost.passed and late.passed and first <= 1e-4
    report("A4", ok, f"cost expansion {cost.error:.1e}, distillation late fusion {late.error:.1e}, "
                     f"first layer {first:.1e} (100 probes each, tol 1e-4 relative)")
    assert ok


def test_a5_ablation_trend(report, ablation):
    op, tq, kin = (ablation.cell(n) for n in ("operational", "torque", "kinematics"))
    ok = not ablation.errored and op.successes >= 4 and tq.successes <= 1 and kin.successes == 0
    others = ", ".join(f"{c.name} {c.successes}/{c.episodes}" for c in ablation.cells
                       if c.name not in ("operational", "torque", "kinematics"))
    report("A5", ok, f"operational {op.successes}/5 (need >=4), torque {tq.successes}/5 (need <=1), "
                     f"kinematics {kin.successes}/5 (need 0); also {others}")
    assert ok


def test_a6_generalization_trend(report, generalization):
    base_shifts = (2, 4, 10)
    late = [generalization.cell(f"mlp-late-fusion@{m}x") for m in base_shifts]
    first = [generalization.cell(f"mlp-first-layer@{m}x") for m in base_shifts]
    ilqg = [generalization.cell(f"ilqg@{m}x") for m in base_shifts]
    info = generalization.provenance["distill"]
    late_ok = not info["mlp-late-fusion"]["aborted"]
    ordering = all(l.successes >= f.successes for l, f in zip(late, first))
    floor = all(f.successes <= 2 for f in first)
    ok = late_ok and ordering and floor and not generalization.errored
    fmt = lambda cells: "{" + ",".join(str(c.successes) for c in cells) + "}/10"
    report("A6", ok, f"shifts {base_shifts}x gap: late fusion {fmt(late)}, first layer {fmt(first)}"
                     f"{' (aborted)' if info['mlp-first-layer']['aborted'] else ''}, iLQG {fmt(ilqg)}; "
                     f"late>=first everywhere: {ordering}; first<=2 everywhere: {floor}; "
                     f"late fusion trained without abort: {late_ok}")
    assert ok


def test_a7_dynamics_fit_recovery(report):
    rng = np.random.default_rng(0)
    dx, du, N, T = 6, 3, 20, 20
    A = np.eye(dx) + 0.1 * rng.standard_normal((dx, dx))
    A /= max(1.0, np.max(np.abs(np.linalg.eigvals(A))))
    B = rng.standard_normal((dx, du))
    X = np.empty((N, T, dx))
    U = rng.standard_normal((N, T, du))
    X[:, 0] = rng.standard_normal((N, dx))
    for t in range(T - 1):
        X[:, t + 1] = X[:, t] @ A.T + U[:, t] @ B.T + 0.01 * rng.standard_normal((N, dx))
    dyn = fit_dynamics(X, U)
    ea = max(np.linalg.norm(dyn.A[t] - A) / np.linalg.norm(A) for t in range(T - 1))
    eb = max(np.linalg.norm(dyn.B[t] - B) / np.linalg.norm(B) for t in range(T - 1))
    ok = ea <= 5e-2 and eb <= 5e-2
    report("A7", ok, f"worst-step relative Frobenius error A {ea:.1e}, B {eb:.1e} (tol 5e-2)")
    assert ok


def test_a8_sensor_statistics(report):
    env = cs.make_env()
    rng = np.random.default_rng(0)
    s = mm.JointState.at_rest(env.q_start)  # 3 cm above the surface: free space
    readings = np.array([cs.sense(env, s, rng).f_t for _ in range(10_000)])
    std = readings.std(axis=0)
    rel = np.abs(std / env.noise.sigma - 1)
    ok = bool(np.all(rel <= 0.05))
    report("A8", ok, f"empirical std {np.round(std, 3).tolist()} vs {env.noise.sigma.tolist()}, "
                     f"worst relative deviation {rel.max():.3f} (tol 0.05)")
    assert ok


def test_a9_determinism(report, ablation, base_config):
    seeds = dict(zip([c[0] for c in ex.ABLATION_CELLS], ex.child_seeds(base_config.seed, len(ex.ABLATION_CELLS))))
    same = []
    for name, mode in (("operational", "operational"), ("kinematics", "kinematics")):
        cfg = base_config.with_(mode=mode)
        again, _ = ex.run_cell(cfg, name, seeds[name])
        a = ex.ResultSummary([again], {}).deterministic_dict()["cells"][0]
        b = ex.ResultSummary([ablation.cell(name)], {}).deterministic_dict()["cells"][0]
        same.append(a == b)
    ok = all(same)
    report("A9", ok, f"rerun of operational and kinematics cells identical to the matrix run: {same}")
    assert ok


def test_a10_constraint_diagnostic(report, ablation, base_config):
    trained = ablation.artifacts["operational"]
    seeds = ex.child_seeds(12345, 5)
    trajs, _ = ex.evaluate_ilqg(trained.system, trained.policy, trained.cost, seeds)
    ratio, steps = ex.constraint_ratio(trained.env, trajs)
    ok = ratio < 0.10
    report("A10", ok, f"mean |A V| / mean |V| over {steps} contact steps = {ratio:.3f} (need < 0.10); "
                      f"{sum(t.success for t in trajs)}/5 of these rollouts succeed")
    assert ok


# -- supporting end-to-end checks -------------------------------------------

def test_late_fusion_fits_no_worse_than_first_layer(generalization):
    info = generalization.provenance["distill"]
    late, first = info["mlp-late-fusion"], info["mlp-first-layer"]
    print(f"distillation loss: late {late['initial_loss']:.4g} -> {late['final_loss']:.4g}, "
          f"first {first['initial_loss']:.4g} -> {first['final_loss']:.4g}")
    assert first["aborted"] or late["final_loss"] <= first["final_loss"]


def test_late_fusion_succeeds_at_nominal_goal(generalization, base_config):
    teacher = generalization.artifacts["ilqg"]
    net = generalization.artifacts["mlp-late-fusion"]
    trajs, _ = ex.evaluate_mlp(teacher.env, net, teacher.cost, ex.child_seeds(777, 5),
                               base_config.distill["alpha_f"])
    wins = sum(t.success for t in trajs)
    print(f"late fusion at the nominal goal: {wins}/5")
    assert wins >= 4


def test_teacher_std_phase_pattern(ablation):
    policy = ablation.artifacts["operational"].policy
    std = logs.policy_std(policy, policy.horizon)[:, [0, 1, 5]]
    s = std.mean(axis=1)
    print(f"policy std: first {s[0]:.3f}, interior minimum {s[1:-1].min():.3f}, last {s[-1]:.3f}")
    assert logs.std_phase_pattern(std)
