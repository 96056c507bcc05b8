"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line before asserting."""

import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from test_policy import LAYER_SIZES, random_frame
from test_reward import GOLDEN_RAW, PUBLISHED_WEIGHTS, golden_input, tiny_context
from test_sampling import DR_RANGES

from fame.cli import main
from fame.dynamics import (
    JointState,
    gravity_torques,
    potential_energy,
    static_torques_with_wrenches,
    wrist_jacobian,
    wrist_position,
)
from fame.estimation import estimate_hand_force
from fame.harness import SweepSpec, quasi_static_feasible, run_sweep, standing_pose, success_fractions, support_polygon
from fame.model import PRESET_IDS, preset
from fame.policy import (
    EXPECTED_SHAPES,
    WeightShapeError,
    actor_forward,
    build_actor_obs,
    build_critic_obs,
    load_weights,
    random_bundle,
    save_weights,
)
from fame.reward import DEFAULT_WEIGHTS, evaluate, neutral_input
from fame.sampling import (
    DomainRandRanges,
    ForceSampleConfig,
    RngStream,
    ratio_cdf,
    ratio_from_uniform,
    sample_domain_randomization,
    sample_hand_force,
    sample_ratio,
    sample_ub_targets,
    target_interval,
)


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def random_pose(model, rng, margin=0.05):
    span = model.q_max - model.q_min
    return rng.uniform(model.q_min + margin * span, model.q_max - margin * span)


def test_criterion_01_estimation_round_trip(model, report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, poses = 0.0, 0
    while poses < 1000:
        q = random_pose(model, rng)
        s = [np.linalg.svd(wrist_jacobian(model, q, side), compute_uv=False) for side in ("left", "right")]
        if min(v[2] / v[0] for v in s) < 1e-2:
            continue  # criterion is stated over full-rank poses
        F = rng.normal(size=(2, 3))
        F *= rng.uniform(0.5, 30.0, size=(2, 1)) / np.linalg.norm(F, axis=1, keepdims=True)
        state = JointState(q, np.zeros(model.n), static_torques_with_wrenches(model, q, F[0], F[1]))
        for side, f in zip(("left", "right"), F):
            est = estimate_hand_force(model, state, side, damping=0.0)
            worst = max(worst, np.linalg.norm(est.force - f) / np.linalg.norm(f))
        poses += 1
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-6 and dt < 10.0, f"estimation round trip: {poses} poses, max rel err {worst:.2e}, {dt:.2f}s")


def test_criterion_02_dynamics_correctness(model, report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    h_g, h_j = 1e-6, 1e-5
    Q = np.stack([random_pose(model, rng) for _ in range(200)])
    eye = np.eye(model.n)
    # central differences for every pose and joint, evaluated as one batch
    plus = Q[:, None, :] + h_g * eye
    minus = Q[:, None, :] - h_g * eye
    fd = (potential_energy(model, plus) - potential_energy(model, minus)) / (2 * h_g)
    g_err = float(np.max(np.abs(gravity_torques(model, Q) - fd)))
    j_err = 0.0
    for side in ("left", "right"):
        arm = model.subchain(model.wrist(side).subchain)
        step = h_j * eye[arm]
        d = wrist_position(model, Q[:, None, :] + step, side) - wrist_position(model, Q[:, None, :] - step, side)
        fd_J = np.swapaxes(d / (2 * h_j), 1, 2)
        j_err = max(j_err, float(np.max(np.abs(wrist_jacobian(model, Q, side) - fd_J))))
    dt = time.perf_counter() - t0
    ok = g_err <= 1e-5 and j_err <= 1e-6 and dt < 10.0
    report(2, ok, f"dynamics on 200 poses: gravity err {g_err:.2e}, jacobian err {j_err:.2e}, {dt:.2f}s")


def test_criterion_03_curriculum_sampler_law(report):
    t0 = time.perf_counter()
    worst = 0.0
    for k, rho in enumerate((0.0, 0.25, 0.5, 0.9)):
        x = sample_ratio(rho, 20.0, RngStream(300 + k), size=100_000)
        worst = max(worst, stats.kstest(x, lambda t, r=rho: ratio_cdf(t, r, 20.0)).statistic)
    point = float(ratio_from_uniform(0.5, 0.0, 20.0))
    dt = time.perf_counter() - t0
    ok = worst < 0.01 and abs(point - 0.0346574) <= 1e-6 and dt < 5.0
    report(3, ok, f"ratio sampler: max KS {worst:.4f}, point check {point:.7f}, {dt:.2f}s")


def test_criterion_04_force_isotropy(report):
    cfg = ForceSampleConfig(0.0, 30.0)
    F = sample_hand_force(cfg, RngStream(404), size=100_000)
    octant = (F > 0).astype(int) @ np.array([1, 2, 4])
    p = stats.chisquare(np.bincount(octant, minlength=8)).pvalue
    r = np.linalg.norm(F, axis=1)
    ks = stats.kstest(r, stats.uniform(cfg.r_min, cfg.r_max - cfg.r_min).cdf).statistic
    report(4, p > 0.01 and ks < 0.01, f"force sampler: octant chi2 p={p:.3f}, magnitude KS {ks:.4f}")


def test_criterion_05_reward_golden(report):
    out = evaluate(golden_input(), tiny_context())
    worst = max(abs(out[name][1] - GOLDEN_RAW[name]) for name, _ in PUBLISHED_WEIGHTS)
    worst = max(worst, *(abs(out[name][3] - GOLDEN_RAW[name] * w) for name, w in PUBLISHED_WEIGHTS))
    ctx = tiny_context()
    height = evaluate(neutral_input(ctx, h_cmd=1.0, h_base=0.9), ctx)["height_tracking"][3]
    weights_exact = list(DEFAULT_WEIGHTS.items()) == PUBLISHED_WEIGHTS
    ok = worst <= 1e-9 and abs(height - 2.010960) <= 1e-6 and weights_exact
    report(5, ok, f"reward golden: {len(PUBLISHED_WEIGHTS)} terms, max err {worst:.1e}, height {height:.6f}, "
                  f"weights exact={weights_exact}")  # fmt: skip


def test_criterion_06_shape_contract(tmp_path, report):
    rng = np.random.default_rng(6)
    frames = [random_frame(rng) for _ in range(3)]
    dims = (frames[0].vector().size, build_actor_obs(frames, [np.zeros(8)] * 3).size,
            build_critic_obs(frames[0], np.zeros(8), np.zeros(3)).size)  # fmt: skip
    listing_names = {f"{p}.{2 * k}.{kind}" for p, s in LAYER_SIZES.items() for k in range(len(s) - 1)
                     for kind in ("weight", "bias")} | {"him.proto.weight"}  # fmt: skip
    rejected = 0
    for name, shape in EXPECTED_SHAPES.items():
        m = tmp_path / "w.manifest"
        save_weights(random_bundle(0), m)
        good = "x".join(map(str, shape))
        bad = "x".join(map(str, (shape[0] + 1,) + shape[1:]))
        m.write_text(m.read_text().replace(f"{name} {good} ", f"{name} {bad} "))
        blob = m.with_suffix(".bin")
        blob.write_bytes(blob.read_bytes() + bytes(4 * 1024))  # keep offsets in range so shape is what fails
        try:
            load_weights(m)
        except WeightShapeError:
            rejected += 1
    action = actor_forward(random_bundle(1), rng.normal(size=252))
    ok = dims == (76, 252, 87) and set(EXPECTED_SHAPES) == listing_names and rejected == len(EXPECTED_SHAPES)
    ok &= action.shape == (12,)
    report(6, ok, f"shapes: obs dims {dims}, {rejected}/{len(EXPECTED_SHAPES)} bad tensors rejected, "
                  f"action {action.shape}")  # fmt: skip


def test_criterion_07_domain_randomization(report):
    assert all(getattr(DomainRandRanges(), k) == v for k, v in DR_RANGES.items())
    rng = RngStream(707)
    outside = []
    friction = np.empty(10_000)
    for i in range(10_000):
        d = sample_domain_randomization(rng)
        friction[i] = d.friction
        for name, (lo, hi) in DR_RANGES.items():
            v = np.asarray(getattr(d, name))
            if not (np.all(v >= lo) and np.all(v <= hi)):
                outside.append(name)
    mean = friction.mean()
    ok = not outside and abs(mean - 1.55) <= 0.02
    report(7, ok, f"domain randomization: 10000 draws, {len(outside)} out of range, friction mean {mean:.4f}")


def test_criterion_08_cli_determinism(tmp_path, capsys, monkeypatch, report):
    monkeypatch.delenv("FAME_SEED", raising=False)

    def run(*argv):
        code = main([str(a) for a in argv])
        out = capsys.readouterr().out
        assert code == 0, argv
        return out

    mismatches = []
    for tag, threads in (("a", 1), ("b", 1), ("c", 4)):
        d = tmp_path / tag
        run("sweep", "--grid", "5x5x3", "--seed", 11, "--threads", threads, "--out", d)
        (d / "sample.csv").write_text(run("sample", "domain", "--n", 200, "--seed", 11, "--threads", threads))
        run("sample", "force", "--n", 200, "--seed", 11, "--threads", threads, "--out", d / "force.csv")
        run("episode", "--weights", "random:5", "--horizon", 2, "--episodes", 2, "--forces", "random",
            "--ub-mode", "curriculum", "--seed", 11, "--threads", threads, "--out", d / "episode.csv")  # fmt: skip
    names = ("sweep.csv", "sweep.json", "sweep.svg", "sample.csv", "force.csv", "episode.csv")
    for name in names:
        ref = (tmp_path / "a" / name).read_bytes()
        for tag in ("b", "c"):
            if (tmp_path / tag / name).read_bytes() != ref:
                mismatches.append(f"{tag}/{name}")
    report(8, not mismatches, f"CLI determinism: {len(names)} outputs x 3 runs (threads 1,1,4), "
                              f"mismatches {mismatches or 'none'}")  # fmt: skip


def test_criterion_09_envelope_sanity(model, report):
    t0 = time.perf_counter()
    zero = SweepSpec(config_ids=PRESET_IDS, fx_range=(0, 0), fy_range=(0, 0), fz_range=(0, 0), grid=(9, 9, 5))
    zero_ok = success_fractions(run_sweep(zero, model, threads=4)) == {c: 1.0 for c in PRESET_IDS}

    spec = SweepSpec(config_ids=PRESET_IDS, grid=(9, 9, 5), seed=9)
    full = run_sweep(spec, model, threads=4)
    small = run_sweep(replace(spec, polygon_scale=0.8), model, threads=4)
    inclusion_ok = all(a.success or not b.success for c in PRESET_IDS for a, b in zip(full[c], small[c]))
    shrank = sum(success_fractions(small).values()) < sum(success_fractions(full).values())

    alphas = np.linspace(0.0, 1.0, 11)
    scaling_ok, checked = True, 0
    for cid in PRESET_IDS:
        feasible = [c for c in full[cid] if c.success]
        poses = standing_pose(model, preset(cid).q_ub, np.array([c.h_cmd for c in feasible]))
        for cell, q in zip(feasible, poses):
            poly = support_polygon(model, q)
            for a in alphas:
                scaling_ok &= quasi_static_feasible(model, q, a * cell.F_L, a * cell.F_R, poly).success
            checked += 1
    dt = time.perf_counter() - t0
    ok = zero_ok and inclusion_ok and shrank and scaling_ok and checked > 0 and dt < 60.0
    report(9, ok, f"envelope: zero-force all feasible={zero_ok}, shrink inclusion={inclusion_ok and shrank}, "
                  f"alpha scaling on {checked} cells={scaling_ok}, {dt:.2f}s")  # fmt: skip


def test_criterion_10_target_sampler(model, report):
    ub = model.subchain("upper_body")
    lo_lim, hi_lim = model.q_min[ub], model.q_max[ub]
    inside = exact = True
    for k, cid in enumerate(PRESET_IDS):
        q0 = preset(cid).q_ub
        for rho in (0.0, 0.5, 1.0):
            out = sample_ub_targets(model, q0, rho, RngStream(1000 + 10 * k + int(rho * 2)), size=100_000)
            lo, hi = target_interval(q0, lo_lim, hi_lim, rho)
            inside &= bool(np.all(out >= lo_lim) and np.all(out <= hi_lim))
            inside &= bool(np.all(out >= lo) and np.all(out <= hi))
            if rho == 0.0:
                exact &= bool(np.array_equal(out, np.broadcast_to(q0, out.shape)))
    report(10, inside and exact, f"target sampler: 5 presets x 3 ratios x 1e5 draws inside limits={inside}, "
                                 f"rho'=0 exact={exact}")  # fmt: skip


def test_acceptance_covers_every_criterion():
    names = [n for n in globals() if n.startswith("test_criterion_")]
    assert sorted(int(n.split("_")[2]) for n in names) == list(range(1, 11))
