import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fame.dynamics import JointState, gravity_torques, static_torques_with_wrenches, wrist_jacobian
from fame.errors import DimensionError
from fame.estimation import estimate_both, estimate_hand_force, pseudo_inverse_solve
from fame.model import parse_model

from conftest import random_chain_data, random_pose


def oracle_state(model, q, F_L, F_R):
    tau = static_torques_with_wrenches(model, q, F_L, F_R)
    return JointState(q, np.zeros(model.n), tau)


def mirror(model, q):
    """Reflect a configuration through the sagittal (x-z) plane."""
    out = np.empty_like(q)
    for i, name in enumerate(model.joint_names):
        other = name.replace("left_", "@").replace("right_", "left_").replace("@", "right_")
        k = model.joint_names.index(other)
        sign = 1.0 if abs(model.joints[i].axis[1]) == 1.0 else -1.0
        out[k] = sign * q[i]
    return out


def full_rank_pose(model, rng):
    while True:
        q = random_pose(model, rng)
        ok = True
        for side in ("left", "right"):
            s = np.linalg.svd(wrist_jacobian(model, q, side), compute_uv=False)
            ok &= s[2] > 1e-2 * s[0]
        if ok:
            return q


def test_unloaded_arm_gives_zero(model):
    q = random_pose(model, np.random.default_rng(0))
    est = estimate_hand_force(model, JointState(q, np.zeros(model.n), gravity_torques(model, q)), "left")
    assert np.array_equal(est.force, np.zeros(3))
    assert est.residual_norm == 0.0
    assert not est.degenerate


def test_round_trip_worked_example(model):
    q = full_rank_pose(model, np.random.default_rng(1))
    est = estimate_hand_force(model, oracle_state(model, q, [5, -3, 10], [0, 0, 0]), "left")
    assert np.allclose(est.force, [5, -3, 10], atol=1e-6)
    assert est.rank == 3
    assert est.residual_norm < 1e-9


def test_diagnostics_are_consistent(model):
    q = full_rank_pose(model, np.random.default_rng(2))
    est = estimate_hand_force(model, oracle_state(model, q, [1, 2, 3], [0, 0, 0]), "right")
    s = np.linalg.svd(wrist_jacobian(model, q, "right"), compute_uv=False)
    assert np.allclose(est.singular_values, s)
    assert np.all(np.diff(est.singular_values) <= 0)
    assert est.condition_number == pytest.approx(s[0] / s[2])
    d = est.to_dict()
    assert set(d) == {"force", "singular_values", "condition_number", "rank", "residual_norm", "degenerate"}


def test_rank_two_pose_returns_min_norm_projection(model):
    q = np.zeros(model.n)  # pitch axes parallel, arm straight down
    J = wrist_jacobian(model, q, "left")
    U, s, Vt = np.linalg.svd(J)
    assert s[2] < 1e-9 * s[0]
    null_dir = U[:, 2]  # force direction with J^T f = 0
    F = np.array([4.0, -2.0, 6.0]) + 5.0 * null_dir
    est = estimate_hand_force(model, oracle_state(model, q, F, np.zeros(3)), "left")
    expected = U[:, :2] @ (U[:, :2].T @ F)
    assert est.rank == 2
    assert np.allclose(est.force, expected, atol=1e-9)
    assert abs(est.force @ null_dir) < 1e-9
    # the null component produces no torque, so oracle torques leave no residual
    assert est.residual_norm < 1e-9


def test_residual_positive_for_torque_outside_jacobian_range(model):
    q = full_rank_pose(model, np.random.default_rng(3))
    state = oracle_state(model, q, [2, 0, 1], np.zeros(3))
    tau = state.tau.copy()
    tau[model.subchain("left_arm")] += np.random.default_rng(4).normal(size=7)
    est = estimate_hand_force(model, JointState(q, state.qd, tau), "left")
    assert est.residual_norm > 1e-3


def test_each_arm_uses_only_its_own_torques(model):
    rng = np.random.default_rng(5)
    q = full_rank_pose(model, rng)
    FL = np.array([3.0, 1.0, -7.0])
    base = estimate_hand_force(model, oracle_state(model, q, FL, np.zeros(3)), "left").force
    for _ in range(5):
        FR = rng.normal(size=3) * 20
        left, right = estimate_both(model, oracle_state(model, q, FL, FR))
        assert np.allclose(left.force, base, atol=1e-9)
        assert np.allclose(right.force, FR, atol=1e-6)
    # torso and leg torques are ignored
    state = oracle_state(model, q, FL, np.zeros(3))
    tau = state.tau.copy()
    tau[model.subchain("lower_body")] += 50.0
    tau[0] += 10.0
    assert np.allclose(estimate_hand_force(model, JointState(q, state.qd, tau), "left").force, base)


def test_mirror_symmetry(model):
    rng = np.random.default_rng(6)
    for _ in range(5):
        q = full_rank_pose(model, rng)
        qm = mirror(model, q)
        F = rng.normal(size=3) * 10
        Fm = F * np.array([1, -1, 1])
        left, _ = estimate_both(model, oracle_state(model, q, F, np.zeros(3)))
        _, right = estimate_both(model, oracle_state(model, qm, np.zeros(3), Fm))
        assert np.allclose(right.force, left.force * np.array([1, -1, 1]), atol=1e-6)
        # the bundled model is itself mirror-symmetric
        assert np.allclose(gravity_torques(model, qm), mirror(model, gravity_torques(model, q)), atol=1e-9)


def test_massless_zero_torques_give_zero_forces():
    data = random_chain_data(1)
    for l in data["links"]:
        l["mass"] = 0.0
    m = parse_model(data)
    q = np.random.default_rng(0).uniform(-2, 2, m.n)
    est = estimate_hand_force(m, JointState(q, np.zeros(m.n), np.zeros(m.n)), "left")
    assert np.array_equal(est.force, np.zeros(3))


def test_fully_singular_jacobian_is_degenerate_not_error():
    # wrist point on every joint axis: J = 0
    data = random_chain_data(2, n=1)
    data["joints"][0]["axis"] = [0.0, 0.0, 1.0]
    data["joints"][0]["origin_xyz"] = [0.0, 0.0, 0.0]
    data["wrists"][0]["origin_xyz"] = [0.0, 0.0, 0.3]
    m = parse_model(data)
    est = estimate_hand_force(m, JointState([0.3], [0.0], [5.0]), "left")
    assert est.degenerate
    assert est.rank == 0
    assert np.array_equal(est.force, np.zeros(3))
    assert est.condition_number == float("inf")


def test_estimator_is_linear(model):
    rng = np.random.default_rng(7)
    q = random_pose(model, rng)
    g = gravity_torques(model, q)
    d1, d2 = rng.normal(size=(2, model.n))
    f = lambda d: estimate_hand_force(model, JointState(q, np.zeros(model.n), g + d), "left").force
    assert np.allclose(f(2 * d1 - 3 * d2), 2 * f(d1) - 3 * f(d2), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_damping_shrinks_estimate(model, seed, l1, l2):
    rng = np.random.default_rng(seed)
    q = random_pose(model, rng)
    state = oracle_state(model, q, rng.normal(size=3) * 10, np.zeros(3))
    lo, hi = sorted((l1, l2))
    a = np.linalg.norm(estimate_hand_force(model, state, "left", damping=lo).force)
    b = np.linalg.norm(estimate_hand_force(model, state, "left", damping=hi).force)
    assert b <= a + 1e-12


def test_cutoff_drops_small_singular_values():
    A = np.diag([1.0, 1e-8, 0.0])
    x, s, rank = pseudo_inverse_solve(A, np.array([1.0, 1.0, 1.0]), cutoff=1e-6)
    assert rank == 1
    assert np.array_equal(x, [1.0, 0.0, 0.0])
    x, _, rank = pseudo_inverse_solve(A, np.array([1.0, 1.0, 1.0]), cutoff=1e-9)
    assert rank == 2
    assert x[1] == pytest.approx(1e8)


def test_bad_parameters_and_dimensions(model):
    state = JointState(np.zeros(model.n), np.zeros(model.n), np.zeros(model.n))
    with pytest.raises(ValueError):
        estimate_hand_force(model, state, "left", damping=-1.0)
    with pytest.raises(ValueError):
        estimate_hand_force(model, state, "left", cutoff=float("nan"))
    with pytest.raises(DimensionError):
        estimate_hand_force(model, JointState(np.zeros(3), np.zeros(3), np.zeros(3)), "left")
