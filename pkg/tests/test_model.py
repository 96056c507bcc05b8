import copy

import numpy as np
import pytest

from fame.model import (
    LOWER_BODY_JOINTS,
    PRESET_IDS,
    UPPER_BODY_JOINTS,
    ModelError,
    check_within_limits,
    full_configuration,
    load_model,
    model_to_dict,
    parse_model,
    preset,
    serialize_model,
    tomllib,
)

from conftest import joint, link, pendulum_data, planar_2link_data


def test_pendulum_loads_with_one_joint(pendulum):
    assert pendulum.n == 1
    assert pendulum.joint_names == ("hinge",)
    assert pendulum.link_names == ("bob",)


def test_bundled_subchain_sizes(model):
    sizes = {k: len(v) for k, v in model.subchains.items()}
    assert sizes == {"left_arm": 7, "right_arm": 7, "upper_body": 15, "lower_body": 12}
    assert model.n == 27


def test_bundled_upper_body_order(model):
    names = tuple(model.joint_names[i] for i in model.subchain("upper_body"))
    assert names == UPPER_BODY_JOINTS
    assert names[0] == "torso"
    assert names[1] == "left_shoulder_pitch"
    assert names[8] == "right_shoulder_pitch"
    assert names[14] == "right_wrist_yaw"


def test_bundled_arm_subchains_follow_upper_body(model):
    ub = model.subchain("upper_body")
    assert list(model.subchain("left_arm")) == list(ub[1:8])
    assert list(model.subchain("right_arm")) == list(ub[8:15])


def test_bundled_lower_body_naming(model):
    names = tuple(model.joint_names[i] for i in model.subchain("lower_body"))
    assert names == LOWER_BODY_JOINTS
    assert names[:6] == ("left_hip_pitch", "left_hip_roll", "left_hip_yaw", "left_knee",
                         "left_ankle_pitch", "left_ankle_roll")  # fmt: skip


def test_unnormalised_axis_names_joint(tmp_path):
    data = pendulum_data()
    data["joints"][0]["axis"] = [1, 1, 0]
    with pytest.raises(ModelError, match="hinge"):
        parse_model(data)


def test_load_model_from_file(tmp_path, model):
    path = tmp_path / "m.toml"
    path.write_text(serialize_model(model), encoding="utf-8")
    again = load_model(path)
    assert again.structurally_equal(model)


def test_load_missing_file(tmp_path):
    with pytest.raises(ModelError, match="not found"):
        load_model(tmp_path / "nope.toml")


def test_load_malformed_file(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("links = [ {", encoding="utf-8")
    with pytest.raises(ModelError, match="parse"):
        load_model(path)


@pytest.mark.parametrize("make_model", [pendulum_data, planar_2link_data])
def test_round_trip_small(make_model):
    m = parse_model(make_model())
    again = parse_model(tomllib.loads(serialize_model(m)))
    assert again.structurally_equal(m)
    assert model_to_dict(again) == model_to_dict(m)


def test_unknown_keys_rejected():
    data = pendulum_data()
    data["colour"] = "red"
    with pytest.raises(ModelError, match="colour"):
        parse_model(data)
    data = pendulum_data()
    data["joints"][0]["damping"] = 0.1
    with pytest.raises(ModelError, match="damping"):
        parse_model(data)
    data = pendulum_data()
    data["joints"][0]["limits"]["soft"] = 1.0
    with pytest.raises(ModelError, match="soft"):
        parse_model(data)


def test_cycle_detected():
    data = {
        "links": [link("a"), link("b")],
        "joints": [joint("ab", "a", "b", (0, 0, 1)), joint("ba", "b", "a", (0, 0, 1))],
    }
    with pytest.raises(ModelError, match="cycle"):
        parse_model(data)


def test_two_parents_rejected():
    data = {
        "links": [link("a"), link("b")],
        "joints": [joint("j1", "world", "b", (0, 0, 1)), joint("j2", "a", "b", (0, 0, 1))],
    }
    with pytest.raises(ModelError, match="two parent"):
        parse_model(data)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["links"][0].update(mass=-1.0), "negative mass"),
        (lambda d: d["links"][0].update(inertia=[[1, 2, 0], [0, 1, 0], [0, 0, 1]]), "symmetric"),
        (lambda d: d["links"][0].update(inertia=[[-1, 0, 0], [0, 1, 0], [0, 0, 1]]), "semi-definite"),
        (lambda d: d["joints"][0]["limits"].update(lower=2.0, upper=1.0), "lower limit"),
        (lambda d: d["joints"][0]["limits"].update(effort=0.0), "positive"),
        (lambda d: d["joints"][0].update(child="ghost"), "ghost"),
        (lambda d: d["joints"][0].update(origin_quat=[1, 1, 0, 0]), "quaternion"),
        (lambda d: d["joints"][0].update(default=5.0), "default"),
        (lambda d: d["joints"].append(copy.deepcopy(d["joints"][0])), "duplicate"),
        (lambda d: d.update(subchains={"arm": ["nope"]}), "nope"),
    ],
)
def test_validation_errors(mutate, message):
    data = pendulum_data()
    mutate(data)
    with pytest.raises(ModelError, match=message):
        parse_model(data)


def test_missing_subchain_for_wrist():
    data = planar_2link_data()
    data["wrists"][0]["subchain"] = "missing"
    with pytest.raises(ModelError, match="missing"):
        parse_model(data)


def test_humanoid_profile_requires_subchains(model):
    data = model_to_dict(model)
    del data["subchains"]["lower_body"]
    with pytest.raises(ModelError, match="lower_body"):
        parse_model(data)
    data = model_to_dict(model)
    data["subchains"]["upper_body"] = list(reversed(data["subchains"]["upper_body"]))
    with pytest.raises(ModelError):
        parse_model(data)


def test_model_is_immutable(model):
    with pytest.raises(Exception):
        model.name = "other"
    q = model.q_default
    q[0] = 99.0
    assert model.q_default[0] != 99.0


# preset rows, torso -> left arm -> right arm
PRESET_ROWS = {
    "C1": [0, -0.9, 0, 0, 0.5, 0, 0, 0, -0.9, 0, 0, 0.5, 0, 0, 0],
    "C2": [0, -0.9, 1.3, 0, 0, 0, 0, 0, -0.9, -1.3, 0, 0, 0, 0, 0],
    "C3": [0, 1.3, 0, 1.2, 0, 0, 0, 0, -1.3, 0, 1.2, 0, 0, 0, 0],
    "C4": [0, 1.0, 0, 0.9, 0, 0, 0, 0, -1.0, 0, 0.9, 0, 0, 0, 0],
    "C5": [0, -0.9, 0, 0, 0.5, 0, 0, 0, 1.3, 0, 1.2, 0, 0, 0, 0],
}


@pytest.mark.parametrize("cid", PRESET_IDS)
def test_presets_exact(cid):
    p = preset(cid)
    assert p.id == cid
    assert p.q_ub.shape == (15,)
    assert p.q_ub.tolist() == PRESET_ROWS[cid]


def test_preset_spot_values():
    assert preset("C3").q_ub[1] == 1.3  # left_shoulder_pitch
    assert preset("c1").id == "C1"


def test_preset_unknown():
    with pytest.raises(KeyError, match="C9"):
        preset("C9")


@pytest.mark.parametrize("cid", PRESET_IDS)
def test_presets_within_limits(model, cid):
    check_within_limits(model, model.subchain("upper_body"), preset(cid).q_ub)


def test_check_within_limits_names_joint(model):
    q = np.zeros(15)
    q[1] = 10.0
    with pytest.raises(ModelError, match="left_shoulder_pitch"):
        check_within_limits(model, model.subchain("upper_body"), q)


def test_full_configuration(model):
    q = full_configuration(model, preset("C2").q_ub)
    assert q[model.subchain("upper_body")].tolist() == PRESET_ROWS["C2"]
    assert np.array_equal(q[model.subchain("lower_body")], model.q_default[model.subchain("lower_body")])


def test_bundled_mass_is_humanoid_scale(model):
    assert 40.0 < model.total_mass < 70.0
