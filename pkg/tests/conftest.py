import numpy as np
import pytest

from fame.model import load_bundled_model, parse_model

EYE = [[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.01]]
LIMITS = {"lower": -3.0, "upper": 3.0, "effort": 100.0, "velocity": 10.0}


def link(name, mass=1.0, com=(0.0, 0.0, 0.0)):
    return {"name": name, "mass": mass, "com": list(com), "inertia": EYE}


def joint(name, parent, child, axis, xyz=(0.0, 0.0, 0.0), **extra):
    return {"name": name, "parent": parent, "child": child, "axis": list(axis), "origin_xyz": list(xyz),
            "limits": dict(LIMITS), **extra}  # fmt: skip


def pendulum_data(mass=1.0, lc=0.5):
    """One link hanging off a horizontal (y) axis; at q=0 the link points along +x."""
    return {
        "name": "pendulum",
        "links": [link("bob", mass, (lc, 0.0, 0.0))],
        "joints": [joint("hinge", "world", "bob", (0, 1, 0))],
    }


def planar_2link_data(l1=1.0, l2=1.0, masses=(1.0, 1.0)):
    """Two links along x rotating about world z, wrist at the tip of link 2."""
    return {
        "name": "planar2",
        "gravity": [0.0, -9.81, 0.0],
        "links": [link("l1", masses[0], (l1 / 2, 0, 0)), link("l2", masses[1], (l2 / 2, 0, 0))],
        "joints": [joint("j1", "world", "l1", (0, 0, 1)), joint("j2", "l1", "l2", (0, 0, 1), (l1, 0, 0))],
        "subchains": {"arm": ["j1", "j2"]},
        "wrists": [{"name": "tip", "side": "left", "link": "l2", "subchain": "arm", "origin_xyz": [l2, 0, 0]}],
    }


def random_chain_data(seed=0, n=7, with_wrist=True):
    """Serial chain with random axes, offsets and masses."""
    rng = np.random.default_rng(seed)
    links, joints = [], []
    parent = "world"
    for i in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        links.append(link(f"L{i}", float(rng.uniform(0.2, 2.0)), tuple(rng.uniform(-0.2, 0.2, 3))))
        joints.append(joint(f"J{i}", parent, f"L{i}", tuple(axis), tuple(rng.uniform(-0.3, 0.3, 3))))
        parent = f"L{i}"
    data = {"name": f"chain{seed}", "links": links, "joints": joints,
            "subchains": {"arm": [j["name"] for j in joints]}}  # fmt: skip
    if with_wrist:
        data["wrists"] = [{"name": "tip", "side": "left", "link": parent, "subchain": "arm",
                           "origin_xyz": [0.1, 0.0, 0.05]}]  # fmt: skip
    return data


@pytest.fixture(scope="session")
def model():
    return load_bundled_model()


@pytest.fixture
def pendulum():
    return parse_model(pendulum_data())


@pytest.fixture
def planar2():
    return parse_model(planar_2link_data())


def random_pose(model, rng, margin=0.05):
    span = model.q_max - model.q_min
    return rng.uniform(model.q_min + margin * span, model.q_max - margin * span)
