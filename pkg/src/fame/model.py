"""Robot description: joints, links, named sub-chains and wrist frames.

Models are stored as TOML.  The grammar (every key listed; anything else is
rejected) is documented in ``docs/model_format.md``.  A model is immutable
once loaded.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

WORLD = "world"

UPPER_BODY_JOINTS = (
    "torso",
    "left_shoulder_pitch",
    "left_shoulder_roll",
    "left_shoulder_yaw",
    "left_elbow_pitch",
    "left_elbow_roll",
    "left_wrist_pitch",
    "left_wrist_yaw",
    "right_shoulder_pitch",
    "right_shoulder_roll",
    "right_shoulder_yaw",
    "right_elbow_pitch",
    "right_elbow_roll",
    "right_wrist_pitch",
    "right_wrist_yaw",
)

# Leg order inside the 12-D action is a convention of this package.
LEG_JOINT_SUFFIXES = ("hip_pitch", "hip_roll", "hip_yaw", "knee", "ankle_pitch", "ankle_roll")
LOWER_BODY_JOINTS = tuple(
    f"{side}_{suffix}" for side in ("left", "right") for suffix in LEG_JOINT_SUFFIXES
)

HUMANOID_SUBCHAIN_SIZES = {"left_arm": 7, "right_arm": 7, "upper_body": 15, "lower_body": 12}

PRESET_NAMES = {
    "C1": "forward_extended",
    "C2": "mid_sideways",
    "C3": "full_sideways",
    "C4": "near_full_sideways",
    "C5": "asym_forward_full",
}

_PRESETS = {
    "C1": (0, -0.9, 0, 0, 0.5, 0, 0, 0, -0.9, 0, 0, 0.5, 0, 0, 0),
    "C2": (0, -0.9, 1.3, 0, 0, 0, 0, 0, -0.9, -1.3, 0, 0, 0, 0, 0),
    "C3": (0, 1.3, 0, 1.2, 0, 0, 0, 0, -1.3, 0, 1.2, 0, 0, 0, 0),
    "C4": (0, 1.0, 0, 0.9, 0, 0, 0, 0, -1.0, 0, 0.9, 0, 0, 0, 0),
    "C5": (0, -0.9, 0, 0, 0.5, 0, 0, 0, 1.3, 0, 1.2, 0, 0, 0, 0),
}

PRESET_IDS = tuple(_PRESETS)


class ModelError(ValueError):
    """Raised when a model file cannot be parsed or fails validation."""


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent_link: str
    child_link: str
    axis: tuple[float, float, float]
    origin_xyz: tuple[float, float, float]
    origin_quat: tuple[float, float, float, float]  # (w, x, y, z)
    q_min: float
    q_max: float
    torque_limit: float
    velocity_limit: float
    default: float = 0.0


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float
    com: tuple[float, float, float]
    inertia: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True)
class WristFrame:
    name: str
    side: str
    link: str
    subchain: str
    origin_xyz: tuple[float, float, float]
    origin_quat: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ArmConfigPreset:
    id: str
    name: str
    q_ub: np.ndarray


@dataclass(frozen=True, eq=False)
class ChainModel:
    """Validated kinematic tree.

    ``joints`` are kept in file order, which is the canonical joint order for
    every joint-indexed vector in the package.
    """

    joints: tuple[JointSpec, ...]
    links: tuple[LinkSpec, ...]
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    subchains: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    wrists: tuple[WristFrame, ...] = ()
    profile: str = "generic"
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self) -> tuple[str, ...]:
        return tuple(j.name for j in self.joints)

    @property
    def link_names(self) -> tuple[str, ...]:
        return tuple(link.name for link in self.links)

    def joint_index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise KeyError(f"unknown joint {name!r}") from None

    def link(self, name: str) -> LinkSpec:
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(f"unknown link {name!r}")

    def subchain(self, name: str) -> np.ndarray:
        if name not in self.subchains:
            raise KeyError(f"model has no subchain {name!r}")
        return np.asarray(self.subchains[name], dtype=int)

    def wrist(self, side: str) -> WristFrame:
        for w in self.wrists:
            if w.side == side:
                return w
        raise KeyError(f"model has no {side} wrist frame")

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for j in self.joints])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for j in self.joints])

    @property
    def torque_limits(self) -> np.ndarray:
        return np.array([j.torque_limit for j in self.joints])

    @property
    def velocity_limits(self) -> np.ndarray:
        return np.array([j.velocity_limit for j in self.joints])

    @property
    def q_default(self) -> np.ndarray:
        return np.array([j.default for j in self.joints])

    @property
    def total_mass(self) -> float:
        return float(sum(link.mass for link in self.links))

    def structurally_equal(self, other: "ChainModel") -> bool:
        return (
            self.joints == other.joints
            and self.links == other.links
            and self.gravity == other.gravity
            and dict(self.subchains) == dict(other.subchains)
            and self.wrists == other.wrists
            and self.profile == other.profile
            and self.name == other.name
        )


# --------------------------------------------------------------------------
# parsing

_TOP_KEYS = {"name", "profile", "gravity", "links", "joints", "subchains", "wrists"}
_LINK_KEYS = {"name", "mass", "com", "inertia"}
_JOINT_KEYS = {"name", "parent", "child", "axis", "origin_xyz", "origin_quat", "limits", "default"}
_LIMIT_KEYS = {"lower", "upper", "effort", "velocity"}
_WRIST_KEYS = {"name", "side", "link", "subchain", "origin_xyz", "origin_quat"}


def _reject_unknown(entry: Mapping, allowed: set, where: str) -> None:
    unknown = sorted(set(entry) - allowed)
    if unknown:
        raise ModelError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _require(entry: Mapping, key: str, where: str):
    if key not in entry:
        raise ModelError(f"{where}: missing key {key!r}")
    return entry[key]


def _vec(value, size: int, where: str) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ModelError(f"{where}: expected {size} numbers") from None
    if len(out) != size:
        raise ModelError(f"{where}: expected {size} numbers, got {len(out)}")
    if not all(math.isfinite(v) for v in out):
        raise ModelError(f"{where}: non-finite value")
    return out


def _scalar(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelError(f"{where}: expected a number")
    return float(value)


def parse_model(data: Mapping) -> ChainModel:
    """Build and validate a model from an already-decoded TOML mapping."""
    _reject_unknown(data, _TOP_KEYS, "model")
    links = []
    for i, entry in enumerate(data.get("links", [])):
        where = f"link #{i}"
        _reject_unknown(entry, _LINK_KEYS, where)
        name = str(_require(entry, "name", where))
        where = f"link {name!r}"
        inertia = _require(entry, "inertia", where)
        if len(inertia) != 3:
            raise ModelError(f"{where}: inertia must be 3x3")
        links.append(
            LinkSpec(
                name=name,
                mass=_scalar(_require(entry, "mass", where), f"{where} mass"),
                com=_vec(_require(entry, "com", where), 3, f"{where} com"),
                inertia=tuple(_vec(row, 3, f"{where} inertia") for row in inertia),
            )
        )
    joints = []
    for i, entry in enumerate(data.get("joints", [])):
        where = f"joint #{i}"
        _reject_unknown(entry, _JOINT_KEYS, where)
        name = str(_require(entry, "name", where))
        where = f"joint {name!r}"
        limits = _require(entry, "limits", where)
        _reject_unknown(limits, _LIMIT_KEYS, f"{where} limits")
        joints.append(
            JointSpec(
                name=name,
                parent_link=str(_require(entry, "parent", where)),
                child_link=str(_require(entry, "child", where)),
                axis=_vec(_require(entry, "axis", where), 3, f"{where} axis"),
                origin_xyz=_vec(entry.get("origin_xyz", (0, 0, 0)), 3, f"{where} origin_xyz"),
                origin_quat=_vec(entry.get("origin_quat", (1, 0, 0, 0)), 4, f"{where} origin_quat"),
                q_min=_scalar(_require(limits, "lower", f"{where} limits"), f"{where} lower"),
                q_max=_scalar(_require(limits, "upper", f"{where} limits"), f"{where} upper"),
                torque_limit=_scalar(_require(limits, "effort", f"{where} limits"), f"{where} effort"),
                velocity_limit=_scalar(
                    _require(limits, "velocity", f"{where} limits"), f"{where} velocity"
                ),
                default=_scalar(entry.get("default", 0.0), f"{where} default"),
            )
        )
    names = [j.name for j in joints]
    subchains = {}
    for key, members in data.get("subchains", {}).items():
        idx = []
        for m in members:
            if m not in names:
                raise ModelError(f"subchain {key!r}: unknown joint {m!r}")
            idx.append(names.index(m))
        subchains[str(key)] = tuple(idx)
    wrists = []
    for i, entry in enumerate(data.get("wrists", [])):
        where = f"wrist #{i}"
        _reject_unknown(entry, _WRIST_KEYS, where)
        name = str(_require(entry, "name", where))
        wrists.append(
            WristFrame(
                name=name,
                side=str(_require(entry, "side", f"wrist {name!r}")),
                link=str(_require(entry, "link", f"wrist {name!r}")),
                subchain=str(_require(entry, "subchain", f"wrist {name!r}")),
                origin_xyz=_vec(entry.get("origin_xyz", (0, 0, 0)), 3, f"wrist {name!r} origin_xyz"),
                origin_quat=_vec(
                    entry.get("origin_quat", (1, 0, 0, 0)), 4, f"wrist {name!r} origin_quat"
                ),
            )
        )
    model = ChainModel(
        joints=tuple(joints),
        links=tuple(links),
        gravity=_vec(data.get("gravity", (0.0, 0.0, -9.81)), 3, "gravity"),
        subchains=subchains,
        wrists=tuple(wrists),
        profile=str(data.get("profile", "generic")),
        name=str(data.get("name", "")),
    )
    validate_model(model)
    return model


def load_model(path: str | Path) -> ChainModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ModelError(f"model file not found: {path}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ModelError(f"{path}: parse error: {exc}") from None
    return parse_model(data)


def load_bundled_model() -> ChainModel:
    """The packaged 27-DoF H12-like humanoid (inertial values are placeholders)."""
    text = resources.files("fame").joinpath("data/h12_like.toml").read_text(encoding="utf-8")
    return parse_model(tomllib.loads(text))


# --------------------------------------------------------------------------
# validation


def validate_model(model: ChainModel) -> None:
    link_names = [link.name for link in model.links]
    if len(set(link_names)) != len(link_names):
        raise ModelError("duplicate link names")
    if WORLD in link_names:
        raise ModelError(f"link name {WORLD!r} is reserved")
    joint_names = model.joint_names
    if len(set(joint_names)) != len(joint_names):
        raise ModelError("duplicate joint names")

    for link in model.links:
        if link.mass < 0:
            raise ModelError(f"link {link.name!r}: negative mass")
        inertia = np.array(link.inertia)
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ModelError(f"link {link.name!r}: inertia not symmetric")
        if np.linalg.eigvalsh(inertia).min() < -1e-12:
            raise ModelError(f"link {link.name!r}: inertia not positive semi-definite")

    known = set(link_names) | {WORLD}
    parent_of: dict[str, str] = {}
    for j in model.joints:
        if abs(math.sqrt(sum(a * a for a in j.axis)) - 1.0) > 1e-9:
            raise ModelError(f"joint {j.name!r}: axis {j.axis} is not unit length")
        if abs(math.sqrt(sum(c * c for c in j.origin_quat)) - 1.0) > 1e-9:
            raise ModelError(f"joint {j.name!r}: origin quaternion is not unit length")
        if not (j.q_min <= j.q_max):
            raise ModelError(f"joint {j.name!r}: lower limit exceeds upper limit")
        if not (j.torque_limit > 0 and j.velocity_limit > 0):
            raise ModelError(f"joint {j.name!r}: effort/velocity limits must be positive")
        if not (j.q_min <= j.default <= j.q_max):
            raise ModelError(f"joint {j.name!r}: default position outside limits")
        for end in (j.parent_link, j.child_link):
            if end not in known:
                raise ModelError(f"joint {j.name!r}: unknown link {end!r}")
        if j.child_link == WORLD:
            raise ModelError(f"joint {j.name!r}: world cannot be a child")
        if j.child_link in parent_of:
            raise ModelError(f"joint {j.name!r}: link {j.child_link!r} has two parent joints")
        parent_of[j.child_link] = j.parent_link

    for start in parent_of:
        seen = {start}
        cur = start
        while cur in parent_of:
            cur = parent_of[cur]
            if cur in seen:
                raise ModelError(f"joint tree has a cycle through link {start!r}")
            seen.add(cur)

    for w in model.wrists:
        if w.side not in ("left", "right"):
            raise ModelError(f"wrist {w.name!r}: side must be left or right")
        if w.link not in link_names:
            raise ModelError(f"wrist {w.name!r}: unknown link {w.link!r}")
        if w.subchain not in model.subchains:
            raise ModelError(f"wrist {w.name!r}: missing subchain {w.subchain!r}")
    sides = [w.side for w in model.wrists]
    if len(set(sides)) != len(sides):
        raise ModelError("more than one wrist frame per side")

    if model.profile == "humanoid":
        _validate_humanoid(model)
    elif model.profile != "generic":
        raise ModelError(f"unknown profile {model.profile!r}")


def _validate_humanoid(model: ChainModel) -> None:
    for key, size in HUMANOID_SUBCHAIN_SIZES.items():
        if key not in model.subchains:
            raise ModelError(f"humanoid model: missing subchain {key!r}")
        if len(model.subchains[key]) != size:
            raise ModelError(
                f"humanoid model: subchain {key!r} has {len(model.subchains[key])} joints, expected {size}"
            )
    ub = [model.joint_names[i] for i in model.subchains["upper_body"]]
    if tuple(ub) != UPPER_BODY_JOINTS:
        raise ModelError("humanoid model: upper_body subchain is not in torso -> left arm -> right arm order")
    if tuple(model.subchains["left_arm"]) != tuple(model.subchains["upper_body"][1:8]):
        raise ModelError("humanoid model: left_arm must be upper_body entries 2-8")
    if tuple(model.subchains["right_arm"]) != tuple(model.subchains["upper_body"][8:15]):
        raise ModelError("humanoid model: right_arm must be upper_body entries 9-15")
    lb = [model.joint_names[i] for i in model.subchains["lower_body"]]
    if tuple(lb) != LOWER_BODY_JOINTS:
        raise ModelError("humanoid model: lower_body subchain does not follow the leg naming convention")
    if {w.side for w in model.wrists} != {"left", "right"}:
        raise ModelError("humanoid model: needs left and right wrist frames")


# --------------------------------------------------------------------------
# serialization


def model_to_dict(model: ChainModel) -> dict:
    def q(values: Iterable[float]) -> list[float]:
        return [float(v) for v in values]

    return {
        "name": model.name,
        "profile": model.profile,
        "gravity": q(model.gravity),
        "links": [
            {"name": l.name, "mass": l.mass, "com": q(l.com), "inertia": [q(r) for r in l.inertia]}
            for l in model.links
        ],
        "joints": [
            {
                "name": j.name,
                "parent": j.parent_link,
                "child": j.child_link,
                "axis": q(j.axis),
                "origin_xyz": q(j.origin_xyz),
                "origin_quat": q(j.origin_quat),
                "default": j.default,
                "limits": {
                    "lower": j.q_min,
                    "upper": j.q_max,
                    "effort": j.torque_limit,
                    "velocity": j.velocity_limit,
                },
            }
            for j in model.joints
        ],
        "subchains": {k: [model.joint_names[i] for i in v] for k, v in model.subchains.items()},
        "wrists": [
            {
                "name": w.name,
                "side": w.side,
                "link": w.link,
                "subchain": w.subchain,
                "origin_xyz": q(w.origin_xyz),
                "origin_quat": q(w.origin_quat),
            }
            for w in model.wrists
        ],
    }


def serialize_model(model: ChainModel) -> str:
    return tomli_w.dumps(model_to_dict(model))


# --------------------------------------------------------------------------
# presets


def preset(config_id: str) -> ArmConfigPreset:
    """Return one of the five fixed upper-body configurations C1..C5."""
    key = str(config_id).upper()
    if key not in _PRESETS:
        raise KeyError(f"unknown arm configuration {config_id!r}; expected one of {', '.join(_PRESETS)}")
    q = np.array(_PRESETS[key], dtype=float)
    q.setflags(write=False)
    return ArmConfigPreset(id=key, name=PRESET_NAMES[key], q_ub=q)


def check_within_limits(model: ChainModel, indices: Iterable[int], q: np.ndarray) -> None:
    """Raise ModelError naming the first joint whose value is outside its limits."""
    for i, value in zip(indices, np.asarray(q, dtype=float)):
        j = model.joints[i]
        if not (j.q_min <= value <= j.q_max):
            raise ModelError(f"joint {j.name!r}: value {value} outside [{j.q_min}, {j.q_max}]")


def full_configuration(model: ChainModel, q_ub=None, q_lb=None) -> np.ndarray:
    """Default posture with the upper/lower body slots optionally replaced."""
    q = model.q_default.copy()
    if q_ub is not None:
        q[model.subchain("upper_body")] = q_ub
    if q_lb is not None:
        q[model.subchain("lower_body")] = q_lb
    return q
