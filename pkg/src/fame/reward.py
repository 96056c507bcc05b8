"""Standing reward: every term, its weight and the weighted total.

Several terms are named without a closed form in the published reward
table.  The shapes used here are package interpretations, each driven by a
field of :class:`RewardParams`:

* lateral distance ``clamp(d)``: ``clip((d - d_min) / (d_max - d_min), 0, 1)``
* stand still: ``1(command is zero and |v| > stand_still_speed)``
* action vanish: mean squared excess of ``|a_t|`` over ``action_bound``
* position / velocity / torque limits: summed excess beyond the soft limits
* foot contact: ``F_z > contact_threshold``; ``v_z^-`` is ``min(v_z, 0)``
  of a foot in contact
* feet parallel: variance over sole sample points of ``|y_L,k - y_R,k|``
* feet ground parallel: sum over feet of the variance of sole point heights
* ``d_knee``: lateral distance between the two knees
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .errors import DimensionError, NonFiniteError
from .model import ChainModel

TERMS: tuple[tuple[str, float], ...] = (
    ("height_tracking", 3.0),
    ("lin_vel_z", -5.0),
    ("ang_vel_xy", -0.1),
    ("orientation", -3.0),
    ("stand_still", -0.8),
    ("hip_deviation", -0.2),
    ("ankle_deviation", -0.5),
    ("knee_deviation", -1.5),
    ("joint_tracking", -0.1),
    ("dof_acc", -2.5e-5),
    ("feet_lateral_distance", 0.5),
    ("knee_lateral_distance", 1.0),
    ("feet_parallel", -2.5),
    ("feet_ground_parallel", -2.0),
    ("feet_slip", -1.0),
    ("feet_stumble", -1.5),
    ("feet_contact_forces", -2.5e-4),
    ("contact_momentum", 2.5e-4),
    ("no_fly", 0.75),
    ("action_rate", -0.02),
    ("action_smoothness", -0.1),
    ("joint_power", -2e-5),
    ("torques", -2.5e-6),
    ("action_vanish", -1.0),
    ("dof_pos_limits", -2.0),
    ("dof_vel", -5e-3),
    ("dof_vel_limits", -2e-3),
    ("torque_limits", -0.1),
)

DEFAULT_WEIGHTS: Mapping[str, float] = dict(TERMS)
TERM_NAMES = tuple(name for name, _ in TERMS)


class RewardInputError(ValueError):
    pass


class RewardShapeError(RewardInputError, DimensionError):
    pass


class RewardNaNError(RewardInputError, NonFiniteError):
    pass


@dataclass(frozen=True)
class RewardParams:
    height_sharpness: float = 4.0
    knee_offset: float = 0.5
    feet_lateral_range: tuple[float, float] = (0.2, 0.45)
    knee_lateral_range: tuple[float, float] = (0.2, 0.45)
    stand_still_speed: float = 0.05
    contact_threshold: float = 5.0
    stumble_ratio: float = 3.0
    max_contact_force: float = 900.0
    momentum_force_offset: float = 50.0
    action_bound: float = 1.0
    soft_pos_limit: float = 0.975
    soft_vel_limit: float = 1.0
    soft_torque_limit: float = 0.95

    @classmethod
    def from_dict(cls, data: Mapping) -> "RewardParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown reward parameter(s): {', '.join(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass(frozen=True)
class RewardContext:
    """Model-derived constants the reward needs."""

    q_default: np.ndarray
    hip_idx: np.ndarray
    ankle_idx: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    velocity_limits: np.ndarray
    torque_limits: np.ndarray
    n_actions: int = 12

    @classmethod
    def from_model(cls, model: ChainModel) -> "RewardContext":
        lower = [model.joint_names[i] for i in model.subchain("lower_body")]
        hip = [model.joint_index(n) for n in lower if "_hip_" in n]
        ankle = [model.joint_index(n) for n in lower if "_ankle_" in n]
        return cls(
            q_default=model.q_default,
            hip_idx=np.array(hip, dtype=int),
            ankle_idx=np.array(ankle, dtype=int),
            q_min=model.q_min,
            q_max=model.q_max,
            velocity_limits=model.velocity_limits,
            torque_limits=model.torque_limits,
            n_actions=len(lower),
        )

    @property
    def n(self) -> int:
        return self.q_default.shape[0]


@dataclass(frozen=True)
class FootState:
    force: np.ndarray  # contact force (3,) N
    velocity: np.ndarray  # foot linear velocity (3,) m/s
    heights: np.ndarray  # sole sample-point heights (k,) m
    lateral: np.ndarray  # sole sample-point lateral positions (k,) m, base frame


@dataclass(frozen=True)
class RewardInput:
    h_base: float
    h_cmd: float
    v: np.ndarray
    omega_xy: np.ndarray
    g_xy: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    q_target: np.ndarray
    a_t: np.ndarray
    a_prev: np.ndarray
    a_prev2: np.ndarray
    tau: np.ndarray
    feet: tuple[FootState, FootState]
    knees_lateral: np.ndarray  # (2,) m
    command_is_zero: bool = True

    @classmethod
    def from_dict(cls, data: Mapping) -> "RewardInput":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise RewardInputError(f"unknown reward input field(s): {', '.join(unknown)}")
        missing = sorted(known - set(data) - {"command_is_zero"})
        if missing:
            raise RewardInputError(f"missing reward input field(s): {', '.join(missing)}")
        kw = dict(data)
        feet = kw.pop("feet")
        if len(feet) != 2:
            raise RewardInputError("feet must list exactly two feet")
        kw["feet"] = tuple(
            FootState(**{k: np.asarray(v, dtype=float) for k, v in foot.items()}) for foot in feet
        )
        for k, v in list(kw.items()):
            if k in ("feet", "command_is_zero"):
                continue
            kw[k] = float(v) if k in ("h_base", "h_cmd") else np.asarray(v, dtype=float)
        return cls(**kw)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "feet":
                out["feet"] = [
                    {k: np.asarray(getattr(foot, k)).tolist() for k in ("force", "velocity", "heights", "lateral")}
                    for foot in v
                ]
            elif isinstance(v, np.ndarray):
                out[f.name] = v.tolist()
            else:
                out[f.name] = v
        return out


@dataclass(frozen=True)
class RewardBreakdown:
    terms: tuple[tuple[str, float, float, float], ...]  # (name, raw, weight, weighted)
    total: float

    def __getitem__(self, name: str) -> tuple[str, float, float, float]:
        for term in self.terms:
            if term[0] == name:
                return term
        raise KeyError(name)

    def raw(self, name: str) -> float:
        return self[name][1]

    def weighted(self, name: str) -> float:
        return self[name][3]

    def to_dict(self) -> dict:
        return {
            "terms": [
                {"name": n, "raw": r, "weight": w, "weighted": v} for n, r, w, v in self.terms
            ],
            "total": self.total,
        }


def _check(inp: RewardInput, ctx: RewardContext) -> None:
    n, na = ctx.n, ctx.n_actions
    expected = {
        "v": 3, "omega_xy": 2, "g_xy": 2, "q": n, "qd": n, "qdd": n, "q_target": n,
        "a_t": na, "a_prev": na, "a_prev2": na, "tau": n, "knees_lateral": 2,
    }  # fmt: skip
    for name in ("h_base", "h_cmd"):
        if not math.isfinite(getattr(inp, name)):
            raise RewardNaNError(f"non-finite value in field {name!r}")
    for name, size in expected.items():
        arr = np.asarray(getattr(inp, name))
        if arr.shape != (size,):
            raise RewardShapeError(f"field {name!r} has shape {arr.shape}, expected ({size},)")
        if not np.all(np.isfinite(arr)):
            raise RewardNaNError(f"non-finite value in field {name!r}")
    if len(inp.feet) != 2:
        raise RewardShapeError("exactly two feet required")
    for i, foot in enumerate(inp.feet):
        for name in ("force", "velocity"):
            arr = np.asarray(getattr(foot, name))
            if arr.shape != (3,):
                raise RewardShapeError(f"feet[{i}].{name} has shape {arr.shape}, expected (3,)")
        if np.asarray(foot.heights).shape != np.asarray(foot.lateral).shape or np.ndim(foot.heights) != 1:
            raise RewardShapeError(f"feet[{i}] heights/lateral must be equal-length vectors")
        for name in ("force", "velocity", "heights", "lateral"):
            if not np.all(np.isfinite(getattr(foot, name))):
                raise RewardNaNError(f"non-finite value in field 'feet[{i}].{name}'")
    if np.shape(inp.feet[0].lateral) != np.shape(inp.feet[1].lateral):
        raise RewardShapeError("both feet need the same number of sole sample points")


def _ramp(d: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return min(1.0, max(0.0, (d - lo) / (hi - lo)))


def _excess(x: np.ndarray, bound: np.ndarray) -> np.ndarray:
    return np.clip(np.abs(x) - bound, 0.0, None)


def raw_terms(inp: RewardInput, ctx: RewardContext, p: RewardParams = RewardParams()) -> dict[str, float]:
    _check(inp, ctx)
    dh = inp.h_base - inp.h_cmd
    left, right = inp.feet
    contact = [foot.force[2] > p.contact_threshold for foot in inp.feet]
    lateral_gaps = np.abs(np.asarray(left.lateral) - np.asarray(right.lateral))
    d_feet = float(np.mean(lateral_gaps)) if lateral_gaps.size else 0.0
    d_knee = float(abs(inp.knees_lateral[0] - inp.knees_lateral[1]))

    mid = 0.5 * (ctx.q_min + ctx.q_max)
    half = 0.5 * (ctx.q_max - ctx.q_min) * p.soft_pos_limit
    below = np.clip((mid - half) - inp.q, 0.0, None)
    above = np.clip(inp.q - (mid + half), 0.0, None)

    t: dict[str, float] = {}
    t["height_tracking"] = math.exp(-p.height_sharpness * abs(dh))
    t["lin_vel_z"] = float(inp.v[2] ** 2)
    t["ang_vel_xy"] = float(np.sum(np.square(inp.omega_xy)))
    t["orientation"] = float(np.sum(np.square(inp.g_xy)))
    t["stand_still"] = float(bool(inp.command_is_zero) and float(np.linalg.norm(inp.v)) > p.stand_still_speed)
    t["hip_deviation"] = float(np.sum(np.square(inp.q[ctx.hip_idx] - ctx.q_default[ctx.hip_idx])))
    t["ankle_deviation"] = float(np.sum(np.square(inp.q[ctx.ankle_idx] - ctx.q_default[ctx.ankle_idx])))
    t["knee_deviation"] = abs((d_knee - p.knee_offset) * dh)
    t["joint_tracking"] = float(np.sum(np.square(inp.q_target - inp.q)))
    t["dof_acc"] = float(np.sum(np.square(inp.qdd)))
    t["feet_lateral_distance"] = _ramp(d_feet, p.feet_lateral_range)
    t["knee_lateral_distance"] = _ramp(d_knee, p.knee_lateral_range)
    t["feet_parallel"] = float(np.var(lateral_gaps)) if lateral_gaps.size else 0.0
    t["feet_ground_parallel"] = float(sum(np.var(f.heights) if np.size(f.heights) else 0.0 for f in inp.feet))
    t["feet_slip"] = float(
        sum(np.linalg.norm(f.velocity[:2]) for f, c in zip(inp.feet, contact) if c)
    )
    t["feet_stumble"] = float(
        any(np.linalg.norm(f.force[:2]) > p.stumble_ratio * abs(f.force[2]) for f in inp.feet)
    )
    t["feet_contact_forces"] = float(
        sum(max(float(np.linalg.norm(f.force)) - p.max_contact_force, 0.0) for f in inp.feet)
    )
    t["contact_momentum"] = float(
        sum(
            min(float(f.velocity[2]), 0.0) * (float(f.force[2]) - p.momentum_force_offset)
            for f, c in zip(inp.feet, contact)
            if c
        )
    )
    t["no_fly"] = float(sum(contact) == 1)
    t["action_rate"] = float(np.sum(np.square(inp.a_t - inp.a_prev)))
    t["action_smoothness"] = float(np.sum(np.square(inp.a_t - 2.0 * inp.a_prev + inp.a_prev2)))
    t["joint_power"] = float(np.sum(np.abs(inp.qd * inp.tau)))
    t["torques"] = float(np.sum(np.square(inp.tau)))
    t["action_vanish"] = float(np.mean(np.square(_excess(inp.a_t, p.action_bound))))
    t["dof_pos_limits"] = float(np.sum(below + above))
    t["dof_vel"] = float(np.sum(np.square(inp.qd)))
    t["dof_vel_limits"] = float(np.sum(_excess(inp.qd, ctx.velocity_limits * p.soft_vel_limit)))
    t["torque_limits"] = float(np.sum(_excess(inp.tau, ctx.torque_limits * p.soft_torque_limit)))
    return t


def evaluate(
    inp: RewardInput,
    ctx: RewardContext,
    weights: Mapping[str, float] | None = None,
    params: RewardParams = RewardParams(),
) -> RewardBreakdown:
    w = dict(DEFAULT_WEIGHTS)
    if weights:
        unknown = sorted(set(weights) - set(w))
        if unknown:
            raise ValueError(f"unknown reward term(s): {', '.join(unknown)}")
        w.update({k: float(v) for k, v in weights.items()})
    raw = raw_terms(inp, ctx, params)
    terms = []
    total = 0.0
    for name in TERM_NAMES:
        weighted = raw[name] * w[name]
        terms.append((name, raw[name], w[name], weighted))
        total += weighted
    return RewardBreakdown(tuple(terms), total)


def neutral_input(ctx: RewardContext, h_cmd: float = 1.0, **overrides) -> RewardInput:
    """An input at rest in the default posture with both feet unloaded."""
    n, na = ctx.n, ctx.n_actions
    zero_foot = FootState(np.zeros(3), np.zeros(3), np.zeros(4), np.zeros(4))
    base = dict(
        h_base=h_cmd, h_cmd=h_cmd, v=np.zeros(3), omega_xy=np.zeros(2), g_xy=np.zeros(2),
        q=ctx.q_default.copy(), qd=np.zeros(n), qdd=np.zeros(n), q_target=ctx.q_default.copy(),
        a_t=np.zeros(na), a_prev=np.zeros(na), a_prev2=np.zeros(na), tau=np.zeros(n),
        feet=(zero_foot, zero_foot), knees_lateral=np.zeros(2), command_is_zero=True,
    )  # fmt: skip
    base.update(overrides)
    return RewardInput(**base)
