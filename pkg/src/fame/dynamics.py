"""Kinematics and gravity-only dynamics on a :class:`~fame.model.ChainModel`.

Everything is expressed in the world frame, with the model's root links fixed
at the world origin.  Configurations may be a single ``(n,)`` vector or a
batch ``(B, n)``; results carry the same leading batch shape.

Sign convention for external forces: ``F`` is the force applied *to* the hand
by the environment.  Static equilibrium then requires actuator torques

    tau = tau_g - J^T F

so that ``-(J^T)^+ (tau - tau_g)`` recovers ``F``.  Worked example: a 1 kg
point mass on a massless 1 m horizontal link about a horizontal axis needs
``tau_g = 9.81 N m`` to hold; pushing up on the tip with 9.81 N (``F`` along
the direction the tip moves for positive rotation) makes ``tau`` drop to 0.
"""

from __future__ import annotations

from dataclasses import dataclass
import threading
from functools import lru_cache

import numpy as np

from .errors import DimensionError, NonFiniteError
from .model import WORLD, ChainModel

# --------------------------------------------------------------------------
# quaternion helpers, (w, x, y, z), broadcasting over leading axes


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``np.cross`` for 3-vectors on the last axis, without its overhead."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.sqrt(np.sum(q * q, axis=-1, keepdims=True))


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * cross3(u, v)
    return v + w * t + cross3(u, t)


def quat_from_axis_angle(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    half = 0.5 * np.asarray(angle)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        for name in ("q", "qd", "tau"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
        if not (self.q.shape == self.qd.shape == self.tau.shape) or self.q.ndim != 1:
            raise DimensionError(
                f"q, qd, tau must be equal-length vectors, got {self.q.shape}, {self.qd.shape}, {self.tau.shape}"
            )
        for name in ("q", "qd", "tau"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteError(f"non-finite entry in {name}")

    def check(self, model: ChainModel) -> None:
        if self.q.shape[0] != model.n:
            raise DimensionError(f"joint state has {self.q.shape[0]} joints, model has {model.n}")


@dataclass(frozen=True)
class FramePose:
    position: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.rotation)
        T[:3, 3] = self.position
        return T


@dataclass(frozen=True)
class _Topology:
    order: tuple[int, ...]  # joints, parents before children
    parent_link: tuple[int, ...]  # -1 == world
    child_link: tuple[int, ...]
    axes: np.ndarray
    origin_xyz: np.ndarray
    origin_quat: np.ndarray
    masses: np.ndarray
    coms: np.ndarray
    # ancestor_mask[l, j] is True when joint j moves link l
    ancestor_mask: np.ndarray
    # joints grouped by tree depth; every joint's parent link is produced
    # by an earlier group
    levels: tuple[np.ndarray, ...]
    # parent link per joint with the world mapped to slot L
    parent_slot: np.ndarray


@lru_cache(maxsize=64)
def _topology(model: ChainModel) -> _Topology:
    link_index = {name: i for i, name in enumerate(model.link_names)}
    parent = tuple(-1 if j.parent_link == WORLD else link_index[j.parent_link] for j in model.joints)
    child = tuple(link_index[j.child_link] for j in model.joints)
    joint_of_child = {c: i for i, c in enumerate(child)}

    depth = {}

    def link_depth(link: int) -> int:
        if link == -1 or link not in joint_of_child:
            return 0
        if link not in depth:
            depth[link] = 1 + link_depth(parent[joint_of_child[link]])
        return depth[link]

    order = tuple(sorted(range(model.n), key=lambda i: (link_depth(child[i]), i)))

    mask = np.zeros((len(model.links), model.n), dtype=bool)
    for link in range(len(model.links)):
        cur = link
        while cur in joint_of_child:
            j = joint_of_child[cur]
            mask[link, j] = True
            cur = parent[j]

    return _Topology(
        order=order,
        parent_link=parent,
        child_link=child,
        axes=np.array([j.axis for j in model.joints], dtype=float).reshape(-1, 3),
        origin_xyz=np.array([j.origin_xyz for j in model.joints], dtype=float).reshape(-1, 3),
        origin_quat=np.array([j.origin_quat for j in model.joints], dtype=float).reshape(-1, 4),
        masses=np.array([l.mass for l in model.links], dtype=float),
        coms=np.array([l.com for l in model.links], dtype=float).reshape(-1, 3),
        ancestor_mask=mask,
        levels=tuple(
            np.array([j for j in order if link_depth(child[j]) == d], dtype=int)
            for d in sorted({link_depth(child[j]) for j in order})
        ),
        parent_slot=np.array([len(model.links) if p < 0 else p for p in parent], dtype=int),
    )


@dataclass(frozen=True)
class Kinematics:
    """World-frame kinematic quantities for one configuration or a batch."""

    link_pos: np.ndarray  # (..., L, 3)
    link_quat: np.ndarray  # (..., L, 4)
    joint_pos: np.ndarray  # (..., n, 3) joint frame origins
    joint_axis: np.ndarray  # (..., n, 3) world-frame rotation axes


def _as_config(model: ChainModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (model.n,):
        raise DimensionError(f"configuration has shape {q.shape}, model has {model.n} joints")
    if not np.all(np.isfinite(q)):
        raise NonFiniteError("configuration has non-finite entries")
    return q


_cache = threading.local()
_CACHE_SIZE = 8


def kinematics(model: ChainModel, q) -> Kinematics:
    """Link and joint frames for ``q`` of shape ``(n,)`` or ``(..., n)``.

    Joints are processed one tree depth at a time.  Results for single
    configurations are memoised per thread (last few calls); the returned
    arrays are read-only.
    """
    q = _as_config(model, q)
    key = None
    if q.ndim == 1:
        key = (id(model), q.tobytes())
        entries = getattr(_cache, "entries", None)
        if entries is None:
            entries = _cache.entries = {}
        hit = entries.get(key)
        if hit is not None and hit[0] is model:
            return hit[1]
    kin = _kinematics(model, q)
    if key is not None:
        if len(entries) >= _CACHE_SIZE:
            entries.pop(next(iter(entries)))
        entries[key] = (model, kin)
    return kin


def _kinematics(model: ChainModel, q: np.ndarray) -> Kinematics:
    top = _topology(model)
    batch = q.shape[:-1]
    L = len(model.links)
    # slot L is the world frame
    link_pos = np.zeros(batch + (L + 1, 3))
    link_quat = np.zeros(batch + (L + 1, 4))
    link_quat[..., 0] = 1.0
    joint_pos = np.zeros(batch + (model.n, 3))
    joint_axis = np.zeros(batch + (model.n, 3))
    for js in top.levels:
        p = top.parent_slot[js]
        parent_q = link_quat[..., p, :]
        parent_p = link_pos[..., p, :]
        frame_q = quat_normalize(quat_mul(parent_q, top.origin_quat[js]))
        frame_p = parent_p + quat_rotate(parent_q, np.broadcast_to(top.origin_xyz[js], parent_p.shape))
        joint_pos[..., js, :] = frame_p
        joint_axis[..., js, :] = quat_rotate(frame_q, np.broadcast_to(top.axes[js], frame_p.shape))
        c = np.asarray(top.child_link)[js]
        link_quat[..., c, :] = quat_normalize(quat_mul(frame_q, quat_from_axis_angle(top.axes[js], q[..., js])))
        link_pos[..., c, :] = frame_p
    out = Kinematics(link_pos[..., :L, :], link_quat[..., :L, :], joint_pos, joint_axis)
    for arr in (out.link_pos, out.link_quat, out.joint_pos, out.joint_axis):
        arr.setflags(write=False)
    return out


def _wrist_point(model: ChainModel, kin: Kinematics, side: str) -> tuple[np.ndarray, np.ndarray, int]:
    w = model.wrist(side)
    li = model.link_names.index(w.link)
    lq = kin.link_quat[..., li, :]
    pos = kin.link_pos[..., li, :] + quat_rotate(lq, np.broadcast_to(np.array(w.origin_xyz), lq.shape[:-1] + (3,)))
    rot = quat_normalize(quat_mul(lq, np.array(w.origin_quat)))
    return pos, rot, li


def forward_kinematics(model: ChainModel, q) -> dict[str, FramePose]:
    """Poses of every link frame and both wrist frames, keyed by frame name."""
    q = _as_config(model, q)
    if q.ndim != 1:
        raise ValueError("forward_kinematics takes a single configuration")
    kin = kinematics(model, q)
    poses = {
        name: FramePose(kin.link_pos[i].copy(), kin.link_quat[i].copy())
        for i, name in enumerate(model.link_names)
    }
    for w in model.wrists:
        pos, rot, _ = _wrist_point(model, kin, w.side)
        poses[w.name] = FramePose(pos, rot)
    return poses


def wrist_position(model: ChainModel, q, side: str, kin: Kinematics | None = None) -> np.ndarray:
    kin = kin if kin is not None else kinematics(model, q)
    return _wrist_point(model, kin, side)[0]


def wrist_jacobian(model: ChainModel, q, side: str, kin: Kinematics | None = None) -> np.ndarray:
    """Linear-velocity Jacobian of the wrist origin w.r.t. that arm's joints.

    Shape ``(3, k)`` (or ``(B, 3, k)``) with columns in arm-subchain order.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    kin = kin if kin is not None else kinematics(model, q)
    top = _topology(model)
    pos, _, li = _wrist_point(model, kin, side)
    arm = model.subchain(model.wrist(side).subchain)
    axes = kin.joint_axis[..., arm, :]
    lever = pos[..., None, :] - kin.joint_pos[..., arm, :]
    cols = cross3(axes, lever) * top.ancestor_mask[li, arm][:, None]
    return np.swapaxes(cols, -1, -2)


def link_coms(model: ChainModel, kin: Kinematics) -> np.ndarray:
    top = _topology(model)
    return kin.link_pos + quat_rotate(kin.link_quat, np.broadcast_to(top.coms, kin.link_pos.shape))


def center_of_mass(model: ChainModel, q) -> np.ndarray:
    top = _topology(model)
    total = top.masses.sum()
    if total == 0:
        raise ValueError("model has zero total mass")
    coms = link_coms(model, kinematics(model, q))
    return np.einsum("l,...li->...i", top.masses, coms) / total


def potential_energy(model: ChainModel, q) -> np.ndarray:
    top = _topology(model)
    coms = link_coms(model, kinematics(model, q))
    g = np.asarray(model.gravity, dtype=float)
    return -np.einsum("l,...li,i->...", top.masses, coms, g)


def gravity_torques(model: ChainModel, q) -> np.ndarray:
    """Actuator torques holding ``q`` at rest against gravity.

    Gravity-only recursive Newton-Euler: with zero velocity and acceleration
    the forward pass reduces to kinematics, and the backward pass gives each
    joint the support force and moment of the subtree it carries.  The
    leaf-to-root accumulation is evaluated as one subtree sum per joint via
    the ancestor mask.
    """
    q = _as_config(model, q)
    top = _topology(model)
    kin = kinematics(model, q)
    g = np.asarray(model.gravity, dtype=float)
    coms = link_coms(model, kin)
    # per-link support force and its moment about the world origin
    force = np.broadcast_to(-top.masses[:, None] * g, coms.shape)
    moment = cross3(coms, force)
    carried = top.ancestor_mask.T.astype(float)
    sub_force = carried @ force
    sub_moment = carried @ moment
    about_joint = sub_moment - cross3(kin.joint_pos, sub_force)
    return np.einsum("...ji,...ji->...j", kin.joint_axis, about_joint)


def static_torques_with_wrenches(model: ChainModel, q, F_L, F_R) -> np.ndarray:
    """Torques holding ``q`` while forces ``F_L``/``F_R`` act on the hands.

    ``tau = tau_g - J_L^T F_L - J_R^T F_R``; only the arm subchain columns
    receive the Jacobian contribution.
    """
    q = _as_config(model, q)
    tau = gravity_torques(model, q)
    kin = kinematics(model, q)
    for side, F in (("left", F_L), ("right", F_R)):
        F = np.asarray(F, dtype=float)
        if F.shape[-1:] != (3,):
            raise DimensionError(f"{side} force must be a 3-vector, got shape {F.shape}")
        if not np.all(np.isfinite(F)):
            raise NonFiniteError(f"{side} force has non-finite entries")
        if not np.any(F) and all(w.side != side for w in model.wrists):
            continue  # single-arm models may omit a wrist that carries no load
        J = wrist_jacobian(model, q, side, kin=kin)
        arm = model.subchain(model.wrist(side).subchain)
        tau[..., arm] -= np.einsum("...ik,...i->...k", J, F)
    return tau
