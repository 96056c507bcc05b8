"""Evaluation drivers: a quasi-static force-envelope sweep and a closed-loop
episode runner over a pluggable plant.

Neither is a physics simulation.  The sweep asks a purely static question:
with the robot frozen in a standing pose and forces on both hands, does the
ground reaction's center of pressure (CoP) stay inside the support polygon?
The default episode plant is a kinematic low-pass integrator that exercises
the observation, encoder, actor and PD pipeline end to end.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from . import curriculum as cur
from .dynamics import (
    JointState,
    _topology,
    cross3,
    kinematics,
    link_coms,
    quat_rotate,
    static_torques_with_wrenches,
    wrist_position,
)
from .errors import NonFiniteError
from .estimation import estimate_both
from .model import PRESET_IDS, ChainModel, check_within_limits, full_configuration, preset
from .policy import (
    CONTROL_DT,
    HISTORY,
    ObservationFrame,
    ObsScales,
    WeightBundle,
    actor_forward,
    build_actor_obs,
    encoder_forward,
    pd_torque,
    scale_action,
)
from .reward import FootState, RewardBreakdown, RewardContext, RewardInput, RewardParams, evaluate
from .sampling import ForceSampleConfig, RngStream, sample_hand_force, sample_ratio, sample_ub_targets

# foot rectangle around the ankle-roll origin, in metres
FOOT_HEEL = 0.07
FOOT_TOE = 0.18
FOOT_HALF_WIDTH = 0.05
SOLE_DEPTH = 0.05

SUCCESS_HEIGHT_FRACTION = 0.4
SUCCESS_MAX_TILT = 0.7

# sweep cells are processed in fixed-size chunks so that results do not
# depend on the number of worker threads
CHUNK = 64


class PipelineError(NonFiniteError):
    """Non-finite value produced by one stage of the episode pipeline."""

    def __init__(self, stage: str, step: int):
        super().__init__(f"non-finite values in stage {stage!r} at step {step}")
        self.stage = stage
        self.step = step


# --------------------------------------------------------------------------
# support polygon


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices (monotone chain), collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2))))
    if len(pts) < 3:
        return np.array(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


@dataclass(frozen=True)
class SupportPolygon:
    vertices: np.ndarray  # (k, 2) counter-clockwise
    ground_z: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3 or not np.all(np.isfinite(v)):
            raise ValueError("support polygon needs at least 3 finite 2-D vertices")
        e = np.roll(v, -1, axis=0) - v
        nxt = np.roll(e, -1, axis=0)
        turns = e[:, 0] * nxt[:, 1] - e[:, 1] * nxt[:, 0]
        if np.any(np.linalg.norm(e, axis=1) < 1e-12) or np.any(turns <= 1e-15):
            raise ValueError("support polygon must be strictly convex, counter-clockwise and non-degenerate")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cr = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        area = cr.sum() / 2.0
        return np.array([((v[:, 0] + w[:, 0]) * cr).sum(), ((v[:, 1] + w[:, 1]) * cr).sum()]) / (6.0 * area)

    def scaled(self, factor: float) -> "SupportPolygon":
        """Homothety about the centroid."""
        if not factor > 0:
            raise ValueError(f"scale factor must be > 0, got {factor}")
        c = self.centroid
        return SupportPolygon(c + factor * (self.vertices - c), self.ground_z)

    def signed_distance(self, p) -> np.ndarray:
        """Distance to the boundary; positive inside, negative outside."""
        p = np.asarray(p, dtype=float)
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        e = b - a
        length = np.linalg.norm(e, axis=1)
        rel = p[..., None, :] - a
        # inward normal of a CCW polygon is the left normal
        line = (e[:, 0] * rel[..., 1] - e[:, 1] * rel[..., 0]) / length
        inside = np.all(line >= 0, axis=-1)
        t = np.clip(np.einsum("...ki,ki->...k", rel, e) / length**2, 0.0, 1.0)
        seg = np.linalg.norm(rel - t[..., None] * e, axis=-1).min(axis=-1)
        return np.where(inside, line.min(axis=-1), -seg)

    def contains(self, p) -> np.ndarray:
        return self.signed_distance(p) > 0


def _leg_links(model: ChainModel) -> tuple[list[int], list[int]]:
    ankles, knees = [], []
    for side in ("left", "right"):
        ankles.append(model.link_names.index(model.joints[model.joint_index(f"{side}_ankle_roll")].child_link))
        knees.append(model.link_names.index(model.joints[model.joint_index(f"{side}_knee")].child_link))
    return ankles, knees


def foot_corners(model: ChainModel, q) -> np.ndarray:
    """Sole corners ``(..., 2 feet, 4, 3)`` in the world frame."""
    kin = kinematics(model, q)
    ankles, _ = _leg_links(model)
    local = np.array(
        [
            [-FOOT_HEEL, -FOOT_HALF_WIDTH, -SOLE_DEPTH],
            [FOOT_TOE, -FOOT_HALF_WIDTH, -SOLE_DEPTH],
            [FOOT_TOE, FOOT_HALF_WIDTH, -SOLE_DEPTH],
            [-FOOT_HEEL, FOOT_HALF_WIDTH, -SOLE_DEPTH],
        ]
    )
    out = []
    for li in ankles:
        pos = kin.link_pos[..., li, None, :]
        quat = kin.link_quat[..., li, None, :]
        quat = np.broadcast_to(quat, quat.shape[:-2] + (4, 4))
        out.append(pos + quat_rotate(quat, np.broadcast_to(local, pos.shape[:-2] + (4, 3))))
    return np.stack(out, axis=-3)


def support_polygon(model: ChainModel, q) -> SupportPolygon:
    """Convex hull of both sole rectangles; ground at the lowest corner."""
    corners = foot_corners(model, q)
    if corners.ndim != 3:
        raise ValueError("support_polygon takes a single configuration")
    return SupportPolygon(convex_hull(corners[..., :2].reshape(-1, 2)), float(corners[..., 2].min()))


# --------------------------------------------------------------------------
# standing pose for a commanded height


def base_height(model: ChainModel, q) -> np.ndarray:
    """Pelvis height above the ground implied by the leg posture."""
    corners = foot_corners(model, q)
    return -corners[..., 2].min(axis=(-1, -2))


def _squat_config(model: ChainModel, k: np.ndarray, q_ub=None) -> np.ndarray:
    q = np.broadcast_to(full_configuration(model, q_ub=q_ub), np.shape(k) + (model.n,)).copy()
    for side in ("left", "right"):
        q[..., model.joint_index(f"{side}_hip_pitch")] = -0.5 * k
        q[..., model.joint_index(f"{side}_knee")] = k
        q[..., model.joint_index(f"{side}_ankle_pitch")] = -0.5 * k
        for name in ("hip_roll", "hip_yaw", "ankle_roll"):
            q[..., model.joint_index(f"{side}_{name}")] = 0.0
    return q


def squat_knee_angle(model: ChainModel, h_cmd, iterations: int = 52) -> np.ndarray:
    """Knee angle ``k`` with hip/ankle pitch at ``-k/2`` giving base height ``h_cmd``.

    Vectorised bisection.  Heights above the straight-leg height give ``k = 0``.
    """
    h = np.asarray(h_cmd, dtype=float)
    lo_lim = max(0.0, *(model.q_min[model.joint_index(f"{s}_knee")] for s in ("left", "right")))
    hi_lim = min(model.q_max[model.joint_index(f"{s}_knee")] for s in ("left", "right"))
    for s in ("left", "right"):
        for name in ("hip_pitch", "ankle_pitch"):
            j = model.joint_index(f"{s}_{name}")
            hi_lim = min(hi_lim, -2.0 * model.q_min[j])
    lo = np.full(h.shape, lo_lim)
    hi = np.full(h.shape, hi_lim)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        too_high = base_height(model, _squat_config(model, mid)) > h
        lo = np.where(too_high, mid, lo)
        hi = np.where(too_high, hi, mid)
    return 0.5 * (lo + hi)


def standing_pose(model: ChainModel, q_ub, h_cmd) -> np.ndarray:
    return _squat_config(model, squat_knee_angle(model, h_cmd), q_ub=q_ub)


# --------------------------------------------------------------------------
# quasi-static oracle


@dataclass(frozen=True)
class CellOutcome:
    index: int
    config_id: str
    F_L: np.ndarray
    F_R: np.ndarray
    h_cmd: float
    success: bool
    margin: float
    cop: np.ndarray  # (2,) or nan when the feet would lift off
    net_force: np.ndarray  # sum of gravity and hand forces (3,)

    def row(self) -> list[str]:
        fx, fy, fz = (float(v) for v in self.F_L)
        return [self.config_id, repr(fx), repr(fy), repr(fz), repr(float(self.h_cmd)), str(int(self.success)), repr(float(self.margin))]


def _cop(model: ChainModel, q, F_L, F_R, ground_z):
    """CoP of the ground reaction balancing gravity and both hand forces.

    With ``S`` the net applied force and ``M`` its moment about the origin,
    the reaction ``-S`` acting at ``(px, py, z0)`` with no horizontal moment
    requires ``py = (M_x + z0 S_y) / S_z`` and ``px = (z0 S_x - M_y) / S_z``.
    """
    top = _topology(model)
    kin = kinematics(model, q)
    g = np.asarray(model.gravity, dtype=float)
    F_L = np.asarray(F_L, dtype=float)
    F_R = np.asarray(F_R, dtype=float)
    mass = top.masses.sum()
    com = np.einsum("l,...li->...i", top.masses, link_coms(model, kin)) / mass
    p_L = wrist_position(model, q, "left", kin=kin)
    p_R = wrist_position(model, q, "right", kin=kin)
    W = mass * g
    S = W + F_L + F_R
    M = cross3(com, np.broadcast_to(W, com.shape)) + cross3(p_L, F_L) + cross3(p_R, F_R)
    z0 = np.asarray(ground_z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        px = (z0 * S[..., 0] - M[..., 1]) / S[..., 2]
        py = (M[..., 0] + z0 * S[..., 1]) / S[..., 2]
    return np.stack([px, py], axis=-1), S


def quasi_static_feasible(
    model: ChainModel,
    q_full,
    F_L,
    F_R,
    polygon: SupportPolygon,
    *,
    index: int = 0,
    config_id: str = "",
    h_cmd: float = float("nan"),
) -> CellOutcome:
    """Success iff the feet stay loaded and the CoP is strictly inside ``polygon``."""
    q_full = np.asarray(q_full, dtype=float)
    check_within_limits(model, range(model.n), q_full)
    cop, S = _cop(model, q_full, F_L, F_R, polygon.ground_z)
    return _outcome(index, config_id, F_L, F_R, h_cmd, cop, S, polygon)


def _outcome(index, config_id, F_L, F_R, h_cmd, cop, S, polygon) -> CellOutcome:
    if S[2] < 0:
        margin = float(polygon.signed_distance(cop))
    else:
        margin = -math.inf
        cop = np.full(2, np.nan)
    return CellOutcome(
        index=int(index),
        config_id=config_id,
        F_L=np.asarray(F_L, dtype=float),
        F_R=np.asarray(F_R, dtype=float),
        h_cmd=float(h_cmd),
        success=margin > 0,
        margin=margin,
        cop=cop,
        net_force=S,
    )


# --------------------------------------------------------------------------
# sweep

FX_BOUNDS = (-20.0, 20.0)
FY_BOUNDS = (-20.0, 20.0)
FZ_BOUNDS = (-30.0, 30.0)
H_CMD_BOUNDS = (0.7, 1.0)


@dataclass(frozen=True)
class SweepSpec:
    """Force-envelope sweep; the same force is applied to both hands.

    ``mode="grid"`` evaluates the ``grid`` lattice over the force ranges
    (``h_cmd`` drawn per cell), ``mode="random"`` draws ``trials`` cells.
    """

    config_ids: tuple[str, ...] = ("C1",)
    fx_range: tuple[float, float] = FX_BOUNDS
    fy_range: tuple[float, float] = FY_BOUNDS
    fz_range: tuple[float, float] = FZ_BOUNDS
    h_cmd_range: tuple[float, float] = H_CMD_BOUNDS
    grid: tuple[int, int, int] = (9, 9, 5)
    mode: str = "grid"
    trials: int = 500
    horizon: float = 10.0
    seed: int = 0
    polygon_scale: float = 1.0

    def __post_init__(self):
        ids = tuple(str(c).upper() for c in self.config_ids)
        if not ids:
            raise ValueError("sweep needs at least one configuration")
        for c in ids:
            if c not in PRESET_IDS:
                raise ValueError(f"unknown configuration {c!r}; expected one of {', '.join(PRESET_IDS)}")
        object.__setattr__(self, "config_ids", ids)
        for name, bounds in (
            ("fx_range", FX_BOUNDS),
            ("fy_range", FY_BOUNDS),
            ("fz_range", FZ_BOUNDS),
            ("h_cmd_range", H_CMD_BOUNDS),
        ):
            lo, hi = (float(v) for v in getattr(self, name))
            if not (bounds[0] <= lo <= hi <= bounds[1]):
                raise ValueError(f"{name} must satisfy {bounds[0]} <= low <= high <= {bounds[1]}, got ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))
        if self.mode not in ("grid", "random"):
            raise ValueError(f"mode must be 'grid' or 'random', got {self.mode!r}")
        grid = tuple(int(g) for g in self.grid)
        if len(grid) != 3 or min(grid) < 1:
            raise ValueError(f"grid must be three positive counts, got {self.grid}")
        object.__setattr__(self, "grid", grid)
        if self.mode == "random" and self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if not self.polygon_scale > 0:
            raise ValueError(f"polygon_scale must be > 0, got {self.polygon_scale}")

    @property
    def cells_per_config(self) -> int:
        return int(np.prod(self.grid)) if self.mode == "grid" else int(self.trials)


def _axis(rng: tuple[float, float], n: int) -> np.ndarray:
    return np.array([rng[0]]) if n == 1 and rng[0] == rng[1] else np.linspace(rng[0], rng[1], n)


def sweep_cells(spec: SweepSpec) -> tuple[np.ndarray, np.ndarray]:
    """Forces ``(N, 3)`` and ``h_cmd`` ``(N,)`` for one configuration.

    Every cell ``i`` draws from its own stream ``RngStream(seed, i)``.
    """
    if spec.mode == "grid":
        nx, ny, nz = spec.grid
        fx, fy, fz = np.meshgrid(
            _axis(spec.fx_range, nx), _axis(spec.fy_range, ny), _axis(spec.fz_range, nz), indexing="ij"
        )
        forces = np.stack([fx.ravel(), fy.ravel(), fz.ravel()], axis=1)
        h = np.array([RngStream(spec.seed, i).uniform(*spec.h_cmd_range) for i in range(len(forces))])
        return forces, h
    forces = np.empty((spec.trials, 3))
    h = np.empty(spec.trials)
    for i in range(spec.trials):
        r = RngStream(spec.seed, i)
        forces[i] = [r.uniform(*spec.fx_range), r.uniform(*spec.fy_range), r.uniform(*spec.fz_range)]
        h[i] = r.uniform(*spec.h_cmd_range)
    return forces, h


def _eval_chunk(model, q_ub, config_id, start, forces, h, knee, polygon_scale):
    q = _squat_config(model, knee, q_ub=q_ub)
    corners = foot_corners(model, q)
    ground = corners[..., 2].min(axis=(-1, -2))
    cop, S = _cop(model, q, forces, forces, ground)
    out = []
    for k in range(len(h)):
        poly = SupportPolygon(convex_hull(corners[k, ..., :2].reshape(-1, 2)), float(ground[k]))
        if polygon_scale != 1.0:
            poly = poly.scaled(polygon_scale)
        out.append(_outcome(start + k, config_id, forces[k], forces[k], h[k], cop[k], S[k], poly))
    return out


def run_sweep(spec: SweepSpec, model: ChainModel, threads: int = 1) -> dict[str, list[CellOutcome]]:
    """Evaluate every cell for every configuration; results keyed by config id.

    Output is independent of ``threads``: chunks have a fixed size and are
    merged by cell index.
    """
    forces, h = sweep_cells(spec)
    starts = range(0, len(h), CHUNK)
    for cid in spec.config_ids:
        check_within_limits(model, model.subchain("upper_body"), preset(cid).q_ub)

    def pool_map(fn, items):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    # the squat pose depends on h_cmd only, so it is shared by all configurations
    knees = dict(zip(starts, pool_map(lambda s: squat_knee_angle(model, h[s : s + CHUNK]), starts)))
    jobs = [(cid, s) for cid in spec.config_ids for s in starts]

    def work(job):
        cid, s = job
        sl = slice(s, s + CHUNK)
        return _eval_chunk(model, preset(cid).q_ub, cid, s, forces[sl], h[sl], knees[s], spec.polygon_scale)

    results: dict[str, list[CellOutcome]] = {cid: [] for cid in spec.config_ids}
    for part in pool_map(work, jobs):
        for cell in part:
            results[cell.config_id].append(cell)
    for cells in results.values():
        cells.sort(key=lambda c: c.index)
    return results


def success_fractions(results: dict[str, list[CellOutcome]]) -> dict[str, float]:
    return {cid: (sum(c.success for c in cells) / len(cells) if cells else float("nan")) for cid, cells in results.items()}


CSV_HEADER = ("cfg", "fx", "fy", "fz", "h_cmd", "success", "margin")


def sweep_csv(results: dict[str, list[CellOutcome]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for cells in results.values():
        for c in cells:
            w.writerow(c.row())
    return buf.getvalue()


def sweep_summary(spec: SweepSpec, results: dict[str, list[CellOutcome]]) -> dict:
    configs = {}
    for cid, cells in results.items():
        n_ok = sum(c.success for c in cells)
        configs[cid] = {
            "name": preset(cid).name,
            "cells": len(cells),
            "successes": n_ok,
            "success_fraction": n_ok / len(cells) if cells else None,
        }
    return {
        "mode": spec.mode,
        "seed": spec.seed,
        "grid": list(spec.grid) if spec.mode == "grid" else None,
        "trials": spec.trials if spec.mode == "random" else None,
        "polygon_scale": spec.polygon_scale,
        "oracle": "quasi-static center of pressure",
        "configs": configs,
    }


def sweep_json(spec: SweepSpec, results: dict[str, list[CellOutcome]]) -> str:
    return json.dumps(sweep_summary(spec, results), indent=2, sort_keys=True) + "\n"


def sweep_svg(results: dict[str, list[CellOutcome]], cell: int = 12) -> str:
    """One panel per configuration: cells on the (fx, fz) plane, green where
    every cell sharing those coordinates succeeded, red where none did and
    amber otherwise."""
    panels = []
    x0 = 10
    height = 0
    for cid, cells in results.items():
        fxs = sorted({float(c.F_L[0]) for c in cells})
        fzs = sorted({float(c.F_L[2]) for c in cells})
        if len(fxs) * len(fzs) > 4096:
            fxs = fzs = []
        agg: dict[tuple[int, int], list[bool]] = {}
        for c in cells:
            if fxs:
                agg.setdefault((fxs.index(float(c.F_L[0])), fzs.index(float(c.F_L[2]))), []).append(c.success)
        rects = [f'<text x="{x0}" y="14" font-size="12" font-family="monospace">{cid}</text>']
        for (i, k), oks in sorted(agg.items()):
            colour = "#2e9e44" if all(oks) else "#c0392b" if not any(oks) else "#e6a817"
            y = 20 + (len(fzs) - 1 - k) * cell
            rects.append(
                f'<rect x="{x0 + i * cell}" y="{y}" width="{cell - 1}" height="{cell - 1}" fill="{colour}"/>'
            )
        panels.append("\n".join(rects))
        x0 += max(len(fxs), 3) * cell + 20
        height = max(height, 30 + len(fzs) * cell)
    body = "\n".join(panels)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{x0}" height="{max(height, 40)}">\n'
        f"{body}\n</svg>\n"
    )


# --------------------------------------------------------------------------
# episodes


@dataclass
class PlantState:
    q: np.ndarray
    qd: np.ndarray
    h_base: float
    g: np.ndarray  # projected gravity (3,)
    omega: np.ndarray  # base angular velocity (3,)
    v: np.ndarray  # base linear velocity (3,)
    feet: tuple[FootState, FootState]
    knees_lateral: np.ndarray


class Plant(Protocol):
    def reset(self, q0: np.ndarray) -> PlantState: ...

    def step(self, q_target: np.ndarray, tau: np.ndarray, F_L: np.ndarray, F_R: np.ndarray, dt: float) -> PlantState: ...


class KinematicPlant:
    """Non-physical stand-in: joints follow their targets through a first-order
    lag, the pelvis height follows the legs, and the base tips over at a fixed
    rate while the quasi-static CoP lies outside the feet."""

    def __init__(self, model: ChainModel, time_constant: float = 0.05, tip_rate: float = 1.0):
        if not time_constant > 0:
            raise ValueError("time_constant must be > 0")
        self.model = model
        self.time_constant = time_constant
        self.tip_rate = tip_rate
        self._q = model.q_default.copy()
        self._tilt = 0.0
        self._foot_z = np.zeros(2)
        _, self._knees = _leg_links(model)

    def _state(self, qd: np.ndarray, F_L, F_R, foot_v: np.ndarray) -> PlantState:
        m = self.model
        corners = foot_corners(m, self._q)
        h_legs = float(-corners[..., 2].min())
        poly = support_polygon(m, self._q)
        cop, S = _cop(m, self._q, F_L, F_R, poly.ground_z)
        reaction = -S
        feet = tuple(
            FootState(
                force=0.5 * reaction,
                velocity=foot_v[i],
                heights=corners[i, :, 2] - poly.ground_z,
                lateral=corners[i, :, 1],
            )
            for i in range(2)
        )
        kin = kinematics(m, self._q)
        return PlantState(
            q=self._q.copy(),
            qd=qd,
            h_base=h_legs * math.cos(self._tilt),
            g=np.array([math.sin(self._tilt), 0.0, -math.cos(self._tilt)]),
            omega=np.zeros(3),
            v=np.zeros(3),
            feet=feet,
            knees_lateral=kin.link_pos[self._knees, 1].copy(),
        )

    def reset(self, q0) -> PlantState:
        self._q = np.clip(np.asarray(q0, dtype=float), self.model.q_min, self.model.q_max)
        self._tilt = 0.0
        return self._state(np.zeros(self.model.n), np.zeros(3), np.zeros(3), np.zeros((2, 3)))

    def step(self, q_target, tau, F_L, F_R, dt) -> PlantState:
        m = self.model
        alpha = dt / (dt + self.time_constant)
        before = foot_corners(m, self._q).mean(axis=1)
        q_new = np.clip(self._q + alpha * (np.asarray(q_target, dtype=float) - self._q), m.q_min, m.q_max)
        qd = (q_new - self._q) / dt
        self._q = q_new
        poly = support_polygon(m, self._q)
        cop, S = _cop(m, self._q, F_L, F_R, poly.ground_z)
        feasible = S[2] < 0 and poly.signed_distance(cop) > 0
        if not feasible or self._tilt > 0:
            self._tilt = min(math.pi / 2, self._tilt + self.tip_rate * dt)
        foot_v = (foot_corners(m, self._q).mean(axis=1) - before) / dt
        return self._state(qd, F_L, F_R, foot_v)


class Disturbance(Protocol):
    def forces(self, step: int, resample: bool, rng: RngStream) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class ConstantForces:
    F_L: tuple[float, float, float] = (0.0, 0.0, 0.0)
    F_R: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def forces(self, step, resample, rng):
        return np.asarray(self.F_L, dtype=float), np.asarray(self.F_R, dtype=float)


@dataclass
class RandomForces:
    """Redraws both hand forces at every resample event (and at step 0)."""

    cfg: ForceSampleConfig = field(default_factory=ForceSampleConfig)
    _current: tuple[np.ndarray, np.ndarray] | None = None

    def forces(self, step, resample, rng):
        if self._current is None or resample:
            self._current = (sample_hand_force(self.cfg, rng), sample_hand_force(self.cfg, rng))
        return self._current


def default_gains(model: ChainModel) -> tuple[np.ndarray, np.ndarray]:
    """Leg PD gains; the robot's values are not published, these are package defaults."""
    kp, kd = [], []
    for i in model.subchain("lower_body"):
        name = model.joint_names[i]
        if "_hip_" in name:
            kp.append(200.0), kd.append(5.0)
        elif name.endswith("_knee"):
            kp.append(300.0), kd.append(6.0)
        else:
            kp.append(40.0), kd.append(2.0)
    return np.array(kp), np.array(kd)


@dataclass(frozen=True)
class EpisodeConfig:
    config_id: str = "C1"
    h_cmd: float = 1.0
    dt: float = CONTROL_DT
    horizon: float = 10.0
    s_a: float = 0.25
    ub_mode: str = "preset"  # or "curriculum"
    seed: int = 0
    scales: ObsScales = ObsScales()
    reward_params: RewardParams = RewardParams()
    reward_weights: tuple[tuple[str, float], ...] = ()
    curriculum: cur.CurriculumState = cur.CurriculumState()
    estimator_damping: float = 0.0
    estimator_cutoff: float = 1e-6
    kp: tuple[float, ...] | None = None
    kd: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be > 0")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ValueError(f"horizon {self.horizon} is not a whole number of {self.dt} s steps")
        if self.ub_mode not in ("preset", "curriculum"):
            raise ValueError(f"ub_mode must be 'preset' or 'curriculum', got {self.ub_mode!r}")
        if str(self.config_id).upper() not in PRESET_IDS:
            raise ValueError(f"unknown configuration {self.config_id!r}")
        object.__setattr__(self, "config_id", str(self.config_id).upper())

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class StepRecord:
    step: int
    t: float
    rho_a: float
    resample: bool
    h_base: float
    tilt: float
    F_L: np.ndarray
    F_R: np.ndarray
    F_L_hat: np.ndarray
    F_R_hat: np.ndarray
    z: np.ndarray
    action: np.ndarray
    q_target_lb: np.ndarray
    tau_pd: np.ndarray
    reward: RewardBreakdown


@dataclass(frozen=True)
class EpisodeTrace:
    config: EpisodeConfig
    steps: tuple[StepRecord, ...]
    success: bool
    resample_events: int
    final_rho_a: float

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["step", "t", "rho_a", "resample", "h_base", "tilt"]
        head += [f"{p}_{a}" for p in ("F_L", "F_R", "F_L_hat", "F_R_hat") for a in "xyz"]
        head += [f"a_{i}" for i in range(12)] + [f"q_target_{i}" for i in range(12)]
        head += [f"tau_{i}" for i in range(12)] + ["r_height", "r_total"]
        w.writerow(head)
        for s in self.steps:
            row = [s.step, repr(s.t), repr(s.rho_a), int(s.resample), repr(s.h_base), repr(s.tilt)]
            for v in (s.F_L, s.F_R, s.F_L_hat, s.F_R_hat, s.action, s.q_target_lb, s.tau_pd):
                row += [repr(float(x)) for x in v]
            row += [repr(s.reward.weighted("height_tracking")), repr(s.reward.total)]
            w.writerow(row)
        return buf.getvalue()


def _finite(stage: str, step: int, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a, dtype=float))):
            raise PipelineError(stage, step)


def run_episode(
    model: ChainModel,
    weights: WeightBundle,
    config: EpisodeConfig = EpisodeConfig(),
    disturbance: Disturbance | None = None,
    plant: Plant | None = None,
) -> EpisodeTrace:
    """Closed loop: plant -> torques -> force estimate -> z -> actor -> PD -> plant.

    Upper-body targets are the preset (``ub_mode="preset"``) or curriculum
    draws renewed at every resample event (``ub_mode="curriculum"``).  All
    randomness comes from ``RngStream(config.seed, 0)``.
    """
    rng = RngStream(config.seed, 0)
    disturbance = disturbance if disturbance is not None else ConstantForces()
    plant = plant if plant is not None else KinematicPlant(model)
    ctx = RewardContext.from_model(model)
    weights_override = dict(config.reward_weights) or None
    ub = model.subchain("upper_body")
    lb = model.subchain("lower_body")
    q0_ub = preset(config.config_id).q_ub
    q0_lb = model.q_default[lb]
    kp_d, kd_d = default_gains(model)
    kp = np.asarray(config.kp, dtype=float) if config.kp is not None else kp_d
    kd = np.asarray(config.kd, dtype=float) if config.kd is not None else kd_d
    if kp.shape != (len(lb),) or kd.shape != (len(lb),):
        raise ValueError(f"PD gains must have {len(lb)} entries")

    q_ub_target = np.array(q0_ub)
    state = plant.reset(full_configuration(model, q_ub=q_ub_target))
    cstate = config.curriculum
    frames: deque = deque(maxlen=HISTORY)
    latents: deque = deque(maxlen=HISTORY)
    a_prev = np.zeros(len(lb))
    a_prev2 = np.zeros(len(lb))
    qd_prev = state.qd
    records = []
    ok = True
    resamples = 0
    resample = False
    dt = config.dt
    for k in range(config.n_steps):
        F_L, F_R = disturbance.forces(k, resample or k == 0, rng)
        _finite("disturbance", k, F_L, F_R)
        tau_meas = static_torques_with_wrenches(model, state.q, F_L, F_R)
        _finite("measured torque", k, tau_meas)
        est_L, est_R = estimate_both(
            model, JointState(state.q, state.qd, tau_meas), config.estimator_damping, config.estimator_cutoff
        )
        _finite("force estimate", k, est_L.force, est_R.force)
        z = encoder_forward(weights, state.q[ub], est_L.force, est_R.force)
        _finite("encoder", k, z)
        frame = ObservationFrame(
            command=np.zeros(3),
            h_cmd=config.h_cmd,
            omega=state.omega,
            g=state.g,
            q_err=state.q - model.q_default,
            qd=state.qd,
            a_prev=a_prev,
        )
        if not frames:
            frames.extend([frame] * HISTORY)
            latents.extend([z] * HISTORY)
        frames.appendleft(frame)
        latents.appendleft(z)
        obs = build_actor_obs(list(frames), list(latents), config.scales)
        _finite("observation", k, obs)
        a = actor_forward(weights, obs)
        _finite("actor", k, a)
        q_target_lb = scale_action(a, q0_lb, config.s_a)
        tau_pd = pd_torque(q_target_lb, state.q[lb], state.qd[lb], kp, kd, model.torque_limits[lb])
        _finite("pd", k, q_target_lb, tau_pd)

        q_target = np.empty(model.n)
        q_target[:] = model.q_default
        q_target[ub] = q_ub_target
        q_target[lb] = q_target_lb
        new_state = plant.step(q_target, tau_pd, F_L, F_R, dt)
        _finite("plant", k, new_state.q, new_state.qd, [new_state.h_base], new_state.g)

        tau_full = tau_meas.copy()
        tau_full[lb] = tau_pd
        rin = RewardInput(
            h_base=new_state.h_base,
            h_cmd=config.h_cmd,
            v=new_state.v,
            omega_xy=new_state.omega[:2],
            g_xy=new_state.g[:2],
            q=new_state.q,
            qd=new_state.qd,
            qdd=(new_state.qd - qd_prev) / dt,
            q_target=q_target,
            a_t=a,
            a_prev=a_prev,
            a_prev2=a_prev2,
            tau=tau_full,
            feet=new_state.feet,
            knees_lateral=new_state.knees_lateral,
            command_is_zero=True,
        )
        breakdown = evaluate(rin, ctx, weights_override, config.reward_params)
        _finite("reward", k, [breakdown.total])

        cstate, _ = cur.observe(cstate, breakdown.weighted("height_tracking"), dt)
        cstate, resample = cur.tick(cstate, dt)
        if resample:
            resamples += 1
            if config.ub_mode == "curriculum":
                rho_prime = float(sample_ratio(cstate.rho_a, rng=rng))
                q_ub_target = sample_ub_targets(model, q0_ub, rho_prime, rng)

        tilt = float(np.linalg.norm(new_state.g[:2]))
        ok = ok and new_state.h_base >= SUCCESS_HEIGHT_FRACTION * config.h_cmd and tilt <= SUCCESS_MAX_TILT
        records.append(
            StepRecord(
                step=k,
                t=(k + 1) * dt,
                rho_a=cstate.rho_a,
                resample=resample,
                h_base=new_state.h_base,
                tilt=tilt,
                F_L=np.asarray(F_L, dtype=float),
                F_R=np.asarray(F_R, dtype=float),
                F_L_hat=est_L.force,
                F_R_hat=est_R.force,
                z=z,
                action=a,
                q_target_lb=q_target_lb,
                tau_pd=tau_pd,
                reward=breakdown,
            )
        )
        a_prev2, a_prev = a_prev, a
        qd_prev = new_state.qd
        state = new_state
    return EpisodeTrace(config, tuple(records), ok, resamples, cstate.rho_a)


def run_episodes(
    model: ChainModel,
    weights: WeightBundle,
    config: EpisodeConfig,
    count: int,
    disturbance: Callable[[], Disturbance] | None = None,
    threads: int = 1,
) -> list[EpisodeTrace]:
    """``count`` independent episodes; episode ``i`` uses seed ``config.seed + i``.

    ``disturbance`` is a factory so that stateful schedules are not shared.
    """

    def one(i: int) -> EpisodeTrace:
        dist = disturbance() if disturbance is not None else ConstantForces()
        return run_episode(model, weights, replace(config, seed=config.seed + i), dist)

    if threads > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(count)))
    return [one(i) for i in range(count)]
