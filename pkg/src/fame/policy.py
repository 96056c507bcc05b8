"""Observation construction, network inference and the joint PD law.

Networks (forward only, ELU between layers, weights stored ``(out, in)``):

=================  =============================  ==================
prefix             layer sizes                    used at inference
=================  =============================  ==================
``encoder``        21 -> 256 -> 128 -> 8          yes
``him.encoder``    252 -> 256 -> 256 -> 35        yes
``him.target``     84 -> 256 -> 256 -> 32         no (shape-checked)
``him.proto``      embedding 64 x 32              no (shape-checked)
``actor``          119 -> 512 -> 256 -> 256 -> 12 yes
``critic``         87 -> 512 -> 256 -> 256 -> 1   yes
=================  =============================  ==================

Observation layout is documented by :func:`actor_obs_layout` and
:func:`critic_obs_layout`; history blocks are ordered newest first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, NonFiniteError

CONTROL_DT = 0.02  # 50 Hz

N_DOF = 27
N_ACT = 12
N_UB = 15
LATENT_DIM = 8
HIM_DIM = 35
HISTORY = 3
FRAME_DIM = 3 + 1 + 3 + 3 + 2 * N_DOF + N_ACT  # 76
ACTOR_PROPRIO_DIM = HISTORY * FRAME_DIM  # 228
ACTOR_LATENT_DIM = HISTORY * LATENT_DIM  # 24
ACTOR_INPUT_DIM = ACTOR_PROPRIO_DIM + ACTOR_LATENT_DIM  # 252
HEAD_INPUT_DIM = FRAME_DIM + LATENT_DIM + HIM_DIM  # 119
CRITIC_INPUT_DIM = FRAME_DIM + LATENT_DIM + 3  # 87
ENCODER_INPUT_DIM = N_UB + 3 + 3  # 21

_MLPS = {
    "encoder": (ENCODER_INPUT_DIM, 256, 128, LATENT_DIM),
    "him.encoder": (ACTOR_INPUT_DIM, 256, 256, HIM_DIM),
    "him.target": (FRAME_DIM + LATENT_DIM, 256, 256, 32),
    "actor": (HEAD_INPUT_DIM, 512, 256, 256, N_ACT),
    "critic": (CRITIC_INPUT_DIM, 512, 256, 256, 1),
}


def _expected_shapes() -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for prefix, sizes in _MLPS.items():
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            shapes[f"{prefix}.{2 * k}.weight"] = (n_out, n_in)
            shapes[f"{prefix}.{2 * k}.bias"] = (n_out,)
    shapes["him.proto.weight"] = (64, 32)
    return shapes


EXPECTED_SHAPES: Mapping[str, tuple[int, ...]] = _expected_shapes()


class WeightError(ValueError):
    pass


class ShapeError(DimensionError):
    pass


class WeightShapeError(WeightError, DimensionError):
    """The tensor set or a tensor shape disagrees with the network layout."""


class WeightValueError(WeightError, NonFiniteError):
    pass


# --------------------------------------------------------------------------
# MLP


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass(frozen=True)
class Mlp:
    """Dense layers with ELU after every layer but the last."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def forward(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        if h.shape[-1] != self.in_dim:
            raise ShapeError(f"input has {h.shape[-1]} features, layer expects {self.in_dim}")
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            h = h @ W.T + b
            if k < last:
                h = elu(h)
        return h

    def input_jacobian(self, x) -> np.ndarray:
        """d(output)/d(input) at a single input vector, by the chain rule."""
        h = np.asarray(x, dtype=np.float64)
        J = np.eye(h.shape[0])
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            pre = W @ h + b
            J = W @ J
            if k < last:
                J = elu_grad(pre)[:, None] * J
                h = elu(pre)
            else:
                h = pre
        return J


# --------------------------------------------------------------------------
# weight bundle and container format


@dataclass(frozen=True)
class WeightBundle:
    tensors: Mapping[str, np.ndarray]

    def __post_init__(self):
        validate_tensors(self.tensors)
        frozen = {}
        for name, arr in self.tensors.items():
            a = np.array(arr, dtype=np.float32)
            a.setflags(write=False)
            frozen[name] = a
        object.__setattr__(self, "tensors", frozen)
        mlps = {
            prefix: Mlp(
                tuple(
                    (
                        frozen[f"{prefix}.{2 * k}.weight"].astype(np.float64),
                        frozen[f"{prefix}.{2 * k}.bias"].astype(np.float64),
                    )
                    for k in range(len(sizes) - 1)
                )
            )
            for prefix, sizes in _MLPS.items()
        }
        object.__setattr__(self, "_mlps", mlps)

    def mlp(self, prefix: str) -> Mlp:
        return self._mlps[prefix]


def validate_tensors(tensors: Mapping[str, np.ndarray]) -> None:
    missing = sorted(set(EXPECTED_SHAPES) - set(tensors))
    if missing:
        raise WeightShapeError(f"missing tensor(s): {', '.join(missing)}")
    extra = sorted(set(tensors) - set(EXPECTED_SHAPES))
    if extra:
        raise WeightShapeError(f"unexpected tensor(s): {', '.join(extra)}")
    for name, shape in EXPECTED_SHAPES.items():
        arr = np.asarray(tensors[name])
        if arr.shape != shape:
            raise WeightShapeError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise WeightValueError(f"tensor {name!r} has non-finite values")


def zero_bundle() -> WeightBundle:
    return WeightBundle({k: np.zeros(s, dtype=np.float32) for k, s in EXPECTED_SHAPES.items()})


def random_bundle(seed: int = 0, gain: float = 1.0) -> WeightBundle:
    """Fan-in scaled Gaussian weights, for tests and smoke runs."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in EXPECTED_SHAPES.items():
        fan_in = shape[-1] if len(shape) == 2 else 1
        std = gain / math.sqrt(fan_in) if name.endswith("weight") else 0.01
        tensors[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    return WeightBundle(tensors)


MANIFEST_HEADER = "# fame weight manifest v1"


def save_weights(bundle: WeightBundle, manifest_path: str | Path, data_name: str | None = None) -> Path:
    """Write ``<manifest>`` (text) and its little-endian float32 data file."""
    manifest_path = Path(manifest_path)
    data_name = data_name or manifest_path.with_suffix(".bin").name
    lines = [MANIFEST_HEADER, f"data {data_name}"]
    chunks = []
    offset = 0
    for name in EXPECTED_SHAPES:
        arr = np.ascontiguousarray(bundle.tensors[name], dtype="<f4")
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"{name} {shape} f32le {offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    (manifest_path.parent / data_name).write_bytes(b"".join(chunks))
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


def load_weights(manifest_path: str | Path) -> WeightBundle:
    manifest_path = Path(manifest_path)
    try:
        lines = manifest_path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise WeightError(f"weight manifest not found: {manifest_path}") from None
    entries = [ln.split() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not entries or entries[0][0] != "data" or len(entries[0]) != 2:
        raise WeightError(f"{manifest_path}: first entry must be 'data <file>'")
    data_path = manifest_path.parent / entries[0][1]
    try:
        blob = data_path.read_bytes()
    except FileNotFoundError:
        raise WeightError(f"weight data file not found: {data_path}") from None
    tensors = {}
    for lineno, parts in enumerate(entries[1:], start=2):
        if len(parts) != 4:
            raise WeightError(f"{manifest_path}: malformed entry {' '.join(parts)!r}")
        name, shape_s, dtype, offset_s = parts
        if dtype != "f32le":
            raise WeightError(f"tensor {name!r}: unsupported element type {dtype!r}")
        try:
            shape = tuple(int(s) for s in shape_s.split("x"))
            offset = int(offset_s)
        except ValueError:
            raise WeightError(f"tensor {name!r}: bad shape or offset") from None
        if name in tensors:
            raise WeightError(f"tensor {name!r} listed twice")
        count = int(np.prod(shape))
        end = offset + 4 * count
        if offset < 0 or end > len(blob):
            raise WeightError(f"tensor {name!r}: data range [{offset}, {end}) outside file")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
    return WeightBundle(tensors)


# --------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class ObsScales:
    command: tuple[float, float, float] = (2.0, 2.0, 0.25)
    h_cmd: float = 1.0
    ang_vel: float = 0.25
    gravity: float = 1.0
    dof_pos: float = 1.0
    dof_vel: float = 0.05
    lin_vel: float = 2.0

    @classmethod
    def from_dict(cls, data: Mapping) -> "ObsScales":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown observation scale(s): {', '.join(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else float(v) for k, v in data.items()})


@dataclass(frozen=True)
class ObservationFrame:
    command: np.ndarray  # (3,)
    h_cmd: float
    omega: np.ndarray  # (3,) body-frame angular velocity
    g: np.ndarray  # (3,) projected gravity
    q_err: np.ndarray  # (27,) q - q_default
    qd: np.ndarray  # (27,)
    a_prev: np.ndarray  # (12,)

    def vector(self, scales: ObsScales = ObsScales()) -> np.ndarray:
        parts = [
            np.asarray(self.command, dtype=float) * np.asarray(scales.command),
            [float(self.h_cmd) * scales.h_cmd],
            np.asarray(self.omega, dtype=float) * scales.ang_vel,
            np.asarray(self.g, dtype=float) * scales.gravity,
            np.asarray(self.q_err, dtype=float) * scales.dof_pos,
            np.asarray(self.qd, dtype=float) * scales.dof_vel,
            np.asarray(self.a_prev, dtype=float),
        ]
        sizes = (3, 1, 3, 3, N_DOF, N_DOF, N_ACT)
        for part, size, name in zip(parts, sizes, ("command", "h_cmd", "omega", "g", "q_err", "qd", "a_prev")):
            if np.shape(part) != (size,):
                raise ShapeError(f"observation field {name!r} has shape {np.shape(part)}, expected ({size},)")
        out = np.concatenate(parts)
        assert out.shape == (FRAME_DIM,)
        return out

    @classmethod
    def zeros(cls, h_cmd: float = 0.0) -> "ObservationFrame":
        return cls(np.zeros(3), h_cmd, np.zeros(3), np.zeros(3), np.zeros(N_DOF), np.zeros(N_DOF), np.zeros(N_ACT))


_FRAME_FIELDS = (("command", 3), ("h_cmd", 1), ("omega", 3), ("g", 3), ("q_err", N_DOF), ("qd", N_DOF), ("a_prev", N_ACT))


def frame_layout(prefix: str = "", start: int = 0) -> list[tuple[str, int, int]]:
    out = []
    for name, size in _FRAME_FIELDS:
        out.append((f"{prefix}{name}", start, start + size))
        start += size
    return out


def actor_obs_layout() -> list[tuple[str, int, int]]:
    """``(name, start, stop)`` for every slot of the 252-vector actor input."""
    out = []
    for k in range(HISTORY):
        out += frame_layout(f"obs[t-{k}].", k * FRAME_DIM)
    for k in range(HISTORY):
        start = ACTOR_PROPRIO_DIM + k * LATENT_DIM
        out.append((f"z[t-{k}]", start, start + LATENT_DIM))
    return out


def critic_obs_layout() -> list[tuple[str, int, int]]:
    out = frame_layout("obs[t].")
    out.append(("z[t]", FRAME_DIM, FRAME_DIM + LATENT_DIM))
    out.append(("v_base", FRAME_DIM + LATENT_DIM, CRITIC_INPUT_DIM))
    return out


def build_actor_obs(
    history: Sequence[ObservationFrame], latents: Sequence[np.ndarray], scales: ObsScales = ObsScales()
) -> np.ndarray:
    """Stack 3 frames and 3 latents, newest first, into the 252-vector."""
    if len(history) != HISTORY:
        raise ShapeError(f"need {HISTORY} observation frames, got {len(history)}")
    if len(latents) != HISTORY:
        raise ShapeError(f"need {HISTORY} latent vectors, got {len(latents)}")
    zs = [np.asarray(z, dtype=float) for z in latents]
    for z in zs:
        if z.shape != (LATENT_DIM,):
            raise ShapeError(f"latent has shape {z.shape}, expected ({LATENT_DIM},)")
    out = np.concatenate([f.vector(scales) for f in history] + zs)
    assert out.shape == (ACTOR_INPUT_DIM,)
    return out


def build_critic_obs(
    frame: ObservationFrame, z: np.ndarray, v_base: np.ndarray, scales: ObsScales = ObsScales()
) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    v = np.asarray(v_base, dtype=float)
    if z.shape != (LATENT_DIM,) or v.shape != (3,):
        raise ShapeError(f"latent/base velocity shapes {z.shape}/{v.shape}, expected (8,)/(3,)")
    out = np.concatenate([frame.vector(scales), z, v * scales.lin_vel])
    assert out.shape == (CRITIC_INPUT_DIM,)
    return out


# --------------------------------------------------------------------------
# forward passes


def _check_vec(x, size: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (size,):
        raise ShapeError(f"{name} has shape {x.shape}, expected ({size},)")
    return x


def encoder_forward(weights: WeightBundle, q_ub, F_L, F_R) -> np.ndarray:
    x = np.concatenate([_check_vec(q_ub, N_UB, "q_ub"), _check_vec(F_L, 3, "F_L"), _check_vec(F_R, 3, "F_R")])
    z = weights.mlp("encoder").forward(x)
    assert z.shape == (LATENT_DIM,)
    return z


def him_forward(weights: WeightBundle, actor_input) -> np.ndarray:
    x = _check_vec(actor_input, ACTOR_INPUT_DIM, "actor input")
    return weights.mlp("him.encoder").forward(x)


def actor_forward(weights: WeightBundle, actor_input) -> np.ndarray:
    """Deterministic (mean) action for one 252-vector actor input."""
    x = _check_vec(actor_input, ACTOR_INPUT_DIM, "actor input")
    i_hat = weights.mlp("him.encoder").forward(x)
    head_in = np.concatenate([x[:FRAME_DIM], x[ACTOR_PROPRIO_DIM : ACTOR_PROPRIO_DIM + LATENT_DIM], i_hat])
    assert head_in.shape == (HEAD_INPUT_DIM,)
    a = weights.mlp("actor").forward(head_in)
    assert a.shape == (N_ACT,)
    return a


def critic_forward(weights: WeightBundle, critic_input) -> float:
    x = _check_vec(critic_input, CRITIC_INPUT_DIM, "critic input")
    return float(weights.mlp("critic").forward(x)[0])


# --------------------------------------------------------------------------
# action to torque


def scale_action(a, q0_lb, s_a: float) -> np.ndarray:
    return np.asarray(q0_lb, dtype=float) + float(s_a) * np.asarray(a, dtype=float)


def pd_torque(q_target, q, qd, kp, kd, torque_limits=None) -> np.ndarray:
    """``Kp (q_target - q) + Kd (0 - qd)``, optionally clipped to +-limits."""
    q_target, q, qd = (np.asarray(v, dtype=float) for v in (q_target, q, qd))
    kp = np.broadcast_to(np.asarray(kp, dtype=float), q.shape)
    kd = np.broadcast_to(np.asarray(kd, dtype=float), q.shape)
    if not (q_target.shape == q.shape == qd.shape):
        raise ShapeError(f"shape mismatch: {q_target.shape}, {q.shape}, {qd.shape}")
    if np.any(kp < 0) or np.any(kd < 0):
        raise ValueError("PD gains must be non-negative")
    tau = kp * (q_target - q) - kd * qd
    if torque_limits is not None:
        lim = np.asarray(torque_limits, dtype=float)
        tau = np.clip(tau, -lim, lim)
    return tau
