"""Random generators: curriculum ratio, upper-body targets, hand forces and
domain-randomization draws.

Every sampler takes its randomness from a *source* object exposing
``uniform(low, high, size)`` and ``normal(size)``.  :class:`RngStream` is the
production source; tests substitute sources returning fixed values.

Reproducibility: :class:`RngStream` draws uniforms from numpy's PCG64
generator seeded with ``SeedSequence(seed, spawn_key=(stream_id,))``, and
builds standard normals from uniforms with the Box-Muller transform
(``sqrt(-2 ln(1-u1)) * cos(2 pi u2)``), consuming two uniforms per normal.
Both steps are fixed arithmetic, so a given ``(seed, stream_id)`` yields the
same sequence on every platform.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .model import ChainModel, ModelError

DEFAULT_KAPPA = 20.0


class RngStream:
    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=(self.stream_id & (2**64 - 1),))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self._gen.random(size)
        return low + (np.asarray(high) - low) * u if size is not None else float(low + (high - low) * u)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self._gen.random((2, n))
        z = np.sqrt(-2.0 * np.log1p(-u[0])) * np.cos(2.0 * np.pi * u[1])
        return float(z[0]) if size is None else z.reshape(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


# --------------------------------------------------------------------------
# curriculum-scaled ratio


def _check_rho(rho_a: float) -> float:
    rho_a = float(rho_a)
    if 0.0 <= rho_a <= 1.0:
        return rho_a
    if -1e-9 <= rho_a < 0.0 or 1.0 < rho_a <= 1.0 + 1e-9:
        warnings.warn(f"rho_a={rho_a!r} clamped to [0, 1]", stacklevel=3)
        return min(1.0, max(0.0, rho_a))
    raise ValueError(f"rho_a must lie in [0, 1], got {rho_a}")


def ratio_from_uniform(u, rho_a: float, kappa: float = DEFAULT_KAPPA):
    """Inverse CDF of the truncated exponential on [0, 1] with rate kappa(1-rho_a).

    At ``rho_a == 1`` the law is uniform and ``u`` is returned unchanged.
    """
    rho_a = _check_rho(rho_a)
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    u = np.asarray(u, dtype=float)
    c = kappa * (1.0 - rho_a)
    if c == 0.0:
        out = u.copy()
    else:
        # -(1/c) ln(1 - u (1 - e^{-c})), written with log1p/expm1
        out = -np.log1p(u * np.expm1(-c)) / c
    return float(out) if out.ndim == 0 else out


def ratio_cdf(x, rho_a: float, kappa: float = DEFAULT_KAPPA):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    c = kappa * (1.0 - _check_rho(rho_a))
    if c == 0.0:
        return x
    return np.expm1(-c * x) / np.expm1(-c)


def sample_ratio(rho_a: float, kappa: float = DEFAULT_KAPPA, rng=None, size=None):
    rng = rng if rng is not None else RngStream(0)
    return ratio_from_uniform(rng.uniform(0.0, 1.0, size), rho_a, kappa)


# --------------------------------------------------------------------------
# upper-body targets


def target_interval(q0, q_min, q_max, a):
    """Per-joint sampling interval around ``q0`` scaled by ``a`` in [0, 1].

    Written as a convex combination so that ``a == 0`` gives exactly ``q0``
    and ``a == 1`` gives exactly ``[q_min, q_max]``.
    """
    q0, q_min, q_max, a = (np.asarray(v, dtype=float) for v in (q0, q_min, q_max, a))
    lo = (1.0 - a) * q0 + a * q_min
    hi = (1.0 - a) * q0 + a * q_max
    return lo, hi


def sample_ub_targets(model: ChainModel, q0_ub, rho_a_prime: float, rng=None, size=None) -> np.ndarray:
    """Draw upper-body joint targets; shape (15,) or (size, 15)."""
    rho = float(rho_a_prime)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho_a_prime must lie in [0, 1], got {rho}")
    ub = model.subchain("upper_body")
    q0 = np.asarray(q0_ub, dtype=float)
    if q0.shape != ub.shape:
        raise ValueError(f"q0_ub has shape {q0.shape}, expected {ub.shape}")
    q_min, q_max = model.q_min[ub], model.q_max[ub]
    for k, i in enumerate(ub):
        if not q_min[k] <= q0[k] <= q_max[k]:
            raise ModelError(
                f"joint {model.joint_names[i]!r}: default {q0[k]} outside [{q_min[k]}, {q_max[k]}]"
            )
    rng = rng if rng is not None else RngStream(0)
    shape = ub.shape if size is None else (int(size),) + ub.shape
    a = rho * rng.uniform(0.0, 1.0, shape)
    lo, hi = target_interval(q0, q_min, q_max, a)
    u = rng.uniform(0.0, 1.0, shape)
    # additive form keeps a == 0 exact; u == 1 maps exactly onto hi
    out = np.where(u >= 1.0, hi, lo + (hi - lo) * u)
    return np.clip(out, q_min, q_max)


# --------------------------------------------------------------------------
# hand forces


@dataclass(frozen=True)
class ForceSampleConfig:
    r_min: float = 0.0
    r_max: float = 30.0

    def __post_init__(self):
        if not (0.0 <= self.r_min <= self.r_max and math.isfinite(self.r_max)):
            raise ValueError(f"need 0 <= r_min <= r_max, got {self.r_min}, {self.r_max}")


def sample_hand_force(cfg: ForceSampleConfig, rng=None, size=None) -> np.ndarray:
    """Isotropic force: Gaussian direction normalised to the sphere, uniform magnitude."""
    rng = rng if rng is not None else RngStream(0)
    n = 1 if size is None else int(size)
    z = np.asarray(rng.normal((n, 3)), dtype=float).reshape(n, 3)
    norms = np.linalg.norm(z, axis=1)
    for i in np.flatnonzero(norms < 1e-12):
        while norms[i] < 1e-12:
            z[i] = np.asarray(rng.normal((1, 3)), dtype=float).reshape(3)
            norms[i] = np.linalg.norm(z[i])
    r = np.asarray(rng.uniform(cfg.r_min, cfg.r_max, (n,)), dtype=float).reshape(n)
    F = (r / norms)[:, None] * z
    return F[0] if size is None else F


# --------------------------------------------------------------------------
# domain randomization


@dataclass(frozen=True)
class DomainRandRanges:
    """Interval bounds for every randomized quantity (overridable via config)."""

    push_interval_s: float = 4.0
    push_vxy: tuple[float, float] = (0.0, 0.5)
    joint_noise: tuple[float, float] = (-0.05, 0.05)
    action_offset: tuple[float, float] = (-0.05, 0.05)
    payload_mass: tuple[float, float] = (-3.0, 5.0)
    hand_payload_mass: float = 0.0
    body_displacement: tuple[float, float] = (-0.1, 0.1)
    link_mass_scale: tuple[float, float] = (0.8, 1.2)
    friction: tuple[float, float] = (0.1, 3.0)
    restitution: tuple[float, float] = (0.0, 1.0)
    kp_scale: tuple[float, float] = (0.9, 1.1)
    kd_scale: tuple[float, float] = (0.9, 1.1)
    init_q_scale: tuple[float, float] = (0.8, 1.2)
    init_q_offset: tuple[float, float] = (-0.1, 0.1)
    control_delay: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                object.__setattr__(self, f.name, tuple(float(x) for x in v))
                if not (len(v) == 2 and v[0] <= v[1]):
                    raise ValueError(f"range {f.name} must be (low, high) with low <= high, got {v}")

    @classmethod
    def from_dict(cls, data: dict) -> "DomainRandRanges":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown domain randomization key(s): {', '.join(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass(frozen=True)
class DomainRandDraw:
    push_interval_s: float
    push_vxy: np.ndarray  # per-axis velocity kick (2,)
    joint_noise: np.ndarray  # (n_joints,)
    action_offset: np.ndarray  # (n_actions,)
    payload_mass: float
    hand_payload_mass: float
    body_displacement: np.ndarray  # (3,)
    link_mass_scale: np.ndarray  # (n_links,)
    friction: float
    restitution: float
    kp_scale: np.ndarray  # (n_actions,)
    kd_scale: np.ndarray  # (n_actions,)
    init_q_scale: np.ndarray  # (n_joints,)
    init_q_offset: np.ndarray  # (n_joints,)
    control_delay: bool
    # the delay distribution is unspecified; only the on/off flag is drawn
    control_delay_note: str = field(default="delay distribution unspecified", repr=False)

    def as_row(self) -> dict:
        row = {}
        for k, v in asdict(self).items():
            if k == "control_delay_note":
                continue
            if isinstance(v, np.ndarray):
                for i, x in enumerate(v):
                    row[f"{k}_{i}"] = float(x)
            else:
                row[k] = v
        return row


def sample_domain_randomization(
    rng=None,
    ranges: DomainRandRanges = DomainRandRanges(),
    n_joints: int = 27,
    n_actions: int = 12,
    n_links: int = 28,
) -> DomainRandDraw:
    rng = rng if rng is not None else RngStream(0)

    def u(rng_range, size=None):
        lo, hi = rng_range
        return rng.uniform(lo, hi, size)

    return DomainRandDraw(
        push_interval_s=ranges.push_interval_s,
        push_vxy=u(ranges.push_vxy, (2,)),
        joint_noise=u(ranges.joint_noise, (n_joints,)),
        action_offset=u(ranges.action_offset, (n_actions,)),
        payload_mass=float(u(ranges.payload_mass)),
        hand_payload_mass=ranges.hand_payload_mass,
        body_displacement=u(ranges.body_displacement, (3,)),
        link_mass_scale=u(ranges.link_mass_scale, (n_links,)),
        friction=float(u(ranges.friction)),
        restitution=float(u(ranges.restitution)),
        kp_scale=u(ranges.kp_scale, (n_actions,)),
        kd_scale=u(ranges.kd_scale, (n_actions,)),
        init_q_scale=u(ranges.init_q_scale, (n_joints,)),
        init_q_offset=u(ranges.init_q_offset, (n_joints,)),
        control_delay=ranges.control_delay,
    )
