"""Wrist force estimation from joint torques, without a wrist F/T sensor.

For each hand the arm's residual torque ``tau - tau_g`` is mapped to a
Cartesian force through the SVD pseudo-inverse of the transposed wrist
Jacobian, ``F = -(J^T)^+ (tau - tau_g)``.  Only the arm's own seven joints
are used; torso and leg torques are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import JointState, gravity_torques, kinematics, wrist_jacobian
from .model import ChainModel

DEFAULT_CUTOFF = 1e-6
DEFAULT_DAMPING = 0.0


@dataclass(frozen=True)
class WrenchEstimate:
    force: np.ndarray
    singular_values: np.ndarray
    condition_number: float
    rank: int
    residual_norm: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "force": [float(v) for v in self.force],
            "singular_values": [float(v) for v in self.singular_values],
            "condition_number": float(self.condition_number),
            "rank": int(self.rank),
            "residual_norm": float(self.residual_norm),
            "degenerate": bool(self.degenerate),
        }


def pseudo_inverse_solve(
    A: np.ndarray, b: np.ndarray, damping: float = DEFAULT_DAMPING, cutoff: float = DEFAULT_CUTOFF
) -> tuple[np.ndarray, np.ndarray, int]:
    """Minimum-norm least-squares solution of ``A x = b`` via the SVD.

    Singular values ``<= cutoff * s_max`` are dropped.  With ``damping > 0``
    the kept ones are inverted as ``s / (s^2 + damping^2)``.
    Returns ``(x, singular_values, rank)``.
    """
    if not (np.isfinite(damping) and damping >= 0):
        raise ValueError(f"damping must be finite and >= 0, got {damping}")
    if not (np.isfinite(cutoff) and cutoff > 0):
        raise ValueError(f"cutoff must be finite and > 0, got {cutoff}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.shape[1]), s, 0
    keep = s > cutoff * s[0]
    inv = np.zeros_like(s)
    if damping > 0:
        inv[keep] = s[keep] / (s[keep] ** 2 + damping**2)
    else:
        inv[keep] = 1.0 / s[keep]
    x = Vt.T @ (inv * (U.T @ b))
    return x, s, int(keep.sum())


def estimate_hand_force(
    model: ChainModel,
    state: JointState,
    side: str,
    damping: float = DEFAULT_DAMPING,
    cutoff: float = DEFAULT_CUTOFF,
    *,
    tau_g: np.ndarray | None = None,
    kin=None,
) -> WrenchEstimate:
    """Estimate the force the environment applies to one hand.

    A rank-deficient Jacobian is not an error: the result is the
    minimum-norm force and ``rank``/``condition_number`` report the loss.
    A fully singular Jacobian yields a zero force flagged ``degenerate``.
    """
    state.check(model)
    if tau_g is None:
        tau_g = gravity_torques(model, state.q)
    kin = kin if kin is not None else kinematics(model, state.q)
    arm = model.subchain(model.wrist(side).subchain)
    JT = wrist_jacobian(model, state.q, side, kin=kin).T
    residual_tau = state.tau[arm] - tau_g[arm]
    force, s, rank = pseudo_inverse_solve(JT, -residual_tau, damping, cutoff)
    sv = np.zeros(3)
    sv[: s.size] = s[:3]
    if rank == 0:
        cond = float("inf")
    else:
        cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    residual = float(np.linalg.norm(residual_tau + JT @ force))
    return WrenchEstimate(
        force=force,
        singular_values=sv,
        condition_number=cond,
        rank=rank,
        residual_norm=residual,
        degenerate=rank == 0,
    )


def estimate_both(
    model: ChainModel,
    state: JointState,
    damping: float = DEFAULT_DAMPING,
    cutoff: float = DEFAULT_CUTOFF,
) -> tuple[WrenchEstimate, WrenchEstimate]:
    state.check(model)
    tau_g = gravity_torques(model, state.q)
    kin = kinematics(model, state.q)
    return tuple(
        estimate_hand_force(model, state, side, damping, cutoff, tau_g=tau_g, kin=kin)
        for side in ("left", "right")
    )
