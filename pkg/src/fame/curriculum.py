"""Upper-body action-ratio curriculum.

The ratio ``rho_a`` starts at 0 and grows by ``delta_rho`` each time the
standing-quality signal (the weighted height-tracking reward) exceeds a
threshold.  Step size, threshold and trigger window are not published
values; the defaults below are package choices.

All transitions are pure: they return a new state and never mutate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

# 0.9 x the height-tracking weight (3.0)
DEFAULT_THRESHOLD = 2.7
DEFAULT_DELTA_RHO = 0.01
DEFAULT_RESAMPLE_PERIOD = 1.0
DEFAULT_TRIGGER_WINDOW = 10.0

# tolerance on period crossings so that e.g. 50 x 0.02 s counts as 1 s
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class CurriculumState:
    rho_a: float = 0.0
    delta_rho: float = DEFAULT_DELTA_RHO
    threshold: float = DEFAULT_THRESHOLD
    resample_period: float = DEFAULT_RESAMPLE_PERIOD
    elapsed_since_resample: float = 0.0
    trigger_window: float = DEFAULT_TRIGGER_WINDOW
    window_elapsed: float = 0.0
    window_reward_sum: float = 0.0
    window_samples: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho_a <= 1.0:
            raise ValueError(f"rho_a must lie in [0, 1], got {self.rho_a}")
        if not self.delta_rho > 0:
            raise ValueError(f"delta_rho must be > 0, got {self.delta_rho}")
        if not self.resample_period > 0:
            raise ValueError(f"resample_period must be > 0, got {self.resample_period}")
        if not self.trigger_window > 0:
            raise ValueError(f"trigger_window must be > 0, got {self.trigger_window}")


def maybe_advance(state: CurriculumState, height_reward: float) -> CurriculumState:
    if height_reward > state.threshold:
        return replace(state, rho_a=min(1.0, state.rho_a + state.delta_rho))
    return state


def tick(state: CurriculumState, dt: float) -> tuple[CurriculumState, bool]:
    """Advance the resample clock; report whether a target resample is due."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    elapsed = state.elapsed_since_resample + dt
    period = state.resample_period
    if elapsed >= period - _TIME_EPS * period:
        return replace(state, elapsed_since_resample=max(0.0, elapsed - period)), True
    return replace(state, elapsed_since_resample=elapsed), False


def observe(state: CurriculumState, height_reward: float, dt: float) -> tuple[CurriculumState, bool]:
    """Accumulate the height reward over the trigger window.

    When the window closes, the window mean is passed to :func:`maybe_advance`
    and the accumulators reset.  Returns ``(state, window_closed)``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    elapsed = state.window_elapsed + dt
    total = state.window_reward_sum + height_reward
    count = state.window_samples + 1
    window = state.trigger_window
    if elapsed >= window - _TIME_EPS * window:
        advanced = maybe_advance(state, total / count)
        return (
            replace(advanced, window_elapsed=max(0.0, elapsed - window), window_reward_sum=0.0, window_samples=0),
            True,
        )
    return replace(state, window_elapsed=elapsed, window_reward_sum=total, window_samples=count), False
