"""Run configuration: one TOML file, every key known in advance.

Unknown keys anywhere are rejected.  Relative paths are resolved against
the directory containing the config file.  The ``training`` table holds the
PPO hyperparameters for completeness; nothing in this package reads it.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .curriculum import CurriculumState
from .estimation import DEFAULT_CUTOFF, DEFAULT_DAMPING
from .harness import EpisodeConfig, SweepSpec
from .model import ChainModel, load_bundled_model, load_model
from .policy import ObsScales
from .reward import TERM_NAMES, RewardParams
from .sampling import DEFAULT_KAPPA, DomainRandRanges, ForceSampleConfig


class ConfigError(ValueError):
    pass


TRAINING_DEFAULTS: dict[str, Any] = {
    "optimizer": "Adam",
    "learning_rate": 1e-3,
    "schedule": "adaptive",
    "gamma": 0.99,
    "lam": 0.95,
    "clip_param": 0.2,
    "value_loss_coef": 1.0,
    "use_clipped_value_loss": True,
    "entropy_coef": 0.01,
    "desired_kl": 0.01,
    "max_grad_norm": 1.0,
    "num_learning_epochs": 5,
    "num_mini_batches": 4,
    "init_noise_std": 1.0,
    "actor_hidden_dims": [512, 256, 256],
    "critic_hidden_dims": [512, 256, 256],
    "activation": "elu",
    "symmetry_scale": 1.0,
}

_SCHEMA: dict[str, set[str] | None] = {
    "reward": {"weights", "params"},
    "observation": set(ObsScales.__dataclass_fields__),
    "sampler": {"r_min", "r_max", "kappa", "domain_randomization"},
    "curriculum": {"delta_rho", "threshold", "resample_period", "trigger_window"},
    "sweep": {
        "configs", "fx_range", "fy_range", "fz_range", "h_cmd_range",
        "grid", "mode", "trials", "horizon", "polygon_scale",
    },  # fmt: skip
    "estimator": {"damping", "cutoff"},
    "episode": {"config", "h_cmd", "dt", "horizon", "s_a", "ub_mode", "kp", "kd"},
    "training": set(TRAINING_DEFAULTS),
}
_TOP = {"model", "weights", "seed", "output_dir"} | set(_SCHEMA)


@dataclass(frozen=True)
class RunConfig:
    model_path: Path | None = None
    weights_path: Path | None = None
    seed: int | None = None
    output_dir: Path = Path(".")
    reward_weights: dict[str, float] = field(default_factory=dict)
    reward_params: RewardParams = RewardParams()
    obs_scales: ObsScales = ObsScales()
    force_sampler: ForceSampleConfig = ForceSampleConfig()
    kappa: float = DEFAULT_KAPPA
    domain_randomization: DomainRandRanges = DomainRandRanges()
    curriculum: CurriculumState = CurriculumState()
    sweep: dict[str, Any] = field(default_factory=dict)
    estimator_damping: float = DEFAULT_DAMPING
    estimator_cutoff: float = DEFAULT_CUTOFF
    episode: dict[str, Any] = field(default_factory=dict)
    training: dict[str, Any] = field(default_factory=lambda: dict(TRAINING_DEFAULTS))

    def load_model(self) -> ChainModel:
        return load_model(self.model_path) if self.model_path is not None else load_bundled_model()

    def sweep_spec(self, **overrides) -> SweepSpec:
        kw = {k: v for k, v in self.sweep.items()}
        if "configs" in kw:
            kw["config_ids"] = tuple(kw.pop("configs"))
        for key in ("fx_range", "fy_range", "fz_range", "h_cmd_range", "grid"):
            if key in kw:
                kw[key] = tuple(kw[key])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return SweepSpec(**kw)

    def episode_config(self, **overrides) -> EpisodeConfig:
        kw = dict(self.episode)
        if "config" in kw:
            kw["config_id"] = kw.pop("config")
        for key in ("kp", "kd"):
            if key in kw:
                kw[key] = tuple(float(v) for v in kw[key])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return EpisodeConfig(
            scales=self.obs_scales,
            reward_params=self.reward_params,
            reward_weights=tuple(sorted(self.reward_weights.items())),
            curriculum=self.curriculum,
            estimator_damping=self.estimator_damping,
            estimator_cutoff=self.estimator_cutoff,
            **kw,
        )


def _table(data: Mapping, key: str) -> dict:
    value = data.get(key, {})
    if not isinstance(value, Mapping):
        raise ConfigError(f"[{key}] must be a table")
    allowed = _SCHEMA[key]
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{key}]: {', '.join(unknown)}")
    return dict(value)


def _finite(where: str, value) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a number, got {value!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{where} must be finite, got {value!r}")
    return v


def parse_config(data: Mapping, base_dir: Path = Path(".")) -> RunConfig:
    unknown = sorted(set(data) - _TOP)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")

    def path(key: str) -> Path | None:
        if key not in data:
            return None
        p = Path(data[key])
        p = p if p.is_absolute() else base_dir / p
        if not p.exists():
            raise ConfigError(f"{key} file not found: {p}")
        return p

    kw: dict[str, Any] = {"model_path": path("model"), "weights_path": path("weights")}
    if "seed" in data:
        if not isinstance(data["seed"], int) or isinstance(data["seed"], bool) or data["seed"] < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {data['seed']!r}")
        kw["seed"] = data["seed"]
    if "output_dir" in data:
        out = Path(data["output_dir"])
        kw["output_dir"] = out if out.is_absolute() else base_dir / out

    try:
        reward = _table(data, "reward")
        weights = dict(reward.get("weights", {}))
        bad = sorted(set(weights) - set(TERM_NAMES))
        if bad:
            raise ConfigError(f"unknown reward term(s): {', '.join(bad)}")
        kw["reward_weights"] = {k: _finite(f"reward.weights.{k}", v) for k, v in weights.items()}
        kw["reward_params"] = RewardParams.from_dict(reward.get("params", {}))

        obs = _table(data, "observation")
        kw["obs_scales"] = ObsScales.from_dict({
            k: [_finite(f"observation.{k}", x) for x in v] if isinstance(v, list) else _finite(f"observation.{k}", v)
            for k, v in obs.items()
        })

        sampler = _table(data, "sampler")
        kw["force_sampler"] = ForceSampleConfig(
            r_min=_finite("sampler.r_min", sampler.get("r_min", 0.0)),
            r_max=_finite("sampler.r_max", sampler.get("r_max", 30.0)),
        )
        kw["kappa"] = _finite("sampler.kappa", sampler.get("kappa", DEFAULT_KAPPA))
        if not kw["kappa"] > 0:
            raise ConfigError("sampler.kappa must be > 0")
        kw["domain_randomization"] = DomainRandRanges.from_dict(sampler.get("domain_randomization", {}))

        curr = _table(data, "curriculum")
        kw["curriculum"] = CurriculumState(**{k: _finite(f"curriculum.{k}", v) for k, v in curr.items()})

        kw["sweep"] = _table(data, "sweep")
        est = _table(data, "estimator")
        kw["estimator_damping"] = _finite("estimator.damping", est.get("damping", DEFAULT_DAMPING))
        kw["estimator_cutoff"] = _finite("estimator.cutoff", est.get("cutoff", DEFAULT_CUTOFF))
        if kw["estimator_damping"] < 0 or kw["estimator_cutoff"] <= 0:
            raise ConfigError("estimator.damping must be >= 0 and estimator.cutoff > 0")
        kw["episode"] = _table(data, "episode")
        kw["training"] = {**TRAINING_DEFAULTS, **_table(data, "training")}
        cfg = RunConfig(**kw)
        # surface range errors at load time rather than at first use
        cfg.sweep_spec()
        cfg.episode_config()
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, path.parent)
