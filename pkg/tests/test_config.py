from pathlib import Path

import pytest

from fame.config import TRAINING_DEFAULTS, ConfigError, load_config, parse_config
from fame.model import serialize_model


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_missing_config_is_default():
    cfg = load_config(None)
    assert cfg.seed is None and cfg.model_path is None
    assert cfg.sweep_spec().grid == (9, 9, 5)
    assert cfg.episode_config().n_steps == 500


def test_full_config(tmp_path, model):
    write(tmp_path, serialize_model(model), "m.toml")
    p = write(
        tmp_path,
        """
model = "m.toml"
seed = 17
output_dir = "out"

[reward.weights]
torques = -1e-5

[reward.params]
feet_lateral_range = [0.25, 0.4]

[observation]
dof_vel = 0.1
command = [1.0, 1.0, 0.5]

[sampler]
r_min = 1.0
r_max = 20.0
kappa = 10.0

[sampler.domain_randomization]
friction = [0.5, 1.0]

[curriculum]
delta_rho = 0.02
threshold = 2.5

[sweep]
configs = ["C2", "C4"]
grid = [3, 3, 3]

[estimator]
damping = 0.01

[episode]
config = "C3"
h_cmd = 0.8
kp = [100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100]

[training]
gamma = 0.98
""",
    )
    cfg = load_config(p)
    assert cfg.model_path == tmp_path / "m.toml"
    assert cfg.load_model().structurally_equal(model)
    assert cfg.seed == 17 and cfg.output_dir == tmp_path / "out"
    assert cfg.reward_weights == {"torques": -1e-5}
    assert cfg.reward_params.feet_lateral_range == (0.25, 0.4)
    assert cfg.obs_scales.dof_vel == 0.1 and cfg.obs_scales.command == (1.0, 1.0, 0.5)
    assert (cfg.force_sampler.r_min, cfg.force_sampler.r_max, cfg.kappa) == (1.0, 20.0, 10.0)
    assert cfg.domain_randomization.friction == (0.5, 1.0)
    assert cfg.curriculum.delta_rho == 0.02
    spec = cfg.sweep_spec(seed=4)
    assert spec.config_ids == ("C2", "C4") and spec.grid == (3, 3, 3) and spec.seed == 4
    assert cfg.estimator_damping == 0.01
    ep = cfg.episode_config(h_cmd=None)
    assert ep.config_id == "C3" and ep.h_cmd == 0.8 and ep.kp == (100.0,) * 12
    assert cfg.training["gamma"] == 0.98 and cfg.training["clip_param"] == TRAINING_DEFAULTS["clip_param"]


@pytest.mark.parametrize(
    "text, match",
    [
        ("colour = 1", "colour"),
        ("[sweep]\nspeed = 1", "speed"),
        ("[reward.weights]\nhappiness = 1.0", "happiness"),
        ("[reward.params]\nsharpness = 1.0", "sharpness"),
        ("[training]\nbatch = 1", "batch"),
        ("[sampler.domain_randomization]\ngravity = [0, 1]", "gravity"),
        ("seed = -1", "seed"),
        ("model = 'nope.toml'", "not found"),
        ("[sweep]\nfz_range = [-50, 0]", "fz_range"),
        ("[sampler]\nr_min = 5\nr_max = 1", "r_min"),
        ("[estimator]\ncutoff = 0", "cutoff"),
        ("[episode]\nub_mode = 'wild'", "ub_mode"),
        ("[curriculum]\ndelta_rho = 'big'", "delta_rho"),
        ("[observation]\ndof_vel = 'x'", "observation.dof_vel"),
        ("[observation]\ncommand = [1, 'x', 1]", "observation.command"),
    ],
)
def test_rejections(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, text))


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "seed = = 3"))


def test_relative_paths_resolve_against_config_dir(tmp_path, model):
    sub = tmp_path / "a"
    sub.mkdir()
    write(sub, serialize_model(model), "m.toml")
    cfg = parse_config({"model": "m.toml"}, sub)
    assert cfg.model_path == sub / "m.toml"
    assert Path(cfg.model_path).is_absolute() == sub.is_absolute()
