"""``fame`` command-line entry point.

Exit codes: 0 success, 2 input error (missing file, parse or validation
failure, bad flag), 3 dimension mismatch, 4 non-finite numbers.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import harness
from .config import ConfigError, RunConfig, load_config
from .dynamics import JointState
from .errors import DimensionError, NonFiniteError
from .estimation import estimate_both
from .model import PRESET_IDS, ModelError, load_model, preset
from .policy import (
    ACTOR_INPUT_DIM,
    CRITIC_INPUT_DIM,
    WeightBundle,
    WeightError,
    actor_forward,
    critic_forward,
    encoder_forward,
    load_weights,
    random_bundle,
    zero_bundle,
)
from .reward import RewardContext, RewardInput, RewardInputError, evaluate
from .sampling import (
    ForceSampleConfig,
    RngStream,
    sample_domain_randomization,
    sample_hand_force,
    sample_ratio,
    sample_ub_targets,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIMENSION = 3
EXIT_NUMERIC = 4


class InputError(Exception):
    pass


# --------------------------------------------------------------------------
# shared helpers


def _resolve_seed(args, cfg: RunConfig) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FAME_SEED")
    if env is not None and env.strip():
        try:
            seed = int(env)
        except ValueError:
            raise InputError(f"FAME_SEED must be an integer, got {env!r}") from None
        if seed < 0:
            raise InputError(f"FAME_SEED must be non-negative, got {seed}")
        return seed
    return cfg.seed if cfg.seed is not None else 0


def _model(args, cfg: RunConfig):
    return load_model(args.model) if args.model else cfg.load_model()


def _weights(spec: str | None, cfg: RunConfig) -> WeightBundle:
    if spec is None:
        if cfg.weights_path is None:
            raise InputError("no weights given: pass --weights PATH|zero|random:SEED or set 'weights' in the config")
        return load_weights(cfg.weights_path)
    if spec == "zero":
        return zero_bundle()
    if spec.startswith("random:"):
        try:
            return random_bundle(int(spec.split(":", 1)[1]))
        except ValueError:
            raise InputError(f"bad weight spec {spec!r}; expected random:<int>") from None
    return load_weights(spec)


def _read_json(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _triple(text: str, what: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise InputError(f"{what} must be three comma-separated numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError:
        raise InputError(f"{what} must be numeric, got {text!r}") from None


def _pair(text: str, what: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise InputError(f"{what} must be 'low,high', got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise InputError(f"{what} must be numeric, got {text!r}") from None


def read_state_csv(path: str, n: int) -> JointState:
    """Rows ``q,...``, ``qd,...`` and ``tau,...``; lines starting with # are ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"state file not found: {path}") from None
    rows = {}
    for rec in csv.reader(io.StringIO(text)):
        if not rec or rec[0].strip().startswith("#"):
            continue
        label = rec[0].strip()
        if label not in ("q", "qd", "tau"):
            raise InputError(f"{path}: unknown row label {label!r}; expected q, qd or tau")
        if label in rows:
            raise InputError(f"{path}: row {label!r} given twice")
        try:
            rows[label] = np.array([float(v) for v in rec[1:]])
        except ValueError:
            raise InputError(f"{path}: row {label!r} has a non-numeric entry") from None
    missing = [k for k in ("q", "qd", "tau") if k not in rows]
    if missing:
        raise InputError(f"{path}: missing row(s) {', '.join(missing)}")
    for k, v in rows.items():
        if v.shape != (n,):
            raise DimensionError(f"{path}: row {k!r} has {v.shape[0]} values, model has {n} joints")
    return JointState(rows["q"], rows["qd"], rows["tau"])


def write_state_csv(path: str | Path, q, qd, tau) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for label, v in (("q", q), ("qd", qd), ("tau", tau)):
            w.writerow([label] + [repr(float(x)) for x in v])


# --------------------------------------------------------------------------
# commands


def cmd_estimate(args, cfg: RunConfig) -> int:
    model = _model(args, cfg)
    state = read_state_csv(args.state, model.n)
    damping = cfg.estimator_damping if args.damping is None else args.damping
    cutoff = cfg.estimator_cutoff if args.cutoff is None else args.cutoff
    left, right = estimate_both(model, state, damping, cutoff)
    sys.stdout.write(_dump({"left": left.to_dict(), "right": right.to_dict()}))
    return EXIT_OK


def _config_ids(text: str) -> tuple[str, ...]:
    if text.lower() == "all":
        return PRESET_IDS
    ids = tuple(t.strip().upper() for t in text.split(",") if t.strip())
    for c in ids:
        if c not in PRESET_IDS:
            raise InputError(f"unknown configuration {c!r}; expected one of {', '.join(PRESET_IDS)} or 'all'")
    return ids


def cmd_sweep(args, cfg: RunConfig) -> int:
    model = _model(args, cfg)
    over = {"seed": _resolve_seed(args, cfg), "polygon_scale": args.polygon_scale}
    if args.cfg is not None:
        over["config_ids"] = _config_ids(args.cfg)
    if args.random:
        over["mode"] = "random"
        over["trials"] = args.trials
    elif args.grid is not None:
        try:
            over["grid"] = tuple(int(g) for g in args.grid.lower().split("x"))
        except ValueError:
            raise InputError(f"--grid must look like 9x9x5, got {args.grid!r}") from None
        over["mode"] = "grid"
    for flag in ("fx_range", "fy_range", "fz_range", "h_cmd_range"):
        value = getattr(args, flag)
        if value is not None:
            over[flag] = _pair(value, "--" + flag.replace("_", "-"))
    spec = cfg.sweep_spec(**over)
    results = harness.run_sweep(spec, model, threads=args.threads)
    out = Path(args.out) if args.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(harness.sweep_csv(results), encoding="utf-8")
    (out / "sweep.json").write_text(harness.sweep_json(spec, results), encoding="utf-8")
    if not args.no_svg:
        (out / "sweep.svg").write_text(harness.sweep_svg(results), encoding="utf-8")
    sys.stdout.write(_dump(harness.success_fractions(results)))
    return EXIT_OK


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def cmd_sample(args, cfg: RunConfig) -> int:
    if args.n < 0:
        raise InputError(f"--n must be >= 0, got {args.n}")
    rng = RngStream(_resolve_seed(args, cfg), 0)
    kind = args.kind
    if kind == "ratio":
        kappa = cfg.kappa if args.kappa is None else args.kappa
        vals = sample_ratio(args.rho_a, kappa, rng, args.n) if args.n else []
        text = _csv_text(["rho_a_prime"], ([float(v)] for v in vals))
    elif kind == "targets":
        model = _model(args, cfg)
        ub = model.subchain("upper_body")
        q0 = preset(args.cfg).q_ub if args.cfg else model.q_default[ub]
        vals = sample_ub_targets(model, q0, args.rho_a_prime, rng, args.n) if args.n else []
        text = _csv_text([model.joint_names[i] for i in ub], (list(map(float, r)) for r in vals))
    elif kind == "force":
        fcfg = ForceSampleConfig(
            r_min=cfg.force_sampler.r_min if args.rmin is None else args.rmin,
            r_max=cfg.force_sampler.r_max if args.rmax is None else args.rmax,
        )
        vals = sample_hand_force(fcfg, rng, args.n) if args.n else []
        text = _csv_text(["fx", "fy", "fz"], (list(map(float, r)) for r in vals))
    else:
        draws = [sample_domain_randomization(rng, cfg.domain_randomization).as_row() for _ in range(args.n)]
        if draws:
            header = list(draws[0])
        else:
            header = list(sample_domain_randomization(RngStream(0), cfg.domain_randomization).as_row())
        text = _csv_text(header, ([d[k] for k in header] for d in draws))
    _emit(text, args.out)
    return EXIT_OK


def cmd_reward(args, cfg: RunConfig) -> int:
    model = _model(args, cfg)
    data = _read_json(args.input)
    if not isinstance(data, dict):
        raise InputError(f"{args.input}: expected a JSON object")
    inp = RewardInput.from_dict(data)
    breakdown = evaluate(inp, RewardContext.from_model(model), cfg.reward_weights or None, cfg.reward_params)
    sys.stdout.write(_dump(breakdown.to_dict()))
    return EXIT_OK


def cmd_infer(args, cfg: RunConfig) -> int:
    weights = _weights(args.weights, cfg)
    data = _read_json(args.input)
    if not isinstance(data, dict):
        raise InputError(f"{args.input}: expected a JSON object")
    unknown = sorted(set(data) - {"encoder", "actor_input", "critic_input"})
    if unknown:
        raise InputError(f"{args.input}: unknown key(s) {', '.join(unknown)}")
    out = {}
    if "encoder" in data:
        enc = data["encoder"]
        missing = [k for k in ("q_ub", "F_L", "F_R") if k not in enc]
        if missing:
            raise InputError(f"{args.input}: encoder input lacks {', '.join(missing)}")
        vec = [np.asarray(enc[k], dtype=float) for k in ("q_ub", "F_L", "F_R")]
        for v in vec:
            if not np.all(np.isfinite(v)):
                raise NonFiniteError("encoder input has non-finite values")
        out["z"] = encoder_forward(weights, *vec).tolist()
    for key, size, fn, name in (
        ("actor_input", ACTOR_INPUT_DIM, actor_forward, "action"),
        ("critic_input", CRITIC_INPUT_DIM, critic_forward, "value"),
    ):
        if key in data:
            x = np.asarray(data[key], dtype=float)
            if x.shape != (size,):
                raise DimensionError(f"{key} has shape {x.shape}, expected ({size},)")
            if not np.all(np.isfinite(x)):
                raise NonFiniteError(f"{key} has non-finite values")
            y = fn(weights, x)
            out[name] = y.tolist() if isinstance(y, np.ndarray) else y
    sys.stdout.write(_dump(out))
    return EXIT_OK


def cmd_episode(args, cfg: RunConfig) -> int:
    model = _model(args, cfg)
    weights = _weights(args.weights, cfg)
    ecfg = cfg.episode_config(
        config_id=args.cfg,
        h_cmd=args.h_cmd,
        dt=args.dt,
        horizon=args.horizon,
        s_a=args.s_a,
        ub_mode=args.ub_mode,
        seed=_resolve_seed(args, cfg),
    )
    if args.episodes < 1:
        raise InputError(f"--episodes must be >= 1, got {args.episodes}")
    if args.forces == "random":
        factory = lambda: harness.RandomForces(cfg.force_sampler)  # noqa: E731
    else:
        const = (0.0, 0.0, 0.0) if args.forces == "zero" else _triple(args.forces, "--forces")
        factory = lambda: harness.ConstantForces(const, const)  # noqa: E731
    traces = harness.run_episodes(model, weights, ecfg, args.episodes, factory, args.threads)
    parts = []
    for i, tr in enumerate(traces):
        lines = tr.csv().splitlines(keepends=True)
        if i == 0:
            parts.append("episode," + lines[0])
        parts += [f"{i}," + ln for ln in lines[1:]]
    _emit("".join(parts), args.out)
    summary = {
        "episodes": [
            {
                "seed": tr.config.seed,
                "steps": len(tr.steps),
                "success": tr.success,
                "resample_events": tr.resample_events,
                "final_rho_a": tr.final_rho_a,
            }
            for tr in traces
        ],
        "plant": "kinematic stand-in (non-physical)",
    }
    (sys.stdout if args.out not in (None, "-") else sys.stderr).write(_dump(summary))
    return EXIT_OK


def cmd_validate_model(args, cfg: RunConfig) -> int:
    model = load_model(args.path) if args.path else _model(args, cfg)
    info = {
        "name": model.name,
        "profile": model.profile,
        "joints": model.n,
        "links": len(model.links),
        "total_mass": model.total_mass,
        "subchains": {k: len(v) for k, v in model.subchains.items()},
        "wrists": [w.name for w in model.wrists],
    }
    sys.stdout.write(_dump(info))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration TOML file")
    common.add_argument("--model", help="model TOML file (default: bundled 27-DoF model)")
    common.add_argument("--seed", type=_nonneg_int, help="random seed (fallback: $FAME_SEED, then config, then 0)")
    common.add_argument("--threads", type=_pos_int, default=1, help="worker threads (default 1)")

    p = argparse.ArgumentParser(prog="fame", description="Hand-force-aware standing toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("estimate", parents=[common], help="estimate hand forces from a joint-state CSV")
    s.add_argument("--state", required=True, help="CSV with rows 'q,...', 'qd,...', 'tau,...'")
    s.add_argument("--damping", type=float, help="damping lambda (default from config, else 0)")
    s.add_argument("--cutoff", type=float, help="relative singular-value cutoff (default 1e-6)")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("sweep", parents=[common], help="quasi-static force-envelope sweep")
    s.add_argument("--cfg", help="C1..C5, a comma list, or 'all' (default C1)")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--grid", help="grid counts FXxFYxFZ, e.g. 9x9x5")
    mode.add_argument("--random", action="store_true", help="draw --trials random cells instead of a grid")
    s.add_argument("--trials", type=_pos_int, default=500, help="cells per configuration in --random mode")
    s.add_argument("--fx-range", help="low,high within [-20,20] N")
    s.add_argument("--fy-range", help="low,high within [-20,20] N")
    s.add_argument("--fz-range", help="low,high within [-30,30] N")
    s.add_argument("--h-cmd-range", help="low,high within [0.7,1.0] m")
    s.add_argument("--polygon-scale", type=float, help="shrink (<1) or grow the support polygon about its centroid")
    s.add_argument("--out", help="output directory (default: config output_dir)")
    s.add_argument("--no-svg", action="store_true", help="skip the SVG rendering")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("sample", parents=[common], help="draw samples as CSV")
    s.add_argument("kind", choices=("ratio", "targets", "force", "domain"))
    s.add_argument("--n", type=int, default=1000, help="number of draws (default 1000)")
    s.add_argument("--rho-a", type=float, default=0.0, help="curriculum ratio for 'ratio'")
    s.add_argument("--kappa", type=float, help="concentration for 'ratio' (default 20)")
    s.add_argument("--rho-a-prime", type=float, default=1.0, help="sampled ratio for 'targets'")
    s.add_argument("--cfg", choices=PRESET_IDS, help="preset used as q0 for 'targets' (default: model default)")
    s.add_argument("--rmin", type=float, help="minimum force magnitude for 'force'")
    s.add_argument("--rmax", type=float, help="maximum force magnitude for 'force'")
    s.add_argument("--out", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("reward", parents=[common], help="evaluate a reward input JSON file")
    s.add_argument("--input", required=True, help="JSON reward input")
    s.set_defaults(func=cmd_reward)

    s = sub.add_parser("infer", parents=[common], help="run encoder/actor/critic on a JSON input")
    s.add_argument("--input", required=True, help="JSON with 'encoder', 'actor_input' and/or 'critic_input'")
    s.add_argument("--weights", help="manifest path, 'zero', or 'random:SEED'")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("episode", parents=[common], help="closed-loop episode on the kinematic plant")
    s.add_argument("--weights", help="manifest path, 'zero', or 'random:SEED'")
    s.add_argument("--cfg", choices=PRESET_IDS, help="upper-body preset (default C1)")
    s.add_argument("--h-cmd", type=float, help="commanded base height in m (default 1.0)")
    s.add_argument("--horizon", type=float, help="episode length in s (default 10)")
    s.add_argument("--dt", type=float, help="control period in s (default 0.02)")
    s.add_argument("--s-a", type=float, help="action scale (default 0.25)")
    s.add_argument("--ub-mode", choices=("preset", "curriculum"), help="upper-body target source")
    s.add_argument("--forces", default="zero", help="'zero', 'random', or a constant 'fx,fy,fz' on both hands")
    s.add_argument("--episodes", type=int, default=1, help="number of episodes (seeds seed..seed+N-1)")
    s.add_argument("--out", help="trace CSV path (default stdout; summary then goes to stderr)")
    s.set_defaults(func=cmd_episode)

    s = sub.add_parser("validate-model", parents=[common], help="parse and validate a model file")
    s.add_argument("path", nargs="?", help="model TOML (default: --model, config, or bundled)")
    s.set_defaults(func=cmd_validate_model)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (InputError, ConfigError, ModelError, WeightError, RewardInputError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
