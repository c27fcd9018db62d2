"""Command-line entry point: training, evaluation, baselines, diagnostics,
and the session service.

Every run writes a manifest (resolved config, seed, package versions, input
checksums) into the output directory before heavy work starts, and artifact
files name the manifest that produced them. Exit codes: 0 success, 2 usage,
3 configuration, 4 numeric failure, 5 I/O.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, evaluation
from . import objectives as obj
from .checkpoint import CheckpointError, ModelMismatchError, load_checkpoint, policy_from_checkpoint
from .models import MODEL_NAMES, get_model
from .models.base import SupportError
from .nn.rng import RngStream
from .policy import FixedPolicy, RandomPolicy
from .training import (
    DESK_CONFIGS,
    DESK_FIXED_CONFIGS,
    ConfigError,
    TrainConfig,
    config_digest,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str) -> CliError:
    return CliError(code, message)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise _fail(EXIT_CONFIG, f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise _fail(EXIT_CONFIG, f"config file is not valid JSON: {exc}")


def _resolve_train_config(args) -> TrainConfig:
    file_cfg = _load_config_file(args.config)
    model = args.model or file_cfg.get("model")
    if model is None:
        raise _fail(EXIT_CONFIG, "no model given (use --model or a config file)")
    if model not in MODEL_NAMES:
        raise _fail(EXIT_CONFIG, f"unknown model {model!r}; known: {', '.join(MODEL_NAMES)}")
    base = DESK_FIXED_CONFIGS[model] if getattr(args, "fixed", False) else DESK_CONFIGS[model]
    merged = asdict(base)
    merged["model"] = model
    for key, value in file_cfg.items():
        if key == "model":
            continue
        if key not in merged:
            raise _fail(EXIT_CONFIG, f"unknown config key {key!r}")
        merged[key] = value
    # flag overrides beat config-file values
    for flag, key in (("T", "T"), ("L", "L"), ("seed", "seed"),
                      ("steps", "steps"), ("batch", "batch"), ("lr", "lr"),
                      ("estimator", "estimator")):
        val = getattr(args, flag, None)
        if val is not None:
            merged[key] = val
    try:
        cfg = TrainConfig(**merged)
        cfg.validate()
    except (TypeError, ConfigError) as exc:
        raise _fail(EXIT_CONFIG, str(exc))
    return cfg


def _write_manifest(out_dir: Path, verb: str, payload: dict) -> str:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "verb": verb,
        "package_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        **payload,
    }
    blob = json.dumps(manifest, indent=2, sort_keys=True, default=str)
    name = f"manifest-{verb}-{hashlib.sha256(blob.encode()).hexdigest()[:12]}.json"
    (out_dir / name).write_text(blob + "\n")
    return name


def _write_artifact(out_dir: Path, name: str, manifest: str, payload: dict) -> Path:
    path = out_dir / name
    with open(path, "w") as fh:
        json.dump({"manifest": manifest, **payload}, fh, indent=2, default=str)
        fh.write("\n")
    return path


def _load_policy_arg(args, allow_any_horizon=False):
    try:
        ckpt = load_checkpoint(args.ckpt)
        model = get_model(ckpt.model_name, **ckpt.model_params)
        if args.model and args.model != ckpt.model_name:
            raise ModelMismatchError(
                f"checkpoint is for {ckpt.model_name!r}, --model says {args.model!r}")
        policy = policy_from_checkpoint(ckpt, model, allow_any_horizon=allow_any_horizon)
    except ModelMismatchError as exc:
        raise _fail(EXIT_CONFIG, str(exc))
    except CheckpointError as exc:
        raise _fail(EXIT_IO, str(exc))
    return policy, model, ckpt


# -- verbs ----------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    out = Path(args.out)
    manifest = _write_manifest(out, "train", {
        "config": asdict(cfg), "config_digest": config_digest(cfg)})
    ckpt_path = out / f"{cfg.model}-{'fixed' if cfg.policy == 'fixed' else 'net'}.ckpt"
    resume = None
    if args.resume:
        resume = load_checkpoint(ckpt_path)
    result = train(cfg, resume_from=resume, ckpt_path=ckpt_path,
                   trace_path=out / "trace.jsonl", log_every=args.log_every)
    _write_artifact(out, "train-summary.json", manifest, {
        "checkpoint": ckpt_path.name,
        "steps": int(cfg.steps),
        "final_spce_median_last_1000": float(np.median(result.trace[-1000:]))
        if len(result.trace) else None,
    })
    print(f"checkpoint written to {ckpt_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    policy, model, ckpt = _load_policy_arg(args)
    out = Path(args.out)
    rng = RngStream(args.seed if args.seed is not None else 0)
    T = args.T or getattr(policy, "horizon", None) or ckpt.header.get("horizon")
    manifest = _write_manifest(out, "eval", {
        "checkpoint": str(args.ckpt), "checkpoint_sha": ckpt.checksum(),
        "L": args.L, "n_outer": args.outer, "T": T, "seed": rng.seed})
    pair = evaluation.evaluate_policy(policy, model, args.L, args.outer, rng, T_steps=T)
    record = pair.to_record()
    if model.theta_dim == 1:
        mean, se, _ = evaluation.expected_information_gain(
            policy, model, args.outer, rng.child("ig"), T_steps=T)
        record["grid_eig"] = {"mean": mean, "se": se}
    _write_artifact(out, "eval-report.json", manifest, record)
    lo, hi = pair.lower, pair.upper
    print(f"{'bound':<8}{'estimate':>12}{'s.e.':>10}   L={args.L} n={args.outer}")
    print(f"{'sPCE':<8}{lo.mean:>12.4f}{lo.se:>10.4f}")
    print(f"{'sNMC':<8}{hi.mean:>12.4f}{hi.se:>10.4f}")
    if "grid_eig" in record:
        print(f"{'gridIG':<8}{record['grid_eig']['mean']:>12.4f}{record['grid_eig']['se']:>10.4f}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    policy, model, ckpt = _load_policy_arg(args)
    out = Path(args.out)
    rng = RngStream(args.seed if args.seed is not None else 0)
    T = args.T or policy.horizon
    manifest = _write_manifest(out, "rollout", {
        "checkpoint": str(args.ckpt), "T": T, "n": args.outer, "seed": rng.seed})
    rows = []
    for i in range(args.outer):
        theta0 = model.sample_prior(1, rng.child("theta", i))[0]
        r = obj.rollout(policy, model, theta0, T, rng.child("roll", i))
        rows.append({"theta": theta0.tolist(),
                     "designs": r.history.designs.tolist(),
                     "outcomes": r.history.outcomes[:, 0].tolist()})
    _write_artifact(out, "rollouts.json", manifest, {"rollouts": rows})
    print(f"wrote {args.outer} rollouts to {out / 'rollouts.json'}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    if args.kind == "fixed":
        args.fixed = True
        return cmd_train(args)
    # random baseline: evaluate directly, nothing to train
    model_name = args.model
    if model_name is None:
        raise _fail(EXIT_CONFIG, "baseline random needs --model")
    model = get_model(model_name)
    rng = RngStream(args.seed if args.seed is not None else 0)
    policy = RandomPolicy(model, rng.child("policy"))
    out = Path(args.out)
    T = args.T or DESK_CONFIGS[model_name].T
    manifest = _write_manifest(out, "baseline-random", {
        "model": model_name, "T": T, "L": args.L, "n_outer": args.outer,
        "seed": rng.seed})
    pair = evaluation.evaluate_policy(policy, model, args.L, args.outer,
                                      rng.child("eval"), T_steps=T)
    _write_artifact(out, "random-baseline.json", manifest, pair.to_record())
    print(f"random baseline sPCE {pair.lower.mean:.4f}±{pair.lower.se:.4f} "
          f"sNMC {pair.upper.mean:.4f}±{pair.upper.se:.4f}")
    return EXIT_OK


def cmd_myopic_1d(args) -> int:
    model = get_model("location", n_sources=1, dim=1)
    rng = RngStream(args.seed if args.seed is not None else 0)
    out = Path(args.out)
    manifest = _write_manifest(out, "myopic-1d", {"seed": rng.seed})
    from .models.base import History
    posterior = evaluation.grid_posterior(model, History.empty(1),
                                          grid=np.linspace(-4, 4, 600))
    xi_star, gains = evaluation.myopic_1d_next_design(posterior, model, rng)
    _write_artifact(out, "myopic-1d.json", manifest, {
        "xi_star": xi_star, "design_grid_points": len(gains),
        "gains": gains.tolist()})
    print(f"myopic one-step optimal design: {xi_star:.4f}")
    return EXIT_OK


def cmd_horizon_sweep(args) -> int:
    policy, model, ckpt = _load_policy_arg(args, allow_any_horizon=True)
    rng = RngStream(args.seed if args.seed is not None else 0)
    horizons = [int(t) for t in args.horizons.split(",")]
    out = Path(args.out)
    manifest = _write_manifest(out, "horizon-sweep", {
        "checkpoint": str(args.ckpt), "horizons": horizons, "L": args.L,
        "n_outer": args.outer, "seed": rng.seed})
    ests = evaluation.horizon_sweep(policy, model, horizons, args.L, args.outer, rng)
    series = [{"T": t, **e.to_record()} for t, e in zip(horizons, ests)]
    _write_artifact(out, "horizon-sweep.json", manifest, {"series": series})
    for row in series:
        print(f"T'={row['T']:>3}  sPCE {row['mean']:.4f} ± {row['se']:.4f}")
    return EXIT_OK


def cmd_timing(args) -> int:
    policy, model, ckpt = _load_policy_arg(args)
    rng = RngStream(args.seed if args.seed is not None else 0)
    T = args.T or policy.horizon
    out = Path(args.out)
    manifest = _write_manifest(out, "timing", {
        "checkpoint": str(args.ckpt), "T": T, "repeats": args.repeats,
        "seed": rng.seed})
    stats = evaluation.measure_deployment(policy, model, T, args.repeats, rng)
    _write_artifact(out, "timing.json", manifest, stats.to_record())
    print(f"design time for T={T}: {stats.mean * 1e3:.2f} ms ± {stats.se * 1e3:.2f} ms "
          f"(outcome simulation {stats.outcome_time_mean * 1e3:.2f} ms, excluded)")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.checkpoint_dir, args.journal)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="adex",
        description="Amortized adaptive experimental design: train design "
                    "policies, evaluate information bounds, run live sessions.")
    p.add_argument("--version", action="version", version=f"adex {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, ckpt=False):
        sp.add_argument("--model", choices=MODEL_NAMES, help="experiment model")
        sp.add_argument("--config", help="JSON config file (see README schema)")
        sp.add_argument("--seed", type=int, help="rng seed")
        sp.add_argument("--out", default="runs", help="output directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads for batch evaluation")
        sp.add_argument("--L", type=int, default=2000, help="contrastive samples")
        sp.add_argument("--outer", type=int, default=1000, help="outer samples")
        sp.add_argument("--T", type=int, help="experiment steps")
        if ckpt:
            sp.add_argument("--ckpt", required=True, help="checkpoint file")

    sp = sub.add_parser("train", help="train a design network (or fixed baseline)")
    common(sp)
    sp.add_argument("--steps", type=int, help="gradient steps")
    sp.add_argument("--batch", type=int, help="outer batch size")
    sp.add_argument("--lr", type=float, help="initial learning rate")
    sp.add_argument("--estimator", choices=("reparam", "score", "enumerate"))
    sp.add_argument("--fixed", action="store_true", help="train the fixed baseline")
    sp.add_argument("--resume", action="store_true", help="resume from --out checkpoint")
    sp.add_argument("--log-every", type=int, default=0)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="sPCE/sNMC (and grid EIG) for a checkpoint")
    common(sp, ckpt=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("rollout", help="export simulated design trajectories")
    common(sp, ckpt=True)
    sp.set_defaults(func=cmd_rollout)

    sp = sub.add_parser("baseline", help="evaluate/train a baseline policy")
    sp.add_argument("kind", choices=("random", "fixed"))
    common(sp)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--estimator", choices=("reparam", "score", "enumerate"))
    sp.add_argument("--resume", action="store_true")
    sp.add_argument("--log-every", type=int, default=0)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("myopic-1d", help="grid-quadrature myopic design oracle")
    common(sp)
    sp.set_defaults(func=cmd_myopic_1d)

    sp = sub.add_parser("horizon-sweep", help="sPCE across deployment horizons")
    common(sp, ckpt=True)
    sp.add_argument("--horizons", default="5,10,15",
                    help="comma-separated deployment horizons")
    sp.set_defaults(func=cmd_horizon_sweep)

    sp = sub.add_parser("timing", help="deployment-latency measurement")
    common(sp, ckpt=True)
    sp.add_argument("--repeats", type=int, default=10)
    sp.set_defaults(func=cmd_timing)

    sp = sub.add_parser("serve", help="run the live session HTTP service")
    sp.add_argument("--checkpoint-dir", default="runs", help="*.ckpt directory")
    sp.add_argument("--journal", help="append-only session journal path")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: code={exc.code} msg={exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: code={EXIT_CONFIG} msg={exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (obj.NumericError, SupportError) as exc:
        print(f"error: code={EXIT_NUMERIC} msg={exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"error: code={EXIT_IO} msg={exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: code={EXIT_IO} msg={exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
