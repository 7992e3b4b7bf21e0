"""Command-line entry points: gen-data, train, eval, plot, grad-check.

Exit codes: 0 ok, 1 usage, 2 validation, 3 numerical failure. Log verbosity
comes from ``MHAJAM_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .baselines import const_vel_yaw, physics_oracle
from .checks import DEFAULT_TOL, run_grad_checks
from .config import ConfigError, load_run_config
from .geometry import RasterMap
from .metrics import evaluate, point_prediction
from .model import ModelConfig, prepare_episode
from .plotting import attention_payload, load_attention_json, render_svg, save_attention_json, save_svg
from .synth import LAYOUTS, AgentState, ScenarioSpec, generate_episode, read_dataset, write_dataset
from .training import NumericalError, load_checkpoint, new_state, predict_prepared, train

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("mhajam")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


# ------------------------------------------------------------------ gen-data

def cmd_gen_data(args) -> int:
    layouts = [s.strip() for s in args.layout.split(",") if s.strip()]
    for name in layouts:
        if name not in LAYOUTS:
            raise ConfigError("layout", f"must be among {LAYOUTS}, got {name!r}")
    if args.n < 0:
        raise ConfigError("n", "must be >= 0")
    specs = {name: ScenarioSpec(layout=name, noise=args.noise,
                                speed_range=(args.speed_min, args.speed_max)) for name in layouts}
    seeds = np.random.default_rng(args.seed).integers(0, 2**63 - 1, size=args.n)
    episodes = [generate_episode(specs[layouts[i % len(layouts)]], int(s)) for i, s in enumerate(seeds)]
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        raise ConfigError("out", f"directory {out.parent} does not exist")
    write_dataset(out, episodes, meta={"layouts": layouts, "n": args.n, "seed": args.seed})
    counts = Counter(ep.layout for ep in episodes)
    for name in layouts:
        print(f"{name}: {counts.get(name, 0)}")
    print(f"wrote {len(episodes)} episodes to {out}")
    return EXIT_OK


# --------------------------------------------------------------------- train

def _run_config(args):
    overrides = {
        "preset": getattr(args, "preset", None),
        "model.n_modes": getattr(args, "n_modes", None),
        "model.variant": getattr(args, "variant", None),
        "loss.lambda_or": getattr(args, "lambda_or", None),
        "loss.lambda_cl": getattr(args, "lambda_cl", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "train.lr": getattr(args, "lr", None),
        "train.lr_schedule": getattr(args, "lr_schedule", None),
        "train.seed": getattr(args, "seed", None),
        "train.warmup_epochs": getattr(args, "warmup_epochs", None),
        "data.train": getattr(args, "data", None),
    }
    return load_run_config(args.config, overrides)


def cmd_train(args) -> int:
    run = _run_config(args)
    if "train" not in run.data:
        raise ConfigError("data.train", "no training dataset given")
    state = None
    if args.resume:
        ck = load_checkpoint(args.resume, expect_model=run.model)
        state = ck.state
    episodes = read_dataset(run.data["train"])
    items = [prepare_episode(ep, run.model) for ep in episodes]
    out = Path(args.out)
    telemetry_path = Path(args.log) if args.log else out.with_suffix(".jsonl")
    mode = "a" if args.resume else "w"
    with open(telemetry_path, mode) as tel:
        state = train(items, run.model, run.loss, run.train, state=state or new_state(run.model, run.train),
                      telemetry=tel, checkpoint_path=out)
    print(f"trained {state.epoch} epochs ({state.step} steps); checkpoint {out}; telemetry {telemetry_path}")
    return EXIT_OK


# ---------------------------------------------------------------------- eval

def evaluation_table(ck, episodes, ks, ds, offroad_rule="any", offroad_k=None) -> dict:
    """MetricsReports for the model and both physics baselines, keyed by row name."""
    cfg = ck.model
    items = [prepare_episode(ep, cfg, with_field=False) for ep in episodes]
    preds = predict_prepared(items, ck.state.params, cfg)
    gts = [ep.ground_truth_future for ep in episodes]
    if any(g is None for g in gts):
        raise ConfigError("data", "evaluation episodes need ground-truth futures")
    rasters = [RasterMap(it.raster, cfg.resolution, cfg.space) for it in items]
    states = [AgentState(*ep.target_history.states[-1]) for ep in episodes]
    cv = [point_prediction(const_vel_yaw(s, cfg.future_len)) for s in states]
    oracle = [point_prediction(physics_oracle(s, g).trajectory) for s, g in zip(states, gts)]
    kw = dict(ks=ks, ds=ds, offroad_rule=offroad_rule)
    return {
        "model": evaluate(preds, gts, rasters, offroad_k=offroad_k, **kw).to_dict(),
        "const_vel_yaw": evaluate(cv, gts, rasters, **kw).to_dict(),
        "physics_oracle": evaluate(oracle, gts, rasters, **kw).to_dict(),
    }


def cmd_eval(args) -> int:
    run = load_run_config(args.config, {"data.test": args.data})
    if "test" not in run.data:
        raise ConfigError("data.test", "no evaluation dataset given")
    ck = load_checkpoint(args.checkpoint, expect_model=run.model if args.config else None)
    ks = args.ks or list(run.eval.ks)
    ds = args.ds or list(run.eval.ds)
    if any(k < 1 for k in ks):
        raise ConfigError("ks", "must be positive")
    if any(d <= 0 for d in ds):
        raise ConfigError("ds", "must be positive")
    episodes = read_dataset(run.data["test"])
    if not episodes:
        raise ConfigError("data.test", "dataset is empty")
    table = evaluation_table(ck, episodes, ks, ds, run.eval.offroad_rule, run.eval.offroad_k)
    text = json.dumps(table, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------- plot

def cmd_plot(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    episodes = read_dataset(args.data)
    if not 0 <= args.index < len(episodes):
        raise ConfigError("index", f"must be in 0..{len(episodes) - 1}")
    ep = episodes[args.index]
    ep.validate(ck.model.space)
    item = prepare_episode(ep, ck.model, with_field=False)
    pred = predict_prepared([item], ck.state.params, ck.model)[0]
    if args.from_attention:
        payload = load_attention_json(args.from_attention)
    else:
        payload = attention_payload(pred, ck.model, args.block, ep.seed)
    if args.attention_out:
        save_attention_json(args.attention_out, payload)
    svg = render_svg(ep, pred, ck.model, payload if not args.no_attention else None, args.head)
    save_svg(args.out, svg)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- grad-check

def cmd_grad_check(args) -> int:
    cfg = ModelConfig.tiny()
    if args.n_modes:
        cfg = ModelConfig.tiny(n_modes=args.n_modes)
    report = run_grad_checks(tol=args.tol, seed=args.seed, end_to_end=not args.primitives_only, cfg=cfg)
    for name, err in report.errors.items():
        flag = "ok  " if err < report.tol else "FAIL"
        print(f"{flag} {name:40s} {err:.3e}")
    if report.failures:
        print("failed: " + ", ".join(report.failures))
        return EXIT_NUMERICAL
    print(f"all {len(report.errors)} checks below {report.tol:g}")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mhajam", description="Multimodal trajectory prediction with joint agent-map attention.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic episode dataset")
    g.add_argument("--layout", default="four_way", help=f"comma-separated subset of {','.join(LAYOUTS)}")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--speed-min", type=float, default=5.0)
    g.add_argument("--speed-max", type=float, default=10.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="TOML run configuration")
    t.add_argument("--data", help="training dataset (overrides data.train)")
    t.add_argument("--out", required=True, help="checkpoint path, rewritten every epoch")
    t.add_argument("--log", help="JSONL telemetry path (default: checkpoint path with .jsonl)")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--preset", choices=("desk", "compact", "tiny", "paper"))
    t.add_argument("--variant")
    t.add_argument("--n-modes", type=int)
    t.add_argument("--lambda-or", type=float)
    t.add_argument("--lambda-cl", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--warmup-epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-schedule", choices=("constant", "cosine"))
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint against physics baselines")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="evaluation dataset (overrides data.test)")
    e.add_argument("--config", help="TOML run configuration (eval section and model check)")
    e.add_argument("--ks", type=_ints)
    e.add_argument("--ds", type=_floats)
    e.add_argument("--out", help="write the JSON report here as well")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="render an episode, predictions and attention as SVG")
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--data", required=True)
    pl.add_argument("--index", type=int, default=0)
    pl.add_argument("--out", required=True)
    pl.add_argument("--head", type=int, help="1-based attention head (default: most probable mode)")
    pl.add_argument("--block", help="attention block for SAM models (agents or map)")
    pl.add_argument("--attention-out", help="also export the attention maps as JSON")
    pl.add_argument("--from-attention", help="draw the overlay from an exported attention JSON")
    pl.add_argument("--no-attention", action="store_true")
    pl.set_defaults(func=cmd_plot)

    gc = sub.add_parser("grad-check", help="finite-difference gradient checks")
    gc.add_argument("--tol", type=float, default=DEFAULT_TOL)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--n-modes", type=int)
    gc.add_argument("--primitives-only", action="store_true")
    gc.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    level = os.environ.get("MHAJAM_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("mhajam: a command is required (gen-data, train, eval, plot, grad-check)")
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
