"""Command line entry point (``unctraj``).

Flags mirror :class:`ExperimentConfig`; a ``--config`` JSON file, when
given, overrides any flag it sets.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import harness
from .harness import ConfigError, ExperimentConfig
from .noise_sim import uniform_confusion

COMMANDS = ("gen-data", "train-map", "estimate", "train-pred", "eval", "ablate", "render", "verify")


def _bool(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _add_config_flags(p):
    p.add_argument("--config", help="JSON ExperimentConfig; its fields override flags")
    p.add_argument("--out-dir")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--layouts", help="comma-separated layout mix")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--pos-scale-b", type=float, help="Laplace jitter scale in meters")
    p.add_argument("--confusion-eps", type=float, help="uniform class flip probability")
    p.add_argument("--map-epochs", type=int)
    p.add_argument("--map-lr", type=float)
    p.add_argument("--pred-epochs", type=int)
    p.add_argument("--pred-lr", type=float)
    p.add_argument("--unc-pos", type=_bool)
    p.add_argument("--unc-sem", type=_bool)


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    top = {}
    for flag, name in (("out_dir", "out_dir"), ("master_seed", "master_seed"), ("n_train", "n_train"),
                       ("n_val", "n_val"), ("n_test", "n_test"), ("unc_pos", "unc_pos"), ("unc_sem", "unc_sem")):
        v = getattr(args, flag, None)
        if v is not None:
            top[name] = v
    if getattr(args, "layouts", None):
        top["layouts"] = tuple(s.strip() for s in args.layouts.split(",") if s.strip())
    noise = {}
    if args.pos_scale_b is not None:
        noise["pos_scale_b"] = args.pos_scale_b
    if args.confusion_eps is not None:
        noise["confusion"] = uniform_confusion(args.confusion_eps)
    map_kw = {k: v for k, v in (("epochs", args.map_epochs), ("learning_rate", args.map_lr)) if v is not None}
    pred_kw = {k: v for k, v in (("epochs", args.pred_epochs), ("learning_rate", args.pred_lr)) if v is not None}
    try:
        cfg = dataclasses.replace(
            cfg,
            noise=dataclasses.replace(cfg.noise, **noise),
            map_train=dataclasses.replace(cfg.map_train, **map_kw),
            pred_train=dataclasses.replace(cfg.pred_train, **pred_kw),
            **top,
        )
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                override = json.load(fh)
            merged = cfg.to_dict()
            for k, v in override.items():
                if isinstance(v, dict) and isinstance(merged.get(k), dict):
                    merged[k] = {**merged[k], **v}
                else:
                    merged[k] = v
            cfg = ExperimentConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(prog="unctraj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "verify":
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--inject-kl-sign-bug", action="store_true", help="test hook: negate the KL closed form")
            continue
        _add_config_flags(p)
        if name in ("train-pred", "eval", "render"):
            p.add_argument("--variant", choices=sorted(harness.VARIANTS), help="defaults to the unc_pos/unc_sem flags")
        if name == "render":
            p.add_argument("--split", default="test", choices=harness.SPLITS)
            p.add_argument("--index", type=int, default=0)
            p.add_argument("--output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return harness.cmd_verify(args.seed, args.inject_kl_sign_bug)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "gen-data":
            m = harness.cmd_gen_data(cfg)
            for f, h in sorted(m["files"].items()):
                print(f"{f} {h}")
        elif args.command == "train-map":
            _, trace = harness.cmd_train_map(cfg)
            print(f"map loss {trace[0].total:.6f} -> {trace[-1].total:.6f}")
        elif args.command == "estimate":
            est = harness.cmd_estimate(cfg)
            print(" ".join(f"{k}:{sum(len(v) for v in e.values())} vertices" for k, e in est.items()))
        elif args.command == "train-pred":
            _, trace = harness.cmd_train_pred(cfg, args.variant)
            print(f"predictor loss {trace[0].total:.6f} -> {trace[-1].total:.6f}")
        elif args.command == "eval":
            r = harness.cmd_eval(cfg, args.variant)
            print(f"minADE {r.min_ade:.4f} minFDE {r.min_fde:.4f} MR {r.miss_rate:.4f} agents {r.n_agents}")
        elif args.command == "ablate":
            sys.stdout.write(harness.cmd_run_ablation(cfg, log=lambda s: print(s, file=sys.stderr)))
        elif args.command == "render":
            harness.cmd_render(cfg, args.split, args.index, args.variant, args.output)
    except (FileNotFoundError, ValueError, IndexError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
