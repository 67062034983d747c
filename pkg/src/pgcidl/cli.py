"""Command-line entry point: ``pgcidl {synth,train,eval,inspect}``.

Exit codes: 0 success, 1 usage/config error, 2 data or format error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .data import SynthConfig, generate_synthetic, load_bag_file, load_dataset, save_dataset, split_dataset
from .evaluation import evaluate
from .exceptions import ConfigError, DimensionError, NumericalError, PGCIDLError
from .model import forward
from .train import TrainConfig, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("pgcidl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgcidl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a planted-factor synthetic dataset")
    d = SynthConfig()
    p.add_argument("--num-bags", type=int, default=d.num_bags)
    p.add_argument("--instances-per-bag", type=int, default=d.instances_per_bag)
    p.add_argument("--d-in", type=int, default=d.d_in)
    p.add_argument("--num-classes", type=int, default=d.num_classes)
    p.add_argument("--fractions", type=float, nargs=3, default=list(d.fractions), metavar=("TC", "ME", "BG"))
    p.add_argument("--separation", type=float, default=d.separation)
    p.add_argument("--me-leak", type=float, default=d.me_leak)
    p.add_argument("--noise-std", type=float, default=d.noise_std)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--out", required=True, help="dataset directory to create")

    p = sub.add_parser("train", help="train on a dataset directory")
    t = TrainConfig()
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--epochs", type=int, default=t.epochs)
    p.add_argument("--batch-size", type=int, default=t.batch_size)
    p.add_argument("--gamma", type=float, default=t.gamma)
    p.add_argument("--seed", type=int, default=t.seed)
    p.add_argument("--lr", type=float, default=None, help="constant learning rate (overrides the schedule)")
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--agg-mode", choices=["centroid_weighted", "instance_weighted"], default=t.agg_mode)
    p.add_argument("--width", type=int, default=t.width)
    p.add_argument("--rms-decay", type=float, default=t.rms_decay)
    p.add_argument("--rms-epsilon", type=float, default=t.rms_epsilon)
    p.add_argument("--train-ratio", type=float, default=t.train_ratio)
    p.add_argument("--model", choices=["pgcidl", "mean_pool"], default=t.model)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run directory for report.json")
    p.add_argument("--split", choices=["all", "train", "val"], default="all",
                   help="evaluate on the whole dataset or on the checkpoint's train/val split")

    p = sub.add_parser("inspect", help="dump the full forward trace of one bag")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--bag", help="path to a .pgbf bag file")
    src.add_argument("--bag-id", help="bag id inside --data")
    p.add_argument("--data")
    p.add_argument("--out", help="run directory; the trace goes to traces/<bag_id>.json (default: stdout)")
    return parser


def _write_manifest(out: Path, name: str, args, argv, extra=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": config.get("seed"),
        "inputs": {k: config[k] for k in ("data", "checkpoint", "bag") if config.get(k)},
        "outputs": str(out),
        "artifact_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    (out / name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _cmd_synth(args, argv) -> int:
    cfg = SynthConfig(args.num_bags, args.instances_per_bag, args.d_in, args.num_classes,
                      tuple(args.fractions), args.separation, args.me_leak, args.noise_std, args.seed)
    out = Path(args.out)
    _write_manifest(out, "manifest.json", args, argv)
    ds = generate_synthetic(cfg, args.name)
    save_dataset(ds, out)
    logger.info("wrote %d bags to %s", len(ds), out)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, gamma=args.gamma, seed=args.seed,
                       lr=args.lr, rank=args.rank, agg_mode=args.agg_mode,
                       width=args.width, rms_decay=args.rms_decay, rms_epsilon=args.rms_epsilon,
                       train_ratio=args.train_ratio, model=args.model)


def _cmd_train(args, argv) -> int:
    cfg = _train_config(args)
    out = Path(args.out)
    _write_manifest(out, "manifest.json", args, argv, {"train_config": cfg.to_dict()})
    ds = load_dataset(args.data)
    tr, va = split_dataset(ds, cfg.train_ratio, cfg.seed)
    params, history = train(cfg, tr, va)
    history.write_csv(out / "history.csv")
    save_checkpoint(params, cfg, out / "checkpoint.bin")
    logger.info("final train_acc %.4f val_acc %.4f", history.train_acc[-1], history.val_acc[-1])
    return EXIT_OK


def _cmd_eval(args, argv) -> int:
    out = Path(args.out)
    _write_manifest(out, "manifest.eval.json", args, argv)
    params, cfg = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if ds.feature_dim != params.d_in:
        raise DimensionError(f"dataset feature_dim {ds.feature_dim} does not match checkpoint input dim {params.d_in}")
    if args.split != "all":
        tr, va = split_dataset(ds, cfg.train_ratio, cfg.seed)
        ds = tr if args.split == "train" else va
    report = evaluate(params, ds, cfg)
    (out / "report.json").write_text(report.to_json())
    report.write_rows_csv(out / "bags.csv")
    print(report.to_json(), end="")
    return EXIT_OK


def trace_to_dict(trace, bag_id: str) -> dict:
    eff = trace.effects
    return {
        "bag_id": bag_id,
        "assignments": trace.assignments.tolist(),
        "group_sizes": trace.grouping.group_sizes.tolist(),
        "centroids": trace.grouping.centroids.tolist(),
        "objective_trace": list(trace.grouping.objective_trace),
        "grouping_degenerate": trace.grouping.degenerate,
        "P_v": eff.P_v.tolist(),
        "P_k": [None if p is None else p.tolist() for p in eff.P_k],
        "D": eff.D.tolist(),
        "w": eff.w.tolist(),
        "fallback_uniform": eff.fallback_uniform,
        "whole_bag_group": eff.whole_bag_group,
        "factor_map": {"TC": trace.factors.tc, "ME": trace.factors.me, "BG": trace.factors.bg},
        "instance_factors": [("TC", "ME", "BG")[c] for c in trace.instance_factors()],
        "z_final": trace.z_final.tolist(),
        "probs": trace.probs.tolist(),
        "d_reg": trace.d_reg,
    }


def _cmd_inspect(args, argv) -> int:
    params, cfg = load_checkpoint(args.checkpoint)
    if args.bag:
        bag = load_bag_file(args.bag)
    else:
        if not args.data:
            raise UsageError("--bag-id requires --data")
        ds = load_dataset(args.data)
        matches = [b for b in ds.bags if b.bag_id == args.bag_id]
        if not matches:
            raise ConfigError(f"no bag with id {args.bag_id!r} in {args.data}")
        bag = matches[0]
    if bag.feature_dim != params.d_in:
        raise DimensionError(f"bag feature_dim {bag.feature_dim} does not match checkpoint input dim {params.d_in}")
    text = json.dumps(trace_to_dict(forward(params, bag, cfg.loss_config), bag.bag_id), indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        _write_manifest(out, "manifest.inspect.json", args, argv)
        (out / "traces").mkdir(parents=True, exist_ok=True)
        (out / "traces" / f"{bag.bag_id}.json").write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


_COMMANDS = {"synth": _cmd_synth, "train": _cmd_train, "eval": _cmd_eval, "inspect": _cmd_inspect}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args, argv)
    except (UsageError, ConfigError) as exc:
        print(f"pgcidl {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"pgcidl {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PGCIDLError, FileNotFoundError, OSError) as exc:
        print(f"pgcidl {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
