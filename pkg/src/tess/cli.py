"""Command-line entry point: ``tess train | eval | cost | dump``.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from tess import checkpoint as ckpt_io
from tess.config import RunConfig, parse_assignments
from tess.costmodel import RULES, arch_from_specs, complexity_table, format_complexity, format_reports
from tess.data import parse_source
from tess.errors import ConfigError, DataError, NumericError
from tess.lsg import build_basis
from tess.network import parse_layers, preset_specs, train_sequence
from tess.trainer import evaluate, one_hot, restore, run_training
from tess.traces import TraceRecorder

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

COST_DEFAULTS = {
    "toy-dense": ((64,), 10, 2),
    "toy-conv": ((1, 16, 16), 6, 4),
    "vgg9-paper": ((2, 48, 48), 10, 10),
}

log = logging.getLogger("tess")


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}") from exc
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < TESS_SEED < explicit flags, field by field."""
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.default()
    if os.environ.get("TESS_SEED"):
        cfg = cfg.merged({"train.seed": os.environ["TESS_SEED"]})
    flags = {
        "model.preset": args.preset,
        "model.layers": args.layers,
        "data.source": args.dataset,
        "train.epochs": args.epochs,
        "train.seed": args.seed,
        "train.batch_size": args.batch_size,
        "train.threads": args.threads,
        "optim.lr": args.lr,
        "trace.alpha_post": args.alpha_post,
        "learn.t_l": args.t_l,
        "learn.update_mode": args.update_mode,
        "out.dir": args.out,
    }
    overrides = {k: v for k, v in flags.items() if v is not None}
    overrides.update(parse_assignments(args.set or []))
    return cfg.merged(overrides)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    progress = None if args.quiet else print
    summary = run_training(cfg, progress=progress)
    print(f"train accuracy {summary.final_train_accuracy:.10g}")
    print(f"val accuracy {summary.final_val_accuracy:.10g}")
    print(f"test accuracy {summary.test_accuracy:.10g}")
    print(f"artifacts in {summary.out_dir}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = ckpt_io.load(args.checkpoint)
    cfg = RunConfig.from_text(ckpt.config_text, "<checkpoint>")
    if args.dataset:
        cfg = cfg.merged({"data.source": args.dataset})
    cfg, net, (train, val, test) = restore(ckpt, cfg)
    splits = {"train": train, "val": val, "test": test}
    names = list(splits) if args.split == "all" else [args.split]
    batch = args.batch_size or cfg["train.batch_size"]
    for name in names:
        loss, acc = evaluate(net, splits[name], batch)
        print(f"{name} loss {loss:.10g} accuracy {acc:.10g}")
    return EXIT_OK


def _cost_geometry(args: argparse.Namespace):
    if args.config:
        cfg = RunConfig.from_file(args.config)
        kind, dims = parse_source(cfg["data.source"])
        if kind == "synth":
            classes, neurons, steps = dims
            input_shape = (neurons,)
        elif kind == "frames":
            classes, size, steps = dims
            input_shape = (1, size, size)
        else:
            from tess.data import load_event_frames

            ds = load_event_frames(dims[0])
            classes, steps, input_shape = ds.num_classes, ds.T, ds.frame_shape
        specs = (parse_layers(cfg["model.layers"]) if cfg["model.layers"]
                 else preset_specs(cfg["model.preset"], classes, cfg["model.hidden"]))
        t_l = cfg["learn.t_l"]
        alpha = cfg["trace.alpha_post"]
        input_shape = args.input or input_shape
        steps = args.T or steps
        classes = args.C or classes
    else:
        preset = args.preset or "vgg9-paper"
        if preset not in COST_DEFAULTS:
            raise ConfigError(f"unknown preset {preset!r}")
        default_shape, default_T, default_C = COST_DEFAULTS[preset]
        input_shape = args.input or default_shape
        steps = args.T or default_T
        classes = args.C or default_C
        size = input_shape[-1] if len(input_shape) == 3 else 32
        specs = preset_specs(preset, classes, input_size=size)
        t_l = 0
        alpha = 1.0
    if args.t_l is not None:
        t_l = args.t_l
    if args.alpha_post is not None:
        alpha = args.alpha_post
    return arch_from_specs(input_shape, specs, steps, classes, t_l), alpha != 0


def cmd_cost(args: argparse.Namespace) -> int:
    arch, alpha_nonzero = _cost_geometry(args)
    if args.table:
        sys.stdout.write(format_complexity(complexity_table(arch), args.format))
        return EXIT_OK
    rules = list(RULES) if args.rule == "all" else [args.rule]
    sys.stdout.write(format_reports(arch, rules, alpha_nonzero, args.format, args.bytes))
    return EXIT_OK


def _parse_basis(text: str) -> tuple[int, int, str]:
    fields = dict(item.split("=", 1) for item in text.split(",") if "=" in item)
    try:
        return int(fields["C"]), int(fields["n"]), fields.get("kind", "square-wave")
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"--basis expects C=<int>,n=<int>[,kind=...], got {text!r}") from exc


def cmd_dump(args: argparse.Namespace) -> int:
    if args.basis:
        classes, n, kind = _parse_basis(args.basis)
        basis = build_basis(classes, n, kind)
        rows = range(classes) if args.row is None else [args.row]
        for r in rows:
            print(" ".join(f"{int(v):+d}" for v in basis.b[r]))
        return EXIT_OK
    if not args.checkpoint:
        raise ConfigError("dump needs --basis or --checkpoint")
    ckpt = ckpt_io.load(args.checkpoint)
    if not args.traces:
        print(f"checkpoint version {ckpt_io.VERSION}, epoch {ckpt.epoch}, optimizer step {ckpt.optimizer_step}")
        print(f"lr {ckpt.lr:.10g}, best metric {ckpt.best_metric}, bad epochs {ckpt.bad_epochs}")
        for i, w in enumerate(ckpt.weights):
            print(f"layer {i}: shape {'x'.join(map(str, w.shape))}, l2 norm {float((w * w).sum()) ** 0.5:.10g}")
        return EXIT_OK
    cfg, net, (train, _, _) = restore(ckpt)
    if not 0 <= args.sample < len(train):
        raise DataError(f"sample index {args.sample} outside the training split")
    recorder = TraceRecorder()
    x = train.inputs[args.sample:args.sample + 1]
    y = one_hot(train.labels[args.sample:args.sample + 1], train.num_classes)
    train_sequence(net, x, y, recorder=recorder)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            recorder.write(fh)
    else:
        recorder.write(sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tess", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model")
    train.add_argument("--config")
    train.add_argument("--preset")
    train.add_argument("--layers")
    train.add_argument("--dataset")
    train.add_argument("--epochs", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--threads", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--alpha-post", type=float)
    train.add_argument("--t-l", type=int)
    train.add_argument("--update-mode")
    train.add_argument("--out")
    train.add_argument("--set", action="append", metavar="KEY=VALUE")
    train.add_argument("--quiet", action="store_true")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset")
    ev.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    ev.add_argument("--batch-size", type=int)
    ev.set_defaults(func=cmd_eval)

    cost = sub.add_parser("cost", help="analytical MAC/memory report")
    cost.add_argument("--config")
    cost.add_argument("--preset", choices=tuple(COST_DEFAULTS))
    cost.add_argument("--input", type=_shape, help="input shape, e.g. 2x48x48 or 64")
    cost.add_argument("--T", type=int)
    cost.add_argument("--C", type=int)
    cost.add_argument("--t-l", type=int)
    cost.add_argument("--alpha-post", type=float)
    cost.add_argument("--rule", choices=(*RULES, "all"), default="all")
    cost.add_argument("--format", choices=("text", "csv"), default="text")
    cost.add_argument("--bytes", type=int, default=4)
    cost.add_argument("--table", action="store_true", help="print the complexity table")
    cost.set_defaults(func=cmd_cost)

    dump = sub.add_parser("dump", help="debug dumps")
    dump.add_argument("--basis", help="C=<classes>,n=<width>[,kind=square-wave|identity]")
    dump.add_argument("--row", type=int)
    dump.add_argument("--checkpoint")
    dump.add_argument("--traces", action="store_true")
    dump.add_argument("--sample", type=int, default=0)
    dump.add_argument("--out")
    dump.set_defaults(func=cmd_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BrokenPipeError:
        # downstream closed early (e.g. piped into head); not an error
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
