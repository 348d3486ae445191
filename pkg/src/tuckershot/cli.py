"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 data error (bad files, shapes,
ranks, diverged training).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io
from .finetune import SyntheticTask, TrainConfig, TrainingDiverged, train
from .graph import SpecError
from .network import compare, init_network, network_forward
from .pipeline import compress, select_ranks
from .report import analyze, render_report
from .tucker import DEFAULT_MAX_SWEEPS, DEFAULT_TOL

EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _layers(arg):
    return None if arg is None else [s for s in arg.split(",") if s]


def cmd_init(args):
    spec = io.load_spec(args.arch)
    net = init_network(spec, seed=args.seed)
    io.save_model(args.out, net)
    print(f"wrote {args.out} ({net.n_params()} parameters)")


def cmd_rankselect(args):
    net = io.load_model(args.model)
    sel = select_ranks(net, _layers(args.layers))
    text = json.dumps(io.ranks_to_dict(sel.ranks, sel.per_group), indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_compress(args):
    net = io.load_model(args.model)
    layers = _layers(args.layers)
    if args.auto:
        ranks = select_ranks(net, layers).ranks
    else:
        ranks = io.load_ranks(args.ranks, net.spec)
    small, report = compress(net, ranks, layers, max_sweeps=args.max_sweeps, tol=args.tol)
    io.save_model(args.out, small)
    sys.stdout.write(render_report(report, args.format))


def cmd_analyze(args):
    spec = io.load_spec(args.arch)
    ranks = io.load_ranks(args.ranks, spec) if args.ranks else None
    sys.stdout.write(render_report(analyze(spec, ranks), args.format))


def cmd_infer(args):
    net = io.load_model(args.model)
    y = network_forward(net, io.load_tensor(args.input))
    if args.out:
        np.save(args.out, y)
    print(json.dumps({"shape": list(y.shape), "values": y.ravel().tolist()}))


def cmd_compare(args):
    a, b = io.load_model(args.model_a), io.load_model(args.model_b)
    max_abs, rel = compare(a, b, io.load_tensor(args.input))
    print(json.dumps({"max_abs": max_abs, "relative": rel}))


def cmd_finetune(args):
    net = io.load_model(args.model)
    task = SyntheticTask(seed=args.seed)
    if net.spec.input_shape != tuple(task.input_shape):
        raise ValueError(f"model input {net.spec.input_shape} does not match the synthetic task "
                         f"{tuple(task.input_shape)}; create one with `tuckershot init toy`")
    cfg = TrainConfig(base_lr=args.lr, epochs=args.epochs, seed=args.seed, batch_size=args.batch_size,
                      momentum=args.momentum)

    def log(record):
        print(json.dumps(record), flush=True)

    tuned, _ = train(net, task, cfg, log=log)
    if args.out:
        io.save_model(args.out, tuned)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tuckershot", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("init", help="random-weight model for an architecture")
    s.add_argument("arch", help="architecture JSON or shipped name (alexnet, vggs, googlenet, vgg16, toy)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("rankselect", help="VBMF rank selection")
    s.add_argument("model")
    s.add_argument("--layers", help="comma-separated subset of conv/fc layers")
    s.add_argument("--out")
    s.set_defaults(func=cmd_rankselect)

    s = sub.add_parser("compress", help="decompose and substitute layers")
    s.add_argument("model")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--ranks", help="rank file (or shipped name)")
    g.add_argument("--auto", action="store_true", help="select ranks with VBMF")
    s.add_argument("--layers", help="comma-separated subset of conv/fc layers")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("table", "json"), default="table")
    s.add_argument("--max-sweeps", type=int, default=DEFAULT_MAX_SWEEPS)
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("analyze", help="weights/FLOPs report from an architecture")
    s.add_argument("arch")
    s.add_argument("--ranks")
    s.add_argument("--format", choices=("table", "json"), default="table")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("infer", help="run a model on an .npy input")
    s.add_argument("model")
    s.add_argument("input")
    s.add_argument("--out", help="also save the output as .npy")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("compare", help="output difference of two models")
    s.add_argument("model_a")
    s.add_argument("model_b")
    s.add_argument("input")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("finetune", help="SGD on the synthetic task")
    s.add_argument("model")
    s.add_argument("--task", choices=("synthetic",), default="synthetic")
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=TrainConfig.base_lr)
    s.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    s.add_argument("--momentum", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_finetune)
    return p


DATA_ERRORS = (OSError, io.FormatError, SpecError, ValueError, KeyError, TrainingDiverged)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except DATA_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"tuckershot {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
