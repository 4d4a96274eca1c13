"""Command-line entry point: ``train``, ``eval``, ``analyze``, ``sweep-gamma``.

Exit codes: 0 success, 1 runtime/data error, 2 usage error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analyze import analyze
from .data import load_checkpoint, load_dataset, save_checkpoint
from .decode import DecodeWeights
from .errors import ArchParseError, ConfigError, EttfsError
from .neuron import AmosConfig
from .train import TrainConfig, build_network, evaluate, fit

INPUT_SHAPES = {"mnist": (1, 28, 28), "fashion": (1, 28, 28), "cifar10": (3, 32, 32)}

# per-dataset defaults: decode mode, gamma, loss, optimizer, lr, schedule, batch size
DATASET_DEFAULTS = {
    "mnist": ("exp", 2.0, "mse", "adamw", 1e-3, "constant", 128),
    "fashion": ("exp", 3.0, "mse", "adamw", 1e-3, "constant", 128),
    "cifar10": ("lin", 3.0, "ce", "sgd", 0.1, "warmup_cosine", 64),
}


class _UsageError(Exception):
    pass


def _add_train_args(p):
    p.add_argument("--arch", required=True)
    p.add_argument("--dataset", choices=sorted(INPUT_SHAPES), default="mnist")
    p.add_argument("--data-dir", default=None, help="directory holding the dataset files")
    p.add_argument("--t", type=int, default=8, dest="T")
    p.add_argument("--init", choices=["ettfs", "kaiming"], default="ettfs")
    p.add_argument("--norm", choices=["off", "on", "affine"], default="affine")
    p.add_argument("--pool", choices=["avg", "max"], default="avg")
    p.add_argument("--decode", choices=["exp", "lin"], default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--loss", choices=["mse", "ce"], default=None)
    p.add_argument("--optimizer", choices=["adamw", "sgd"], default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--schedule", choices=["constant", "warmup_cosine"], default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoding", choices=["latency", "direct"], default="latency")
    p.add_argument("--neuron", choices=["if", "lif"], default="if")
    p.add_argument("--v-th", type=float, default=1.0)
    p.add_argument("--tau-m", type=float, default=2.0)
    p.add_argument("--surrogate", choices=["atan", "rect"], default="atan")
    p.add_argument("--surrogate-width", type=float, default=None)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--limit-train", type=int, default=None, help="use only the first N training samples")
    p.add_argument("--limit-test", type=int, default=None, help="use only the first N test samples")
    p.add_argument("--quiet", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="ettfs", description="Train, evaluate and analyze TTFS spiking networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write a checkpoint")
    _add_train_args(p)
    p.add_argument("--out", default=None, help="checkpoint path")
    p.add_argument("--metrics", default=None, help="NDJSON metrics file (appended)")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", choices=sorted(INPUT_SHAPES), default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--fuse", action="store_true", help="fold normalization/affine into synapses first")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--limit-test", type=int, default=None)
    p.add_argument("--json", action="store_true", help="print one JSON object instead of text")

    p = sub.add_parser("analyze", help="forward current / weight-gradient statistics at init")
    p.add_argument("--arch", default="{FC400}*4-FC10")
    p.add_argument("--input-shape", default="784", help="comma-separated, e.g. 1,28,28")
    p.add_argument("--t", type=int, default=8, dest="T")
    p.add_argument("--init", choices=["ettfs", "kaiming", "both"], default="both")
    p.add_argument("--mode", choices=["train", "infer"], default="train")
    p.add_argument("--batches", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None, help="write stats.json and histograms.ndjson here")

    p = sub.add_parser("sweep-gamma", help="train across decoding gammas and decay modes")
    _add_train_args(p)
    p.add_argument("--gammas", default="1.5,2,2.5,3")
    p.add_argument("--modes", default="exp,lin")
    p.add_argument("--results", default=None, help="NDJSON file receiving one row per run")
    return parser


def _resolve_train(args, decode_mode=None, gamma=None):
    mode, g, loss, opt, lr, sched, bs = DATASET_DEFAULTS[args.dataset]
    try:
        dw = DecodeWeights(decode_mode or args.decode or mode,
                           gamma if gamma is not None else (args.gamma or g), args.T)
        cfg = TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size or bs,
            optimizer=args.optimizer or opt, lr=args.lr if args.lr is not None else lr,
            momentum=args.momentum,
            weight_decay=args.weight_decay if args.weight_decay is not None else
            (0.01 if (args.optimizer or opt) == "adamw" else 5e-4),
            schedule=args.schedule or sched, loss=args.loss or loss, T=args.T, seed=args.seed,
            encoding=args.encoding, decode=dw, clip_norm=args.clip_norm)
        neuron = AmosConfig(v_threshold=args.v_th, charge_kind=args.neuron, tau_m=args.tau_m,
                            surrogate=args.surrogate, surrogate_width=args.surrogate_width)
    except ConfigError as exc:
        raise _UsageError(str(exc)) from exc
    return cfg, neuron


def _data_dir(args):
    if args.data_dir is None:
        raise _UsageError("--data-dir is required")
    return args.data_dir


def _load_splits(args):
    d = _data_dir(args)
    train = load_dataset(args.dataset, d, "train").subset(args.limit_train)
    test = load_dataset(args.dataset, d, "test").subset(args.limit_test)
    return train, test


def _make_net(args, cfg, neuron):
    try:
        return build_network(args.arch, INPUT_SHAPES[args.dataset], args.T, init=args.init,
                             norm=args.norm, pool=args.pool, neuron=neuron, seed=args.seed,
                             encoding=args.encoding,
                             num_classes=10)
    except (ArchParseError, ConfigError) as exc:
        raise _UsageError(str(exc)) from exc


def _run_training(args, cfg, neuron, train, test, metrics=None, log=None):
    net = _make_net(args, cfg, neuron)
    history = fit(net, train, test, cfg, metrics_path=metrics, log=log)
    return net, history


def cmd_train(args):
    cfg, neuron = _resolve_train(args)
    train, test = _load_splits(args)
    log = None if args.quiet else (lambda s: print(s, flush=True))
    net, history = _run_training(args, cfg, neuron, train, test, args.metrics, log)
    if args.out:
        save_checkpoint(net, args.out, extra={
            "dataset": args.dataset, "encoding": args.encoding,
            "decode": {"mode": cfg.decode.mode, "gamma": cfg.decode.gamma}, "loss": cfg.loss})
    last = history[-1] if history else None
    print(json.dumps({"final_test_acc": last.test_acc if last else None,
                      "avg_infer_steps": last.avg_infer_steps if last else None,
                      "epochs": len(history)}))
    return 0


def cmd_eval(args):
    if not Path(args.ckpt).exists():
        print(f"error: checkpoint {args.ckpt} not found", file=sys.stderr)
        return 1
    net = load_checkpoint(args.ckpt)
    extra = net.meta.get("extra", {})
    args.dataset = args.dataset or extra.get("dataset")
    if args.dataset is None:
        raise _UsageError("--dataset is required (checkpoint does not name one)")
    encoding = extra.get("encoding", "latency")
    test = load_dataset(args.dataset, _data_dir(args), "test").subset(args.limit_test)
    if args.fuse and not net.fused:
        net.fuse()
    result = {"fused": net.fused, "n": len(test)}
    for mode in ("early_stop", "fixed_T"):
        r = evaluate(net, test, net.T, encoding, mode, args.batch_size)
        result[mode] = {"accuracy": r.accuracy, "avg_infer_steps": r.avg_steps}
    if args.json:
        print(json.dumps(result))
    else:
        print(f"samples          {result['n']}  (fused={result['fused']})")
        for mode in ("early_stop", "fixed_T"):
            print(f"{mode:<16} accuracy {result[mode]['accuracy']:.4f}  "
                  f"avg_infer_steps {result[mode]['avg_infer_steps']:.3f}")
    return 0


def cmd_analyze(args):
    try:
        shape = tuple(int(v) for v in args.input_shape.split(","))
    except ValueError as exc:
        raise _UsageError(f"bad --input-shape {args.input_shape!r}") from exc
    inits = ["kaiming", "ettfs"] if args.init == "both" else [args.init]
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "histograms.ndjson").write_text("")
    summary = {}
    for init in inits:
        try:
            net = build_network(args.arch, shape, args.T, init=init, norm="off", seed=args.seed)
        except (ArchParseError, ConfigError) as exc:
            raise _UsageError(str(exc)) from exc
        rep = analyze(net, args.batches, args.batch_size, args.seed, args.mode, args.bins)
        summary[init] = [vars(l) for l in rep.layers]
        print(f"[{init}] layer  mean(X)      var(X)       mean|dL/dW|")
        for l in rep.layers:
            print(f"[{init}] {l.layer:5d}  {l.x_mean:+.4e}  {l.x_var:.4e}  {l.grad_abs_mean:.3e}")
        if out_dir:
            with open(out_dir / "histograms.ndjson", "a") as f:
                for h in rep.histograms:
                    f.write(json.dumps({"init": init, **h}) + "\n")
    if out_dir:
        (out_dir / "stats.json").write_text(json.dumps(
            {"arch": args.arch, "T": args.T, "mode": args.mode, "layers": summary}, indent=2))
    return 0


def _parse_list(text, conv):
    try:
        return [conv(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise _UsageError(f"cannot parse list {text!r}") from exc


def cmd_sweep_gamma(args):
    gammas = _parse_list(args.gammas, float)
    modes = _parse_list(args.modes, str.strip)
    combos = [(m, g) for m in modes for g in gammas]
    configs = [_resolve_train(args, m, g) for m, g in combos]  # validate all before training
    train, test = _load_splits(args)
    rows = []
    print("mode  gamma  test_acc  avg_infer_steps")
    for (mode, gamma), (cfg, neuron) in zip(combos, configs):
        _, history = _run_training(args, cfg, neuron, train, test)
        last = history[-1]
        row = {"mode": mode, "gamma": gamma, "test_acc": last.test_acc,
               "avg_infer_steps": last.avg_infer_steps, "epochs": len(history)}
        rows.append(row)
        print(f"{mode:<5} {gamma:<6g} {last.test_acc:.4f}    {last.avg_infer_steps:.3f}", flush=True)
        if args.results:
            with open(args.results, "a") as f:
                f.write(json.dumps(row) + "\n")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze,
            "sweep-gamma": cmd_sweep_gamma}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EttfsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
