"""Command-line front end.

Subcommands: ``cost``, ``gradcheck``, ``gen-data``, ``train``, ``eval``,
``bench``. Every subcommand accepts ``--config PATH`` pointing at a JSON
object whose keys match the flag names (dashes as underscores); explicit
flags override the file, the file overrides built-in defaults. Machine
output is JSON (``--format json``), human output plain tables.

Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 I/O failure,
5 failed verification or training run.
"""

import argparse
import json
import sys

from . import backend, bench, costmodel, gradcheck, pipeline
from .aggregators import AggregatorConfig
from .errors import (
    ConfigError,
    ContainerError,
    DimensionError,
    HgnlError,
    SamplingError,
    TrainingError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_CHECK = 5


def _dump(payload, fmt, render):
    if fmt == "json":
        print(json.dumps(payload, sort_keys=True))
    else:
        print(render())


def _agg_config_from_args(args) -> AggregatorConfig:
    kind = args.kind
    if kind in ("avg", "max"):
        return AggregatorConfig(kind=kind, m=args.m)
    if kind == "nl":
        return AggregatorConfig.nl(args.m, args.m1)
    return AggregatorConfig.hgnl(args.m, args.m1, args.g1, args.g2, args.shared)


def _add_aggregator_flags(parser, kinds=("nl", "hgnl", "avg", "max")):
    parser.add_argument("--kind", choices=kinds, default="hgnl")
    parser.add_argument("--m", type=int, default=1024, help="feature length per frame")
    parser.add_argument("--m1", type=int, default=128, help="query/key embedding width")
    parser.add_argument("--g1", type=int, default=16, help="query/key conv groups")
    parser.add_argument("--g2", type=int, default=8, help="value conv / attention groups")
    parser.add_argument("--shared", action="store_true",
                        help="share one weight block across each layer's groups")


def _add_config_flag(parser):
    parser.add_argument("--config", metavar="PATH",
                        help="JSON file with defaults for this subcommand's flags")


def _add_format_flag(parser):
    parser.add_argument("--format", choices=("json", "table"), default="table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgnl",
        description="Frame-feature aggregators with exact cost accounting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost", help="analytic parameter counts and MAdds")
    _add_aggregator_flags(p)
    p.add_argument("--n", type=int, default=None, help="frame count for MAdds")
    p.add_argument("--paper-tables", action="store_true",
                   help="emit the reference tables for the standard "
                        "configurations (m=1024, m1 in {512,128}, g1=16, g2=8)")
    p.add_argument("--measure", action="store_true",
                   help="also run an instrumented forward pass and report "
                        "the tallied counts")
    p.add_argument("--out", metavar="PATH", help="also write the JSON report here")
    _add_config_flag(p)
    _add_format_flag(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_aggregator_flags(p)
    p.add_argument("--n", type=int, default=5, help="frame count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--eps", type=float, default=1e-6)
    _add_config_flag(p)
    _add_format_flag(p)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--n-total", type=int, default=16)
    p.add_argument("--signal-frames", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--samples-per-class", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pattern-seed", type=int, default=None,
                   help="fix class patterns separately from the sample noise "
                        "(so train/val files describe the same task)")
    p.add_argument("--out", required=True, metavar="PATH")
    _add_config_flag(p)

    p = sub.add_parser("train", help="train an aggregator plus classifier head")
    p.add_argument("--data", metavar="PATH", help="training dataset file")
    p.add_argument("--val-data", metavar="PATH", help="validation dataset file")
    p.add_argument("--kind", choices=("nl", "hgnl", "avg", "max"), default="hgnl")
    p.add_argument("--m1", type=int, default=8)
    p.add_argument("--g1", type=int, default=4)
    p.add_argument("--g2", type=int, default=2)
    p.add_argument("--shared", action="store_true")
    p.add_argument("--segments", type=int, default=3)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--decay-epochs", default="20,30",
                   help="comma-separated epochs at which the rate is divided")
    p.add_argument("--decay-factor", type=float, default=10.0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", metavar="PATH", help="write trained model here")
    p.add_argument("--metrics", metavar="PATH", help="write per-epoch JSON records here")
    _add_config_flag(p)
    _add_format_flag(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True, metavar="PATH")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--n-eval", type=int, default=25,
                   help="frames per sample at evaluation time")
    _add_config_flag(p)
    _add_format_flag(p)

    p = sub.add_parser("bench", help="compare kernel backends")
    p.add_argument("--m", type=int, default=1024)
    p.add_argument("--m1", type=int, default=128)
    p.add_argument("--g1", type=int, default=16)
    p.add_argument("--g2", type=int, default=8)
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--repeats", type=int, default=5)
    _add_config_flag(p)
    _add_format_flag(p)

    return parser


def _apply_config_file(parser, argv):
    """Let a --config JSON file supply defaults that explicit flags override."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv[1:])
    if not known.config:
        return parser.parse_args(argv)
    with open(known.config, "r", encoding="utf-8") as fh:
        try:
            overrides = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ContainerError(f"{known.config}: not valid JSON ({exc})") from exc
    if not isinstance(overrides, dict):
        raise ContainerError(f"{known.config}: config must be a JSON object")
    sub_actions = [
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    ]
    subparser = sub_actions[0].choices[argv[0]]
    valid = {a.dest for a in subparser._actions}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    subparser.set_defaults(**overrides)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# subcommand bodies


def cmd_cost(args) -> int:
    if args.paper_tables:
        configs = costmodel.standard_table_configs()
        n = args.n if args.n is not None else 8
        reports = [costmodel.madds(c, n) for c in configs]
        payload = {"reports": [r.to_dict() for r in reports],
                   "madds_formulas": {c.label(): costmodel.madds_formulas(c)
                                      for c in configs},
                   "comparison": costmodel.compare(configs, n)}
        text = (costmodel.render_params_table(reports) + "\n\n"
                + costmodel.render_madds_table(reports))
    else:
        config = _agg_config_from_args(args)
        if args.n is not None:
            report = costmodel.madds(config, args.n)
            if args.measure:
                costmodel.attach_measurement(report)
            text = (costmodel.render_params_table([report]) + "\n\n"
                    + costmodel.render_madds_table([report]))
        else:
            report = costmodel.param_count(config)
            text = costmodel.render_params_table([report])
        payload = report.to_dict()
    _dump(payload, args.format, lambda: text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = _agg_config_from_args(args)
    report = gradcheck.check_aggregator(
        config, args.n, seed=args.seed, eps=args.eps, tolerance=args.tolerance
    )
    def render():
        lines = [f"gradient check: {config.label()}, n={args.n}, seed={args.seed}"]
        for name, err in sorted(report.errors.items()):
            lines.append(f"  {name:<10} rel err {err:.3e}")
        lines.append(
            f"{'PASS' if report.passed else 'FAIL'}: max {report.max_error:.3e} "
            f"({report.worst_block}) vs tolerance {report.tolerance:g}"
        )
        return "\n".join(lines)
    _dump(report.to_dict(), args.format, render)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_gen_data(args) -> int:
    spec = pipeline.DatasetSpec(
        classes=args.classes, m=args.m, n_total=args.n_total,
        signal_frames=args.signal_frames, noise=args.noise,
        samples_per_class=args.samples_per_class, seed=args.seed,
        pattern_seed=args.pattern_seed,
    )
    ds = pipeline.generate_dataset(spec)
    pipeline.save_dataset(ds, args.out)
    print(f"wrote {ds.num_samples} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if not args.data:
        raise ConfigError("train requires --data (generate one with gen-data)")
    train_ds = pipeline.load_dataset(args.data)
    val_ds = pipeline.load_dataset(args.val_data) if args.val_data else None
    m = train_ds.spec.m
    if args.kind in ("avg", "max"):
        agg_config = AggregatorConfig(kind=args.kind, m=m)
    elif args.kind == "nl":
        agg_config = AggregatorConfig.nl(m, args.m1)
    else:
        agg_config = AggregatorConfig.hgnl(m, args.m1, args.g1, args.g2, args.shared)
    decay = tuple(int(x) for x in str(args.decay_epochs).split(",") if x != "")
    cfg = pipeline.TrainConfig(
        segments=args.segments, epochs=args.epochs, lr=args.lr,
        decay_epochs=decay, decay_factor=args.decay_factor,
        batch_size=args.batch_size, seed=args.seed,
    )
    result = pipeline.train(train_ds, agg_config, cfg, val_ds=val_ds)
    if args.checkpoint:
        pipeline.save_checkpoint(args.checkpoint, result.params, result.head)
    if args.metrics:
        pipeline.write_metrics(result.history, args.metrics)
    final = result.history[-1]
    payload = {"config": agg_config.to_dict(), "train": cfg.to_dict(),
               "final": final}
    def render():
        lines = [
            f"epoch {r['epoch']:>3}  lr {r['lr']:.5f}  loss {r['loss']:.4f}  "
            f"train {r['train_acc']:.3f}"
            + (f"  val {r['val_acc']:.3f}" if r["val_acc"] is not None else "")
            for r in result.history
        ]
        return "\n".join(lines)
    _dump(payload, args.format, render)
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = pipeline.load_dataset(args.data)
    params, head = pipeline.load_checkpoint(args.checkpoint)
    result = pipeline.evaluate(params, head, ds, args.n_eval)
    payload = {"n_eval": args.n_eval, **result.to_dict()}
    _dump(payload, args.format,
          lambda: f"top1 {result.top1:.4f}  top5 {result.top5:.4f}  "
                  f"({result.samples} samples, n_eval={args.n_eval})")
    return EXIT_OK


def cmd_bench(args) -> int:
    rows = bench.run_benchmark(
        m=args.m, m1=args.m1, g1=args.g1, g2=args.g2, n=args.n,
        repeats=args.repeats,
    )
    payload = {"active_backend": backend.active_backend(), "rows": rows}
    _dump(payload, args.format, lambda: bench.render_rows(rows))
    return EXIT_OK


_COMMANDS = {
    "cost": cmd_cost,
    "gradcheck": cmd_gradcheck,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and argv[0] in _COMMANDS:
            args = _apply_config_file(parser, argv)
        else:
            args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ContainerError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DimensionError, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, HgnlError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
