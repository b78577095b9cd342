"""Command line interface.

Subcommands: synth (write a synthetic corpus), graph (export a part graph),
train, eval, ablate (layer/pooling grid on synthetic data), check (gradient
and invariance self-checks). Exit codes: 0 success, 1 usage error, 2
runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import pipeline
from .config import RunConfig, desk_config
from .data import synth_object
from .geometry import load_cloud
from .partgraph import save_part_graph


def _split_overrides(extras):
    values = {}
    for item in extras:
        if not item.startswith("--") or "=" not in item:
            raise argparse.ArgumentTypeError(f"expected --key=value, got {item!r}")
        key, value = item[2:].split("=", 1)
        values[key] = value
    return values


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else desk_config()
    cfg.apply_overrides(_split_overrides(args.overrides))
    return cfg


def _add_config_args(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("overrides", nargs="*", metavar="--key=value",
                        help="config overrides")


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    rng = np.random.default_rng(cfg.seed)
    for cname in cfg.class_list:
        out = os.path.join(args.out, cname)
        os.makedirs(out, exist_ok=True)
        for i in range(cfg.n_train_per_class):
            cloud = synth_object(cname, cfg.n_points, cfg.shape_noise, rng,
                                 (cfg.scale_min, cfg.scale_max))
            with open(os.path.join(out, f"{cname}_{i:04d}.xyz"), "w") as fh:
                for p, n in zip(cloud.positions, cloud.normals):
                    fh.write(" ".join(repr(float(v)) for v in (*p, *n)) + "\n")
    print(f"wrote {len(cfg.class_list)} classes x {cfg.n_train_per_class} objects to {args.out}")
    return 0


def cmd_graph(args) -> int:
    cfg = _load_config(args)
    cloud = load_cloud(getattr(args, "in"))
    rng = np.random.default_rng(cfg.seed)
    graph = pipeline.build_object_graph(
        pipeline.LabeledObject(cloud, 0, object_id=getattr(args, "in")), cfg, rng)
    save_part_graph(graph, args.out)
    print(f"{len(graph.parts)} parts, {len(graph.edges)} edges -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    result = pipeline.train(cfg)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"final epoch loss: {result.loss_history[-1]:.4f}")
    print(result.report.format_table())
    prefix = os.path.join(cfg.out_dir, "train_metrics")
    result.report.write(prefix)
    print(f"metrics: {prefix}.txt / {prefix}.tsv")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    net, class_names = pipeline.load_checkpoint(args.checkpoint, cfg)
    _, test_objects, _ = pipeline.make_datasets(cfg)
    report = pipeline.evaluate(net, test_objects, args.variant, cfg, class_names)
    print(report.format_table())
    if args.out:
        report.write(args.out)
        print(f"metrics: {args.out}.txt / {args.out}.tsv")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    results = pipeline.ablate(cfg, seeds=seeds)
    print(pipeline.format_ablation(results))
    return 0


def cmd_check(args) -> int:
    from .checks import gradient_suite

    failed = False
    for name, worst, ok in gradient_suite(seeds=range(args.seeds)):
        print(f"{'PASS' if ok else 'FAIL'}  {name:<24} worst rel err {worst:.2e}")
        failed |= not ok
    return 2 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="partvote")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus as xyz-normals files")
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("graph", help="export the part graph of one cloud")
    p.add_argument("--in", required=True, dest="in")
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="train a classifier")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", default="none",
                   choices=("none", "t25", "t50_rs", "background"))
    p.add_argument("--out", help="metrics file prefix")
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the layer/pooling ablation grid")
    p.add_argument("--seeds", default="0,1,2")
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("check", help="run gradient self-checks")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_check)
    return parser


def cli_main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        if extras:
            if not hasattr(args, "overrides"):
                parser.error(f"unrecognized arguments: {' '.join(extras)}")
            args.overrides = list(args.overrides) + extras
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
