"""Command line entry point: accd fit|score|validate|eval|report|synth."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import AccdError
from .synth import SynthSpec, generate_dataset

log = logging.getLogger("accd")


def _resolve_config(args) -> RunConfig:
    """Defaults, then the sequence config file, then --config, then flags."""
    cfg = RunConfig()
    seq = getattr(args, "seq", None)
    if seq:
        seq_cfg = Path(seq) / "config.cfg"
        if seq_cfg.exists():
            cfg = load_config(seq_cfg, base=cfg)
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    if getattr(args, "stage", None):
        cfg = dataclasses.replace(
            cfg, stages=tuple(int(s) for s in args.stage.replace(",", " ").split())
        )
    if getattr(args, "epsilon", None) is not None:
        cfg = dataclasses.replace(cfg, epsilon=args.epsilon)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg.validate()


def _add_common(parser, *names):
    if "seq" in names:
        parser.add_argument("--seq", required=True, help="sequence directory")
    if "config" in names:
        parser.add_argument("--config", help="config file overriding <seq>/config.cfg")
    if "stage" in names:
        parser.add_argument("--stage", help="stages to use, e.g. '1,2'")
    if "seed" in names:
        parser.add_argument("--seed", type=int, help="random seed")
    if "out" in names:
        parser.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="accd",
        description="Reduce false alarms of change-detection masks with an "
                    "a-contrario test over deep-feature statistics.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train background models from training features")
    _add_common(p, "seq", "config", "stage", "seed", "out")

    p = sub.add_parser("score", help="dump per-frame log p-value maps")
    _add_common(p, "seq", "config", "stage", "out")
    p.add_argument("--split", default="test", help="feature split to score")

    p = sub.add_parser("validate", help="filter a method's masks by log NFA")
    _add_common(p, "seq", "config", "stage", "seed", "out")
    p.add_argument("--method", required=True, help="mask subdirectory to validate")
    p.add_argument("--epsilon", type=float, help="acceptance threshold on the NFA")
    p.add_argument("--jobs", type=int, default=1, help="worker threads over frames")

    p = sub.add_parser("eval", help="pixel and object metrics before/after")
    p.add_argument("--gt", required=True, help="ground-truth mask directory")
    p.add_argument("--before", required=True, help="raw candidate masks")
    p.add_argument("--after", required=True, help="validated masks")
    p.add_argument("--method", default="method", help="label used in the tables")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("report", help="TP/FP histograms by size and log NFA")
    p.add_argument("--regions", required=True, help="regions.csv from validate")
    p.add_argument("--masks", required=True, help="candidate masks that were validated")
    p.add_argument("--gt", required=True, help="ground-truth mask directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--eval", dest="eval_dir", default=None,
                   help="eval output directory whose summary gets rendered")
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=50, help="test frames")
    p.add_argument("--train", type=int, default=64, help="training frames")
    p.add_argument("--rects", type=int, default=5, help="true anomaly rectangles")
    p.add_argument("--blobs", type=int, default=20, help="planted false blobs")
    p.add_argument("--delta", type=float, default=8.0,
                   help="per-channel anomaly shift in standard deviations")
    p.add_argument("--dim", type=int, default=8, help="feature channels")
    p.add_argument("--k-init", type=int, default=8, help="initial mixture size")
    return parser


def run(args) -> int:
    from . import pipeline

    if args.command == "synth":
        spec = SynthSpec(n_train=args.train, n_test=args.frames, n_rects=args.rects,
                         n_blobs=args.blobs, delta=args.delta, dim=args.dim,
                         k_init=args.k_init)
        manifest = generate_dataset(args.out, seed=args.seed, spec=spec)
        log.info("wrote synthetic dataset with %d rectangles and %d blobs to %s",
                 len(manifest["rects"]), len(manifest["blobs"]), args.out)
        return 0
    if args.command == "fit":
        cfg = _resolve_config(args)
        paths = pipeline.run_fit(args.seq, cfg, out_dir=args.out)
        for stage, path in paths.items():
            print(f"stage {stage}: {path}")
        return 0
    if args.command == "score":
        cfg = _resolve_config(args)
        out = pipeline.run_score(args.seq, cfg, out_dir=args.out, split=args.split)
        print(out)
        return 0
    if args.command == "validate":
        cfg = _resolve_config(args)
        out = pipeline.run_validate(args.seq, args.method, cfg,
                                    out_dir=args.out, jobs=args.jobs)
        print(out)
        return 0
    if args.command == "eval":
        results = pipeline.run_eval(args.gt, args.before, args.after,
                                    out_dir=args.out, method=args.method)
        for row in results["relative_change"]:
            print(f"{row[1]:>14}: {row[2]} -> {row[3]}  ({row[4]}%)")
        return 0
    if args.command == "report":
        path = pipeline.run_report(args.regions, args.masks, args.gt,
                                   out_dir=args.out, n_bins=args.bins,
                                   eval_dir=args.eval_dir)
        print(path)
        return 0
    raise AssertionError(f"unhandled command {args.command}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except (AccdError, OSError) as exc:
        print(f"accd {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
