"""CLI: accd-extract --in <frames> --out <dir> --stages 1,2 [--median w]."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .extractor import ExtractionJob, ExtractorError, extract

log = logging.getLogger("accd_extractor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="accd-extract",
        description="Export per-frame backbone activations as NPY tensors.",
    )
    parser.add_argument("--in", dest="input_dir", required=True,
                        help="directory of video frames")
    parser.add_argument("--out", dest="output_dir", required=True,
                        help="output directory (one subdirectory per stage)")
    parser.add_argument("--stages", default="1,2", help="comma-separated subset of 1,2")
    parser.add_argument("--median", type=int, default=None,
                        help="odd temporal median window applied to the frames")
    parser.add_argument("--weights", default=None,
                        help="backbone checkpoint (default: $ACCD_WEIGHTS)")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    weights = args.weights or os.environ.get("ACCD_WEIGHTS")
    if not weights:
        print("accd-extract: no weights given (use --weights or ACCD_WEIGHTS)",
              file=sys.stderr)
        return 1
    job = ExtractionJob(
        input_dir=Path(args.input_dir),
        output_dir=Path(args.output_dir),
        stages=tuple(int(s) for s in args.stages.replace(",", " ").split()),
        median_window=args.median,
        device=args.device,
        weights_path=Path(weights),
    )
    try:
        result = extract(job)
    except ExtractorError as exc:
        print(f"accd-extract: {exc}", file=sys.stderr)
        return 1
    written = sum(len(v) for v in result.written.values())
    log.info("wrote %d tensors, skipped %d frames", written, len(result.skipped))
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
