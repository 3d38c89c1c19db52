"""Command line mirroring the extraction job fields."""

from __future__ import annotations

import argparse
import sys

from .adapter import ExtractionJob, extract
from .backbone import PROFILES


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vslf-extract",
                                     description="decode videos and write VSLF feature files")
    parser.add_argument("videos", nargs="+", help="video files to process")
    parser.add_argument("--output-dir", required=True)
    parser.add_argument("--backbone", choices=sorted(PROFILES), default="tiny4-v1")
    parser.add_argument("--fps", type=float, default=1.0)
    args = parser.parse_args(argv)
    try:
        job = ExtractionJob(args.videos, args.output_dir, args.backbone, args.fps)
        result = extract(job)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for video, path in result.written.items():
        print(f"{video} -> {path}")
    for video, reason in result.failures.items():
        print(f"error: {video}: {reason}", file=sys.stderr)
    return 0 if not result.failures else 1


if __name__ == "__main__":
    sys.exit(main())
