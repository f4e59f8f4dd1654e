"""CLI: embed-export --corpus <path> --model <id-or-dir> --out <cache>."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .corpus import CorpusError
from .export import ExportError, ExportJob, export


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Export word-aligned contextual vectors to an encoding cache.",
    )
    parser.add_argument("--corpus", required=True, help="hash-separated or .jsonl corpus")
    parser.add_argument("--model", required=True, help="transformer checkpoint id or directory")
    parser.add_argument("--out", required=True, help="cache file to write")
    parser.add_argument("--anchors", help="extra anchors: lines of 'sentence_id anchor sentiment'")
    parser.add_argument("--pool", choices=("mean", "first"), default="mean",
                        help="subword-to-word pooling (default mean)")
    args = parser.parse_args(argv)
    try:
        count = export(ExportJob(
            corpus_path=args.corpus,
            model_id=args.model,
            output_path=args.out,
            anchors_path=args.anchors,
            pooling=args.pool,
        ))
    except (ExportError, CorpusError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} records to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
