"""Command line: corpus directory in, SFV1 feature file out."""

from __future__ import annotations

import argparse
import logging
import sys

from .backbone import BACKBONES, LAYERS, BackboneError, load_backbone
from .corpus import CorpusError, scan_corpus
from .extract import extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchret-extract",
        description="Dump fixed-backbone embeddings of an image corpus to SFV1. "
                    "The corpus root must contain one subdirectory per category.")
    parser.add_argument("root", help="corpus root directory")
    parser.add_argument("--domain", choices=("image", "sketch"), required=True)
    parser.add_argument("--out", required=True, help="SFV1 output path")
    parser.add_argument("--backbone", choices=BACKBONES, default="vgg16")
    parser.add_argument("--layer", choices=LAYERS, default="fc7",
                        help="which post-ReLU fully-connected activation to emit")
    parser.add_argument("--weights", default="pretrained",
                        help="'pretrained', 'untrained', or a state-dict file "
                             "(e.g. fine-tuned weights)")
    parser.add_argument("--seed", type=int, default=0,
                        help="init seed when --weights untrained")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--quiet", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        manifest = scan_corpus(args.root, args.domain)
        backbone = load_backbone(args.backbone, args.layer, args.weights, args.seed)
        rows, skipped = extract(manifest, backbone, args.out, args.batch_size)
    except (CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BackboneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{rows} rows ({skipped} skipped) -> {args.out}")
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))
