"""Command-line interface: export and verify sidecar embedding sets."""

from __future__ import annotations

import argparse
import logging
import sys

from .export import ExportError, export, verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sidecar-export",
        description="Export transformer token embeddings to sidecar files.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="run a model over reference.tsv documents")
    p.add_argument("--reference", required=True, help="doc_id<TAB>content TSV")
    p.add_argument("--model", required=True,
                   help="model id or local checkpoint directory")
    p.add_argument("--layer", default="last",
                   help="'last' or a hidden-state index (default: last)")
    p.add_argument("--window", type=int, default=512,
                   help="window length in sub-word tokens")
    p.add_argument("--stride", type=int, default=256)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("verify", help="structurally validate an exported set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--reference", help="optional reference.tsv for offset bounds")
    p.set_defaults(func=_cmd_verify)
    return parser


def _cmd_export(args: argparse.Namespace) -> int:
    manifest = export(args.reference, args.model, args.out, layer=args.layer,
                      window=args.window, stride=args.stride)
    print(f"wrote manifest {manifest}")
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    violations = verify(args.manifest, args.reference)
    for violation in violations:
        print(violation, file=sys.stderr)
    if violations:
        print(f"{len(violations)} violation(s)", file=sys.stderr)
        return 1
    print("ok")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ExportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
