"""Command-line entry point: subsample / run / evaluate / fit.

Every command writes a JSON manifest next to its outputs recording input
and output hashes, the tool version, the seed where applicable, and timing.
Exit codes: 0 success, 1 I/O failure, 2 validation or configuration failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from . import retrieve, transform, vectorize
from .corpus import (generate_episodes, load_annotations_tsv,
                     load_reference_tsv, merged_clause_spans, write_expected_tsv,
                     write_in_tsv)
from .errors import ConfigError, FormatError, RunError, UnencodableSpanError
from .evaluate import evaluate_run, render_report
from .segment import load_abbreviations

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(path: Path, command: str, *, inputs: dict[str, Path],
                    outputs: dict[str, Path], config_path: Path | None = None,
                    rng_seed: int | None = None, started: float = 0.0) -> None:
    payload = {
        "tool": "clauseseek",
        "version": __version__,
        "command": command,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)}
                   for name, p in inputs.items()},
        "outputs": {name: {"path": str(p), "sha256": _sha256(p)}
                    for name, p in outputs.items()},
        "timing": {
            "started_utc": _dt.datetime.fromtimestamp(
                started, _dt.timezone.utc).isoformat(),
            "elapsed_seconds": round(time.time() - started, 3),
        },
    }
    if config_path is not None:
        payload["config"] = {"path": str(config_path), "sha256": _sha256(config_path)}
    if rng_seed is not None:
        payload["rng_seed"] = rng_seed
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_config_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    preset = retrieve.preset_path(name)
    if preset is None:
        raise FileNotFoundError(f"no config file or preset named {name!r}")
    return preset


def cmd_subsample(args: argparse.Namespace) -> int:
    started = time.time()
    annotations = load_annotations_tsv(args.annotations, args.range_convention)
    episodes = generate_episodes(annotations, k_min=args.k_min, k_max=args.k_max,
                                 per_clause_count=args.episodes,
                                 rng_seed=args.rng_seed)
    merged = merged_clause_spans(annotations)
    in_path = Path(f"{args.out_prefix}in.tsv")
    expected_path = Path(f"{args.out_prefix}expected.tsv")
    write_in_tsv(in_path, episodes, args.range_convention)
    write_expected_tsv(
        expected_path,
        [(ep.clause_label, merged[(ep.clause_label, ep.target_doc_id)])
         for ep in episodes],
        args.range_convention)
    _write_manifest(Path(f"{args.out_prefix}manifest.json"), "subsample",
                    inputs={"annotations": Path(args.annotations)},
                    outputs={"in": in_path, "expected": expected_path},
                    rng_seed=args.rng_seed, started=started)
    print(f"wrote {len(episodes)} episodes to {in_path} / {expected_path}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    started = time.time()
    config_path = _resolve_config_path(args.config)
    config = retrieve.load_config(config_path, args.set or [])
    abbreviations = load_abbreviations(args.abbreviations) if args.abbreviations else None
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    lines = retrieve.run_file(config, args.inp, args.reference,
                              convention=args.range_convention, threads=threads,
                              abbreviations=abbreviations)
    out_path = Path(args.out)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
    _write_manifest(out_path.with_name(out_path.name + ".manifest.json"), "run",
                    inputs={"in": Path(args.inp), "reference": Path(args.reference)},
                    outputs={"out": out_path}, config_path=config_path,
                    started=started)
    print(f"wrote {len(lines)} answers to {out_path}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    report = evaluate_run(args.expected, args.out, args.range_convention)
    if args.per_line:
        for q in report.per_query:
            print(f"{q.line_no}\t{q.clause_label}\t{q.precision:.12g}"
                  f"\t{q.recall:.12g}\t{q.f1:.12g}")
    else:
        print(render_report(report))
    print(f"macro-soft-f1\t{report.macro_f1:.12g}")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    started = time.time()
    config_path = _resolve_config_path(args.config)
    config = retrieve.load_config(config_path, args.set or [])
    docs = load_reference_tsv(args.reference)
    abbreviations = load_abbreviations(args.abbreviations) if args.abbreviations else None
    pipeline = retrieve.Pipeline(config, docs, abbreviations=abbreviations)
    out_dir = Path(args.model_out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: dict[str, Path] = {}
    if pipeline.tfidf_model is not None:
        path = out_dir / "tfidf.json"
        vectorize.save_tfidf(pipeline.tfidf_model, path)
        outputs["tfidf"] = path
    if pipeline.common_component is not None:
        path = out_dir / "common_component.bin"
        transform.save_projector(pipeline.common_component, path)
        outputs["common_component"] = path
    if pipeline.projector is not None:
        path = out_dir / "projector.bin"
        transform.save_projector(pipeline.projector, path)
        outputs["projector"] = path
    if not outputs:
        print("config fits no persistent models; nothing written", file=sys.stderr)
    _write_manifest(out_dir / "manifest.json", "fit",
                    inputs={"reference": Path(args.reference)},
                    outputs=outputs, config_path=config_path, started=started)
    for name, path in outputs.items():
        print(f"wrote {name} model to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clauseseek",
        description="Few-shot clause span retrieval and Soft F1 evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_convention(p: argparse.ArgumentParser) -> None:
        p.add_argument("--range-convention", choices=["inclusive", "half-open"],
                       default="inclusive",
                       help="interpretation of start-end span fields "
                            "(default: inclusive of both endpoints)")

    p = sub.add_parser("subsample",
                       help="draw episode files from an annotations TSV")
    p.add_argument("--annotations", required=True,
                   help="TSV of 'doc_id<TAB>clause<TAB>spanfield' instances")
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--episodes", type=int, default=10,
                   help="combinations drawn per clause per k")
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True,
                   help="prefix for in.tsv / expected.tsv / manifest.json")
    add_convention(p)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("run", help="answer an in.tsv with a configured pipeline")
    p.add_argument("--config", required=True,
                   help="config file path or packaged preset name")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=0,
                   help="worker threads (default: all cores)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config entry (repeatable)")
    p.add_argument("--abbreviations", help="override the packaged abbreviation list")
    add_convention(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score an out.tsv against expected.tsv")
    p.add_argument("--expected", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-line", action="store_true",
                   help="emit per-line TSV: line_no, clause, p, r, f1")
    add_convention(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fit", help="fit and serialize pipeline models")
    p.add_argument("--config", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--model-out", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--abbreviations", help="override the packaged abbreviation list")
    add_convention(p)
    p.set_defaults(func=cmd_fit)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, FormatError, UnencodableSpanError, RunError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
