"""Documents, character spans, shared-task TSV files, and episode sub-sampling.

Character positions are Unicode scalar value indices into the document text
(``str`` indices), never byte offsets. Intervals are stored half-open
internally; the external span-field convention (inclusive by default) is
resolved at parse time and re-applied at format time.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import FormatError

logger = logging.getLogger(__name__)

RangeConvention = Literal["inclusive", "half-open"]

DEFAULT_CONVENTION: RangeConvention = "inclusive"

_SPAN_PIECE_RE = re.compile(r"(\d+)-(\d+)")


@dataclass(frozen=True, order=True)
class Interval:
    """Half-open character range ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0:
            raise ValueError(f"interval start must be >= 0, got {self.start}")
        if self.end <= self.start:
            raise ValueError(f"interval end ({self.end}) must exceed start ({self.start})")

    @property
    def length(self) -> int:
        return self.end - self.start


def overlap_chars(a: Interval, b: Interval) -> int:
    """Number of characters shared by two intervals (symmetric, >= 0)."""
    return max(0, min(a.end, b.end) - max(a.start, b.start))


def normalize_intervals(items: Iterable[Interval]) -> tuple[Interval, ...]:
    """Sort by start and merge overlapping intervals.

    Merely adjacent intervals (``a.end == b.start``) are kept separate so that
    formatting round-trips what was written in the file.
    """
    ordered = sorted(items)
    merged: list[Interval] = []
    for iv in ordered:
        if merged and iv.start < merged[-1].end:
            last = merged[-1]
            if iv.end > last.end:
                merged[-1] = Interval(last.start, iv.end)
        else:
            merged.append(iv)
    return tuple(merged)


@dataclass(frozen=True)
class SpanSet:
    """A document-scoped set of character intervals, possibly discontinuous.

    Intervals are normalized on construction: sorted by start, overlapping
    ones merged, adjacency preserved.
    """

    doc_id: str
    items: tuple[Interval, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", normalize_intervals(self.items))

    @property
    def total_length(self) -> int:
        return sum(iv.length for iv in self.items)

    def __bool__(self) -> bool:
        return bool(self.items)


@dataclass(frozen=True)
class Document:
    """A plain-text document; ``text`` is indexed by character position."""

    id: str
    text: str


@dataclass(frozen=True)
class ClauseAnnotation:
    """One annotated clause instance: a label plus the span carrying it."""

    clause_label: str
    span: SpanSet

    def __post_init__(self) -> None:
        if not self.clause_label:
            raise ValueError("clause label must be non-empty")
        if not self.span:
            raise ValueError("annotation span must be non-empty")


MAX_SEEDS = 5  # k in [2, 6] -> between 1 and 5 seed documents


@dataclass(frozen=True)
class QueryEpisode:
    """One retrieval problem: seed spans from other documents, one target.

    ``line_no`` records the source line when the episode was read from a
    file (0 for generated episodes); it is diagnostic only.
    """

    clause_label: str
    seeds: tuple[SpanSet, ...]
    target_doc_id: str
    line_no: int = 0

    def __post_init__(self) -> None:
        if not 1 <= len(self.seeds) <= MAX_SEEDS:
            raise ValueError(
                f"episode must have between 1 and {MAX_SEEDS} seeds, got {len(self.seeds)}"
            )
        seed_ids = {s.doc_id for s in self.seeds}
        if self.target_doc_id in seed_ids:
            raise ValueError(
                f"target document {self.target_doc_id!r} also appears as a seed"
            )


# ---------------------------------------------------------------------------
# Span fields
# ---------------------------------------------------------------------------

def parse_span_field(field_text: str, convention: RangeConvention = DEFAULT_CONVENTION,
                     doc_id: str = "") -> SpanSet:
    """Parse ``start-end(,start-end)*`` into a normalized SpanSet.

    Under the inclusive convention both endpoints belong to the range, so the
    internal exclusive end is ``end + 1``.
    """
    if field_text == "":
        raise FormatError("empty span field")
    intervals: list[Interval] = []
    for piece in field_text.split(","):
        m = _SPAN_PIECE_RE.fullmatch(piece)
        if m is None:
            raise FormatError(f"malformed range piece {piece!r}")
        start, end = int(m.group(1)), int(m.group(2))
        if convention == "inclusive":
            if start > end:
                raise FormatError(f"range piece {piece!r} has start > end")
            intervals.append(Interval(start, end + 1))
        else:
            if start >= end:
                raise FormatError(f"range piece {piece!r} is empty under half-open convention")
            intervals.append(Interval(start, end))
    return SpanSet(doc_id, tuple(intervals))


def format_span_field(span: SpanSet | Sequence[Interval],
                      convention: RangeConvention = DEFAULT_CONVENTION) -> str:
    """Format intervals back into the comma-joined file representation."""
    items = span.items if isinstance(span, SpanSet) else normalize_intervals(span)
    if not items:
        raise ValueError("cannot format an empty span set: an answer must carry a range")
    if convention == "inclusive":
        return ",".join(f"{iv.start}-{iv.end - 1}" for iv in items)
    return ",".join(f"{iv.start}-{iv.end}" for iv in items)


# ---------------------------------------------------------------------------
# TSV files (UTF-8, LF line endings)
# ---------------------------------------------------------------------------

def _lines(path: str | Path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    if text == "":
        return []
    if text.endswith("\n"):
        text = text[:-1]
    return text.split("\n")


def load_reference_tsv(path: str | Path) -> dict[str, Document]:
    """Load ``doc_id \\t content`` lines into an ordered id -> Document map.

    Content is the raw remainder of the line after the first tab (it may
    itself contain tabs).
    """
    docs: dict[str, Document] = {}
    for line_no, raw in enumerate(_lines(path), 1):
        doc_id, sep, content = raw.partition("\t")
        if not sep:
            raise FormatError("expected 'doc_id<TAB>content'", path=str(path), line_no=line_no)
        if not doc_id:
            raise FormatError("empty document id", path=str(path), line_no=line_no)
        if doc_id in docs:
            raise FormatError(f"duplicate document id {doc_id!r}",
                              path=str(path), line_no=line_no)
        docs[doc_id] = Document(doc_id, content)
    return docs


def write_reference_tsv(path: str | Path, docs: Iterable[Document]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            if "\t" in doc.id or "\n" in doc.id:
                raise ValueError(f"document id {doc.id!r} contains a tab or newline")
            if "\n" in doc.text:
                raise ValueError(f"document {doc.id!r} text contains a newline; "
                                 "reference.tsv stores one document per line")
            fh.write(f"{doc.id}\t{doc.text}\n")


def load_in_tsv(path: str | Path, convention: RangeConvention = DEFAULT_CONVENTION,
                known_doc_ids: Iterable[str] | None = None) -> list[QueryEpisode]:
    """Load episode lines ``target_id \\t clause \\t example_1 ... example_N``.

    Each example is ``doc_id SPACE spanfield``. When ``known_doc_ids`` is
    given, every referenced document id is validated against it.
    """
    known = set(known_doc_ids) if known_doc_ids is not None else None
    episodes: list[QueryEpisode] = []
    for line_no, raw in enumerate(_lines(path), 1):
        fields = raw.split("\t")
        if len(fields) < 3:
            raise FormatError(
                f"expected at least 3 tab-separated fields, got {len(fields)}",
                path=str(path), line_no=line_no)
        target_id, clause = fields[0], fields[1]
        if known is not None and target_id not in known:
            raise FormatError(f"unknown target document id {target_id!r}",
                              path=str(path), line_no=line_no)
        seeds: list[SpanSet] = []
        for example in fields[2:]:
            doc_id, sep, span_text = example.partition(" ")
            if not sep or not doc_id:
                raise FormatError(
                    f"example field {example!r} is not 'doc_id SPACE spanfield'",
                    path=str(path), line_no=line_no)
            if known is not None and doc_id not in known:
                raise FormatError(f"unknown seed document id {doc_id!r}",
                                  path=str(path), line_no=line_no)
            try:
                seeds.append(parse_span_field(span_text, convention, doc_id=doc_id))
            except FormatError as exc:
                raise FormatError(str(exc), path=str(path), line_no=line_no) from exc
        try:
            episodes.append(QueryEpisode(clause, tuple(seeds), target_id, line_no=line_no))
        except ValueError as exc:
            raise FormatError(str(exc), path=str(path), line_no=line_no) from exc
    return episodes


def write_in_tsv(path: str | Path, episodes: Iterable[QueryEpisode],
                 convention: RangeConvention = DEFAULT_CONVENTION) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ep in episodes:
            examples = "\t".join(
                f"{s.doc_id} {format_span_field(s, convention)}" for s in ep.seeds)
            fh.write(f"{ep.target_doc_id}\t{ep.clause_label}\t{examples}\n")


def load_expected_tsv(path: str | Path,
                      convention: RangeConvention = DEFAULT_CONVENTION
                      ) -> list[tuple[str, SpanSet]]:
    """Load answer lines ``clause \\t spanfield`` (one answer per line)."""
    rows: list[tuple[str, SpanSet]] = []
    for line_no, raw in enumerate(_lines(path), 1):
        fields = raw.split("\t")
        if len(fields) != 2:
            raise FormatError(f"expected 2 tab-separated fields, got {len(fields)}",
                              path=str(path), line_no=line_no)
        clause, span_text = fields
        try:
            rows.append((clause, parse_span_field(span_text, convention)))
        except FormatError as exc:
            raise FormatError(str(exc), path=str(path), line_no=line_no) from exc
    return rows


def write_expected_tsv(path: str | Path, rows: Iterable[tuple[str, SpanSet]],
                       convention: RangeConvention = DEFAULT_CONVENTION) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for clause, span in rows:
            fh.write(f"{clause}\t{format_span_field(span, convention)}\n")


def load_annotations_tsv(path: str | Path,
                         convention: RangeConvention = DEFAULT_CONVENTION
                         ) -> list[ClauseAnnotation]:
    """Load annotation instances from ``doc_id \\t clause \\t spanfield`` lines."""
    annotations: list[ClauseAnnotation] = []
    for line_no, raw in enumerate(_lines(path), 1):
        fields = raw.split("\t")
        if len(fields) != 3:
            raise FormatError(f"expected 3 tab-separated fields, got {len(fields)}",
                              path=str(path), line_no=line_no)
        doc_id, clause, span_text = fields
        try:
            span = parse_span_field(span_text, convention, doc_id=doc_id)
            annotations.append(ClauseAnnotation(clause, span))
        except (FormatError, ValueError) as exc:
            raise FormatError(str(exc), path=str(path), line_no=line_no) from exc
    return annotations


# ---------------------------------------------------------------------------
# Episode sub-sampling
# ---------------------------------------------------------------------------

def merged_clause_spans(annotations: Iterable[ClauseAnnotation]
                        ) -> dict[tuple[str, str], SpanSet]:
    """Merge all instances of each (clause, document) pair into one SpanSet."""
    grouped: dict[tuple[str, str], list[Interval]] = {}
    for ann in annotations:
        key = (ann.clause_label, ann.span.doc_id)
        grouped.setdefault(key, []).extend(ann.span.items)
    return {
        (clause, doc_id): SpanSet(doc_id, tuple(items))
        for (clause, doc_id), items in grouped.items()
    }


def _shuffled(ids: Sequence[str], rng: np.random.Generator) -> list[str]:
    # Explicit Fisher-Yates over rng.integers so the draw sequence is part of
    # the documented contract, not an implementation detail of numpy.
    out = list(ids)
    for i in range(len(out) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def generate_episodes(annotations: Sequence[ClauseAnnotation],
                      k_min: int = 2, k_max: int = 6,
                      per_clause_count: int = 10,
                      rng_seed: int = 0) -> list[QueryEpisode]:
    """Draw repeated random sub-samples of annotated documents per clause.

    For every clause label (processed in sorted order) and every k in
    [k_min, k_max] (capped at the number of annotated documents), draws
    ``per_clause_count`` k-combinations by shuffling the sorted document-id
    list with a PCG64 generator seeded once with ``rng_seed`` and taking the
    prefix. The first k-1 shuffled ids become seeds, the k-th the target.
    All annotation instances of the clause in a seed document enter that
    seed's SpanSet.

    Deterministic: a fixed seed reproduces the episode list exactly.
    """
    if k_min < 2:
        raise ValueError(f"k_min must be >= 2, got {k_min}")
    if k_max < k_min:
        raise ValueError(f"k_max ({k_max}) must be >= k_min ({k_min})")
    if per_clause_count < 1:
        raise ValueError("per_clause_count must be >= 1")

    merged = merged_clause_spans(annotations)
    docs_by_clause: dict[str, set[str]] = {}
    for clause, doc_id in merged:
        docs_by_clause.setdefault(clause, set()).add(doc_id)

    rng = np.random.Generator(np.random.PCG64(rng_seed))
    episodes: list[QueryEpisode] = []
    for clause in sorted(docs_by_clause):
        doc_ids = sorted(docs_by_clause[clause])
        if len(doc_ids) < 2:
            logger.warning("clause %r has fewer than 2 annotated documents; skipped", clause)
            continue
        k_hi = min(k_max, len(doc_ids))
        if k_hi < k_max:
            logger.warning("clause %r has only %d annotated documents; k capped at %d",
                           clause, len(doc_ids), k_hi)
        if k_hi < k_min:
            logger.warning("clause %r cannot support k_min=%d; skipped", clause, k_min)
            continue
        for k in range(k_min, k_hi + 1):
            for _ in range(per_clause_count):
                order = _shuffled(doc_ids, rng)
                seeds = tuple(merged[(clause, d)] for d in order[:k - 1])
                episodes.append(QueryEpisode(clause, seeds, order[k - 1]))
    return episodes
