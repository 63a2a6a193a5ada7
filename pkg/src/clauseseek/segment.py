"""Rule-based sentence splitting and contiguous sentence n-gram candidates.

The splitter ends sentences at ``.``, ``!``, ``?`` (runs collapse, closing
quotes/brackets stay attached) followed by whitespace or end of text, and at
blank lines. A packaged abbreviation list and a decimal-number guard suppress
false splits; fragments shorter than 2 non-whitespace characters are merged
into the following sentence. Sentence intervals exclude leading and trailing
whitespace so answers never pad spans with whitespace.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .corpus import Interval

_TERMINATORS = ".!?"
_CLOSERS = "\"')]}’”»"
_BLANK_LINE_RE = re.compile(r"\n[ \t\r]*\n")
_MIN_SENTENCE_NONWS = 2


@dataclass(frozen=True)
class Sentence:
    """A sentence's character range within its owning document."""

    interval: Interval


@dataclass(frozen=True)
class CandidateSegment:
    """A contiguous run of sentences, addressed by index range and characters.

    ``sentence_range`` holds the inclusive (first_idx, last_idx) pair;
    ``interval`` spans from the first sentence's start to the last one's end,
    including intervening characters.
    """

    interval: Interval
    sentence_range: tuple[int, int]


def load_abbreviations(path: str | Path | None = None) -> frozenset[str]:
    """Read the abbreviation list (one token per line, trailing period kept).

    Entries are matched case-insensitively against the word ending at a
    period. ``None`` loads the packaged default list.
    """
    if path is None:
        text = resources.files("clauseseek").joinpath("data/abbreviations.txt") \
            .read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    entries = set()
    for line in text.splitlines():
        token = line.strip()
        if token:
            entries.add(token.lower())
    return frozenset(entries)


_DEFAULT_ABBREVIATIONS: frozenset[str] | None = None


def _default_abbreviations() -> frozenset[str]:
    global _DEFAULT_ABBREVIATIONS
    if _DEFAULT_ABBREVIATIONS is None:
        _DEFAULT_ABBREVIATIONS = load_abbreviations()
    return _DEFAULT_ABBREVIATIONS


def _abbreviation_before(text: str, period: int, block_start: int,
                         abbreviations: frozenset[str]) -> bool:
    # The word ending at the period, including internal periods ("U.S.").
    start = period
    while start > block_start and (text[start - 1].isalnum() or text[start - 1] == "."):
        start -= 1
    word = text[start:period + 1].lower()
    return word in abbreviations


def _suppressed(text: str, period: int, block_start: int, block_end: int,
                abbreviations: frozenset[str]) -> bool:
    if _abbreviation_before(text, period, block_start, abbreviations):
        return True
    # Decimal-number guard: a period between digits never ends a sentence.
    if (period > block_start and text[period - 1].isdigit()
            and period + 1 < block_end and text[period + 1].isdigit()):
        return True
    return False


def _trimmed(text: str, start: int, end: int) -> tuple[int, int] | None:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return (start, end) if end > start else None


def _nonws_count(text: str, start: int, end: int) -> int:
    return sum(1 for ch in text[start:end] if not ch.isspace())


def _blocks(text: str) -> list[tuple[int, int]]:
    blocks = []
    prev = 0
    for m in _BLANK_LINE_RE.finditer(text):
        blocks.append((prev, m.start()))
        prev = m.end()
    blocks.append((prev, len(text)))
    return blocks


def _split_block(text: str, block_start: int, block_end: int,
                 abbreviations: frozenset[str]) -> list[tuple[int, int]]:
    raw: list[tuple[int, int]] = []
    seg_start = block_start
    i = block_start
    while i < block_end:
        if text[i] in _TERMINATORS:
            j = i
            while j + 1 < block_end and text[j + 1] in _TERMINATORS:
                j += 1
            k = j + 1
            while k < block_end and text[k] in _CLOSERS:
                k += 1
            if k >= block_end or text[k].isspace():
                single_period = text[i] == "." and i == j
                if not (single_period
                        and _suppressed(text, i, block_start, block_end, abbreviations)):
                    raw.append((seg_start, k))
                    seg_start = k
                    i = k
                    continue
            i = j + 1
        else:
            i += 1
    if seg_start < block_end:
        raw.append((seg_start, block_end))
    return raw


def split_sentences(text: str,
                    abbreviations: frozenset[str] | None = None) -> list[Sentence]:
    """Split text into ordered, non-overlapping, whitespace-trimmed sentences.

    Every non-whitespace character of ``text`` lands in exactly one sentence.
    Empty text yields an empty list.
    """
    if abbreviations is None:
        abbreviations = _default_abbreviations()
    trimmed: list[tuple[int, int]] = []
    for block_start, block_end in _blocks(text):
        for a, b in _split_block(text, block_start, block_end, abbreviations):
            t = _trimmed(text, a, b)
            if t is not None:
                trimmed.append(t)

    # Merge fragments below the minimum length into the following sentence;
    # a trailing fragment is absorbed by the previous one.
    merged: list[tuple[int, int]] = []
    carry: tuple[int, int] | None = None
    for a, b in trimmed:
        if carry is not None:
            a = carry[0]
        if _nonws_count(text, a, b) >= _MIN_SENTENCE_NONWS:
            merged.append((a, b))
            carry = None
        else:
            carry = (a, b)
    if carry is not None:
        if merged:
            merged[-1] = (merged[-1][0], carry[1])
        else:
            merged.append(carry)

    return [Sentence(Interval(a, b)) for a, b in merged]


def generate_candidates(sentences: list[Sentence], n: int) -> list[CandidateSegment]:
    """All contiguous runs of 1..n sentences.

    For S sentences the count is sum over m of max(0, S - m + 1).
    """
    if n < 1:
        raise ValueError(f"max n-gram length must be >= 1, got {n}")
    candidates: list[CandidateSegment] = []
    count = len(sentences)
    for m in range(1, n + 1):
        for i in range(count - m + 1):
            first = sentences[i].interval
            last = sentences[i + m - 1].interval
            candidates.append(CandidateSegment(Interval(first.start, last.end), (i, i + m - 1)))
    return candidates
