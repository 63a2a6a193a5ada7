"""Segment and span vectorization: TF-IDF, static word vectors, and
precomputed contextual token embeddings read from sidecar files.
"""

from __future__ import annotations

import json
import logging
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .corpus import Interval
from .errors import FormatError

logger = logging.getLogger(__name__)

# Unicode letter/digit runs; underscores are separators so they can safely
# join n-gram keys later.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

NGRAM_JOINER = "_"


def tokenize(text: str) -> list[tuple[str, Interval]]:
    """Lowercased letter/digit-run tokens with their source character offsets."""
    return [(m.group().lower(), Interval(m.start(), m.end()))
            for m in _TOKEN_RE.finditer(text)]


def tokens_only(text: str) -> list[str]:
    return [m.group().lower() for m in _TOKEN_RE.finditer(text)]


# ---------------------------------------------------------------------------
# TF-IDF
# ---------------------------------------------------------------------------

@dataclass
class TfidfModel:
    """Fitted n-gram vocabulary and idf weights.

    ``vocabulary`` maps n-gram keys (tokens joined with underscores) to dense
    indices 0..V-1; ``idf`` is aligned with those indices.
    """

    vocabulary: dict[str, int]
    idf: np.ndarray
    ngram_range: tuple[int, int]
    binary_tf: bool

    @property
    def dim(self) -> int:
        return len(self.vocabulary)


def iter_ngrams(tokens: Sequence[str], ngram_range: tuple[int, int]) -> Iterable[str]:
    lo, hi = ngram_range
    for m in range(lo, hi + 1):
        for i in range(len(tokens) - m + 1):
            yield NGRAM_JOINER.join(tokens[i:i + m])


def fit_tfidf(segment_tokens: Sequence[Sequence[str]],
              ngram_range: tuple[int, int] = (1, 2),
              binary_tf: bool = True) -> TfidfModel:
    """Fit vocabulary and smoothed idf over a corpus of token lists.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1 with N the number of segments.
    """
    lo, hi = ngram_range
    if not (1 <= lo <= hi):
        raise ValueError(f"invalid ngram range {ngram_range}")
    if len(segment_tokens) == 0:
        raise ValueError("cannot fit TF-IDF on an empty corpus")
    df: dict[str, int] = {}
    for tokens in segment_tokens:
        for gram in set(iter_ngrams(tokens, ngram_range)):
            df[gram] = df.get(gram, 0) + 1
    if not df:
        raise ValueError("cannot fit TF-IDF: no segment produced any tokens")
    vocabulary = {gram: idx for idx, gram in enumerate(sorted(df))}
    n_segments = len(segment_tokens)
    idf = np.empty(len(vocabulary))
    for gram, idx in vocabulary.items():
        idf[idx] = math.log((1 + n_segments) / (1 + df[gram])) + 1.0
    return TfidfModel(vocabulary, idf, (lo, hi), binary_tf)


def tfidf_encode(model: TfidfModel, tokens: Sequence[str]) -> sparse.csr_matrix:
    """Encode one segment as an L2-normalized sparse row (1 x V).

    Out-of-vocabulary n-grams are dropped; a segment with no in-vocabulary
    n-grams encodes to the zero vector (nnz == 0), which callers treat as
    unencodable.
    """
    counts: dict[int, int] = {}
    for gram in iter_ngrams(tokens, model.ngram_range):
        idx = model.vocabulary.get(gram)
        if idx is not None:
            counts[idx] = counts.get(idx, 0) + 1
    if not counts:
        return sparse.csr_matrix((1, model.dim))
    indices = np.array(sorted(counts), dtype=np.int32)
    if model.binary_tf:
        tf = np.ones(len(indices))
    else:
        tf = np.array([counts[i] for i in indices], dtype=float)
    values = tf * model.idf[indices]
    values /= np.linalg.norm(values)
    indptr = np.array([0, len(indices)], dtype=np.int32)
    return sparse.csr_matrix((values, indices, indptr), shape=(1, model.dim))


def tfidf_encode_many(model: TfidfModel,
                      segment_tokens: Sequence[Sequence[str]]) -> sparse.csr_matrix:
    """Stack per-segment encodings into an S x V CSR matrix (row per segment)."""
    rows = [tfidf_encode(model, tokens) for tokens in segment_tokens]
    if not rows:
        return sparse.csr_matrix((0, model.dim))
    return sparse.vstack(rows, format="csr")


def save_tfidf(model: TfidfModel, path: str | Path) -> None:
    """Serialize to JSON; float idf values round-trip exactly."""
    ordered = sorted(model.vocabulary, key=model.vocabulary.get)
    payload = {
        "format": "clauseseek-tfidf-1",
        "ngram_range": list(model.ngram_range),
        "binary_tf": model.binary_tf,
        "vocabulary": ordered,
        "idf": model.idf.tolist(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_tfidf(path: str | Path) -> TfidfModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "clauseseek-tfidf-1":
        raise FormatError(f"not a TF-IDF model file: {path}")
    vocabulary = {gram: idx for idx, gram in enumerate(payload["vocabulary"])}
    return TfidfModel(vocabulary, np.array(payload["idf"], dtype=float),
                      tuple(payload["ngram_range"]), bool(payload["binary_tf"]))


# ---------------------------------------------------------------------------
# Static word-vector lexicons
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingLexicon:
    """Token -> dense vector table; keys are case-folded at load time."""

    dim: int
    table: dict[str, np.ndarray]

    def get(self, token: str) -> np.ndarray | None:
        return self.table.get(token)

    def __len__(self) -> int:
        return len(self.table)


def load_lexicon(path: str | Path) -> EmbeddingLexicon:
    """Stream a word-vector text file: ``token v1 v2 ... vD`` per line.

    The first line fixes the dimensionality. Duplicate tokens keep the first
    occurrence with a warning; ragged or non-numeric lines raise with their
    line number.
    """
    table: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            token = parts[0].lower()
            if dim is None:
                dim = len(parts) - 1
                if dim < 1:
                    raise FormatError("no vector components on first line",
                                      path=str(path), line_no=line_no)
            elif len(parts) - 1 != dim:
                raise FormatError(
                    f"expected {dim} components, got {len(parts) - 1}",
                    path=str(path), line_no=line_no)
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float32)
            except ValueError as exc:
                raise FormatError(f"non-numeric vector component: {exc}",
                                  path=str(path), line_no=line_no) from exc
            if token in table:
                logger.warning("%s:%d: duplicate token %r kept first occurrence",
                               path, line_no, token)
                continue
            table[token] = vec
    if dim is None:
        raise FormatError("empty lexicon file", path=str(path))
    return EmbeddingLexicon(dim, table)


def dump_lexicon(lexicon: EmbeddingLexicon, path: str | Path) -> None:
    """Write a lexicon back out; printed values reload to identical float32s."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token, vec in lexicon.table.items():
            comps = " ".join(
                np.format_float_positional(v, unique=True, trim="0") for v in vec)
            fh.write(f"{token} {comps}\n")


# ---------------------------------------------------------------------------
# Contextual token-embedding sidecar files
# ---------------------------------------------------------------------------

SIDECAR_MAGIC = b"CDSC1"
SIDECAR_HEADER = struct.Struct("<II")  # num_tokens, dim


@dataclass
class TokenEmbeddingsDoc:
    """Per-document precomputed token vectors with source character offsets."""

    doc_id: str
    offsets: tuple[Interval, ...]
    matrix: np.ndarray  # num_tokens x dim, float32


def sidecar_file_size(num_tokens: int, dim: int) -> int:
    return len(SIDECAR_MAGIC) + SIDECAR_HEADER.size + 8 * num_tokens + 4 * num_tokens * dim


def load_sidecar_doc(path: str | Path, doc_id: str = "") -> TokenEmbeddingsDoc:
    """Read one sidecar file, validating magic, exact size, and offset order."""
    blob = Path(path).read_bytes()
    if blob[:5] != SIDECAR_MAGIC:
        raise FormatError("bad magic bytes in sidecar file", path=str(path))
    if len(blob) < 13:
        raise FormatError("truncated sidecar header", path=str(path))
    num_tokens, dim = SIDECAR_HEADER.unpack_from(blob, 5)
    expected = sidecar_file_size(num_tokens, dim)
    if len(blob) != expected:
        raise FormatError(
            f"sidecar size mismatch: expected {expected} bytes for "
            f"{num_tokens} tokens x {dim} dims, found {len(blob)}",
            path=str(path))
    off = 5 + SIDECAR_HEADER.size
    raw_offsets = np.frombuffer(blob, dtype="<u4", count=2 * num_tokens,
                                offset=off).reshape(num_tokens, 2)
    matrix = np.frombuffer(blob, dtype="<f4", count=num_tokens * dim,
                           offset=off + 8 * num_tokens).reshape(num_tokens, dim)
    offsets = []
    prev_start = -1
    for start, end in raw_offsets:
        if end <= start:
            raise FormatError(f"token offset [{start}, {end}) is empty", path=str(path))
        if start <= prev_start:
            raise FormatError("token offsets not strictly increasing by start",
                              path=str(path))
        prev_start = int(start)
        offsets.append(Interval(int(start), int(end)))
    return TokenEmbeddingsDoc(doc_id, tuple(offsets), matrix)


def write_sidecar_doc(path: str | Path, offsets: Sequence[Interval],
                      matrix: np.ndarray) -> None:
    """Write token offsets and float32 vectors in the sidecar binary layout."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(offsets):
        raise ValueError("matrix rows must match offset count")
    parts = [SIDECAR_MAGIC, SIDECAR_HEADER.pack(len(offsets), matrix.shape[1])]
    offset_arr = np.array([(iv.start, iv.end) for iv in offsets], dtype="<u4")
    parts.append(offset_arr.tobytes())
    parts.append(matrix.tobytes())
    Path(path).write_bytes(b"".join(parts))


@dataclass
class SidecarRecord:
    doc_id: str
    path: str  # relative to the manifest file
    num_tokens: int
    dim: int
    model: str
    layer: str


def load_sidecar_manifest(path: str | Path) -> list[SidecarRecord]:
    """Read the manifest TSV: doc_id, path, num_tokens, dim, model, layer."""
    records: list[SidecarRecord] = []
    seen: set[str] = set()
    dims: set[int] = set()
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), 1):
        fields = raw.split("\t")
        if len(fields) != 6:
            raise FormatError(f"expected 6 tab-separated fields, got {len(fields)}",
                              path=str(path), line_no=line_no)
        doc_id, rel_path, num_tokens, dim, model, layer = fields
        if doc_id in seen:
            raise FormatError(f"duplicate manifest record for document {doc_id!r}",
                              path=str(path), line_no=line_no)
        seen.add(doc_id)
        try:
            record = SidecarRecord(doc_id, rel_path, int(num_tokens), int(dim),
                                   model, layer)
        except ValueError as exc:
            raise FormatError(f"bad manifest field: {exc}",
                              path=str(path), line_no=line_no) from exc
        dims.add(record.dim)
        records.append(record)
    if len(dims) > 1:
        raise FormatError(f"manifest mixes dimensionalities {sorted(dims)}",
                          path=str(path))
    return records


def load_sidecar_docs(manifest_path: str | Path) -> dict[str, TokenEmbeddingsDoc]:
    base = Path(manifest_path).parent
    docs: dict[str, TokenEmbeddingsDoc] = {}
    for record in load_sidecar_manifest(manifest_path):
        doc = load_sidecar_doc(base / record.path, record.doc_id)
        if doc.matrix.shape != (record.num_tokens, record.dim):
            raise FormatError(
                f"sidecar for {record.doc_id!r} is {doc.matrix.shape}, "
                f"manifest says ({record.num_tokens}, {record.dim})",
                path=str(base / record.path))
        docs[record.doc_id] = doc
    return docs


# ---------------------------------------------------------------------------
# Token frequencies
# ---------------------------------------------------------------------------

@dataclass
class FrequencyTable:
    """Relative token frequencies over a corpus.

    Unseen tokens get the smallest observable frequency 1/total so weighting
    stays defined and bounded in (0, 1].
    """

    counts: dict[str, int]
    total: int

    def relative(self, token: str) -> float:
        return self.counts.get(token, 1) / self.total


def build_frequency_table(token_lists: Iterable[Sequence[str]]) -> FrequencyTable:
    counts: dict[str, int] = {}
    total = 0
    for tokens in token_lists:
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
            total += 1
    if total == 0:
        raise ValueError("cannot build a frequency table from an empty corpus")
    return FrequencyTable(counts, total)


def load_frequency_table(path: str | Path) -> FrequencyTable:
    """Read an external ``token \\t count`` file."""
    counts: dict[str, int] = {}
    total = 0
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), 1):
        fields = raw.split("\t")
        if len(fields) != 2:
            raise FormatError(f"expected 'token<TAB>count', got {raw!r}",
                              path=str(path), line_no=line_no)
        token, count_text = fields
        try:
            count = int(count_text)
        except ValueError as exc:
            raise FormatError(f"bad count {count_text!r}",
                              path=str(path), line_no=line_no) from exc
        if count < 1:
            raise FormatError(f"count must be positive, got {count}",
                              path=str(path), line_no=line_no)
        counts[token] = counts.get(token, 0) + count
        total += count
    if total == 0:
        raise FormatError("empty frequency file", path=str(path))
    return FrequencyTable(counts, total)


# ---------------------------------------------------------------------------
# Token streams: a document's tokens with offsets and vectors
# ---------------------------------------------------------------------------

@dataclass
class TokenStream:
    """Ordered tokens of one document with offsets and vector rows.

    Built either from a static lexicon (OOV tokens skipped) or from a
    sidecar file (surface forms recovered by slicing the document text).
    """

    tokens: list[str]
    starts: np.ndarray
    ends: np.ndarray
    matrix: np.ndarray

    @classmethod
    def from_lexicon(cls, text: str, lexicon: EmbeddingLexicon) -> "TokenStream":
        tokens: list[str] = []
        starts: list[int] = []
        ends: list[int] = []
        rows: list[np.ndarray] = []
        for token, iv in tokenize(text):
            vec = lexicon.get(token)
            if vec is None:
                continue
            tokens.append(token)
            starts.append(iv.start)
            ends.append(iv.end)
            rows.append(vec)
        matrix = np.vstack(rows) if rows else np.empty((0, lexicon.dim), dtype=np.float32)
        return cls(tokens, np.array(starts, dtype=np.int64),
                   np.array(ends, dtype=np.int64), matrix)

    @classmethod
    def from_sidecar(cls, text: str, doc: TokenEmbeddingsDoc) -> "TokenStream":
        tokens = [text[iv.start:iv.end].lower() for iv in doc.offsets]
        starts = np.array([iv.start for iv in doc.offsets], dtype=np.int64)
        ends = np.array([iv.end for iv in doc.offsets], dtype=np.int64)
        return cls(tokens, starts, ends, doc.matrix)

    def span_indices(self, span: Interval) -> np.ndarray:
        """Indices of tokens whose offsets intersect the span, in order."""
        mask = (self.starts < span.end) & (self.ends > span.start)
        return np.nonzero(mask)[0]


def token_vectors_for_span(stream: TokenStream, span: Interval) -> np.ndarray:
    """Rows for tokens intersecting the span (partial overlap counts)."""
    return stream.matrix[stream.span_indices(span)]
