"""Per-document contextual token embeddings, serialized as sidecar files.

File layout (shared contract with the retrieval engine's reader):

    magic  b"CDSC1"
    u32    num_tokens          (little-endian)
    u32    dim
    num_tokens x (u32 start, u32 end)   character offsets, half-open
    num_tokens x dim float32, row-major

The manifest is a TSV with one record per document:
    doc_id <TAB> relative_path <TAB> num_tokens <TAB> dim <TAB> model <TAB> layer

Long documents are processed in overlapping token windows; each token's
vector is taken from the window where the token is most interior (ties go
to the earlier window), so no token is represented by a window edge when a
better-centered window exists.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"CDSC1"
HEADER = struct.Struct("<II")


class ExportError(RuntimeError):
    """Raised when a document cannot be exported faithfully (never dropped)."""


@dataclass
class ExportRecord:
    doc_id: str
    path: str
    num_tokens: int
    dim: int
    model: str
    layer: str


def file_size(num_tokens: int, dim: int) -> int:
    return len(MAGIC) + HEADER.size + 8 * num_tokens + 4 * num_tokens * dim


def read_reference_tsv(path: str | Path) -> list[tuple[str, str]]:
    """Read ``doc_id <TAB> content`` lines (content may contain tabs)."""
    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    text = Path(path).read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    if not text:
        return rows
    for line_no, raw in enumerate(text.split("\n"), 1):
        doc_id, sep, content = raw.partition("\t")
        if not sep or not doc_id:
            raise ValueError(f"{path}:{line_no}: expected 'doc_id<TAB>content'")
        if doc_id in seen:
            raise ValueError(f"{path}:{line_no}: duplicate document id {doc_id!r}")
        seen.add(doc_id)
        rows.append((doc_id, content))
    return rows


def write_sidecar(path: str | Path, offsets: Sequence[tuple[int, int]],
                  matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(offsets):
        raise ValueError("matrix rows must match offset count")
    parts = [MAGIC, HEADER.pack(len(offsets), matrix.shape[1])]
    parts.append(np.asarray(offsets, dtype="<u4").reshape(len(offsets), 2).tobytes())
    parts.append(matrix.tobytes())
    Path(path).write_bytes(b"".join(parts))


def validate_offsets(doc_id: str, offsets: Sequence[tuple[int, int]],
                     text_length: int) -> None:
    """Reject any offset mapping the format cannot represent faithfully."""
    prev_start = -1
    for start, end in offsets:
        if end <= start:
            raise ExportError(
                f"document {doc_id!r}: token offset [{start}, {end}) is empty")
        if start <= prev_start:
            raise ExportError(
                f"document {doc_id!r}: token offsets not strictly increasing")
        if end > text_length:
            raise ExportError(
                f"document {doc_id!r}: token offset end {end} exceeds text "
                f"length {text_length}")
        prev_start = start


def window_starts(num_tokens: int, window: int, stride: int) -> list[int]:
    """Start indices of overlapping windows covering all tokens."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if num_tokens <= window:
        return [0]
    starts = list(range(0, num_tokens - window + 1, stride))
    if starts[-1] != num_tokens - window:
        starts.append(num_tokens - window)
    return starts


def owning_window(token_idx: int, starts: Sequence[int], window: int,
                  num_tokens: int) -> int:
    """Index into ``starts`` of the window where the token is most interior."""
    best = -1
    best_margin = -1
    for i, start in enumerate(starts):
        length = min(window, num_tokens - start)
        if not start <= token_idx < start + length:
            continue
        margin = min(token_idx - start, start + length - 1 - token_idx)
        if margin > best_margin:
            best = i
            best_margin = margin
    if best < 0:
        raise ExportError(f"token {token_idx} not covered by any window")
    return best


def _resolve_layer(layer: str, num_hidden: int) -> int:
    if layer == "last":
        return num_hidden - 1
    try:
        idx = int(layer)
    except ValueError:
        raise ValueError(f"layer must be 'last' or an integer, got {layer!r}") from None
    if not -num_hidden <= idx < num_hidden:
        raise ValueError(f"layer index {idx} out of range for {num_hidden} hidden states")
    return idx % num_hidden


def export(reference_path: str | Path, model_id: str, out_dir: str | Path,
           layer: str = "last", window: int = 512, stride: int = 256) -> Path:
    """Export every document of reference.tsv; returns the manifest path.

    Deterministic for a fixed model, window and stride: inference runs in
    eval mode under no_grad on CPU unless torch selects otherwise.
    """
    import torch
    from transformers import AutoModel, AutoTokenizer

    if stride > window:
        raise ValueError(f"stride {stride} must not exceed window {window}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokenizer = AutoTokenizer.from_pretrained(model_id)
    if not tokenizer.is_fast:
        raise ValueError(f"model {model_id!r} has no fast tokenizer; "
                         "character offsets require one")
    model = AutoModel.from_pretrained(model_id)
    model.eval()
    dim = int(model.config.hidden_size)

    records: list[ExportRecord] = []
    for index, (doc_id, text) in enumerate(read_reference_tsv(reference_path)):
        encoding = tokenizer(text, return_offsets_mapping=True,
                             add_special_tokens=False)
        ids = encoding["input_ids"]
        offsets = [(int(a), int(b)) for a, b in encoding["offset_mapping"]]
        validate_offsets(doc_id, offsets, len(text))
        num_tokens = len(ids)

        if num_tokens == 0:
            matrix = np.zeros((0, dim), dtype=np.float32)
        else:
            starts = window_starts(num_tokens, window, stride)
            hidden_per_window: list[np.ndarray] = []
            with torch.no_grad():
                for start in starts:
                    piece = ids[start:start + window]
                    output = model(torch.tensor([piece]), output_hidden_states=True)
                    layer_idx = _resolve_layer(layer, len(output.hidden_states))
                    hidden_per_window.append(
                        output.hidden_states[layer_idx][0].to(torch.float32).numpy())
            matrix = np.empty((num_tokens, dim), dtype=np.float32)
            for t in range(num_tokens):
                w = owning_window(t, starts, window, num_tokens)
                matrix[t] = hidden_per_window[w][t - starts[w]]

        file_name = f"doc_{index:05d}.cdsc"
        write_sidecar(out_dir / file_name, offsets, matrix)
        records.append(ExportRecord(doc_id, file_name, num_tokens, dim,
                                    model_id, layer))
        logger.info("exported %s: %d tokens x %d dims", doc_id, num_tokens, dim)

    manifest_path = out_dir / "manifest.tsv"
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.doc_id}\t{r.path}\t{r.num_tokens}\t{r.dim}"
                     f"\t{r.model}\t{r.layer}\n")
    return manifest_path


# ---------------------------------------------------------------------------
# Structural verification
# ---------------------------------------------------------------------------

def read_manifest(path: str | Path) -> list[ExportRecord]:
    records = []
    for line_no, raw in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), 1):
        fields = raw.split("\t")
        if len(fields) != 6:
            raise ValueError(f"{path}:{line_no}: expected 6 fields, got {len(fields)}")
        doc_id, rel, num_tokens, dim, model, layer = fields
        records.append(ExportRecord(doc_id, rel, int(num_tokens), int(dim),
                                    model, layer))
    return records


def verify(manifest_path: str | Path,
           reference_path: str | Path | None = None) -> list[str]:
    """Structural checks over an exported set; returns violation strings."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    violations: list[str] = []
    try:
        records = read_manifest(manifest_path)
    except (ValueError, OSError) as exc:
        return [f"{manifest_path}: unreadable manifest: {exc}"]

    texts: dict[str, str] | None = None
    if reference_path is not None:
        texts = dict(read_reference_tsv(reference_path))

    seen: set[str] = set()
    dims: set[int] = set()
    for record in records:
        tag = f"{record.path} ({record.doc_id})"
        if record.doc_id in seen:
            violations.append(f"{tag}: duplicate manifest record")
            continue
        seen.add(record.doc_id)
        dims.add(record.dim)
        if texts is not None and record.doc_id not in texts:
            violations.append(f"{tag}: document missing from reference file")

        path = base / record.path
        if not path.exists():
            violations.append(f"{tag}: file missing")
            continue
        blob = path.read_bytes()
        if blob[:5] != MAGIC:
            violations.append(f"{tag}: bad magic bytes")
            continue
        if len(blob) < 13:
            violations.append(f"{tag}: truncated header")
            continue
        num_tokens, dim = HEADER.unpack_from(blob, 5)
        if (num_tokens, dim) != (record.num_tokens, record.dim):
            violations.append(
                f"{tag}: header says {num_tokens}x{dim}, manifest says "
                f"{record.num_tokens}x{record.dim}")
        expected = file_size(num_tokens, dim)
        if len(blob) != expected:
            violations.append(
                f"{tag}: size {len(blob)} differs from layout formula {expected}")
            continue
        raw_offsets = np.frombuffer(blob, dtype="<u4", count=2 * num_tokens,
                                    offset=13).reshape(num_tokens, 2)
        prev_start = -1
        for start, end in raw_offsets:
            if end <= start:
                violations.append(f"{tag}: empty token offset [{start}, {end})")
                break
            if int(start) <= prev_start:
                violations.append(f"{tag}: offsets not strictly increasing")
                break
            prev_start = int(start)
        else:
            if texts is not None and record.doc_id in texts and num_tokens:
                text_len = len(texts[record.doc_id])
                if int(raw_offsets[-1, 1]) > text_len:
                    violations.append(
                        f"{tag}: last offset end {int(raw_offsets[-1, 1])} "
                        f"exceeds document length {text_len}")

    if len(dims) > 1:
        violations.append(f"manifest mixes dimensionalities {sorted(dims)}")
    if texts is not None:
        for doc_id in texts:
            if doc_id not in seen:
                violations.append(f"reference document {doc_id!r} has no manifest record")
    return violations
