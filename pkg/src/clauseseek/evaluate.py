"""Character-level Soft F1 with one-to-one range assignment.

Expected and returned ranges are matched by a maximum-profit assignment
(profit = raw character overlap), then precision is matched characters over
returned length and recall matched characters over expected length. Both
sides empty scores (1, 1, 1); one side empty scores (0, 0, 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import (Interval, RangeConvention, DEFAULT_CONVENTION,
                     load_expected_tsv, overlap_chars)
from .errors import FormatError


@dataclass
class AssignmentResult:
    """One-to-one pairing of row/column indices and its total profit."""

    pairs: list[tuple[int, int]]
    total_overlap: float


@dataclass
class QueryMetrics:
    line_no: int
    clause_label: str
    precision: float
    recall: float
    f1: float


@dataclass
class MetricReport:
    per_query: list[QueryMetrics]
    macro_f1: float


def _solve_square_min_cost(cost: np.ndarray) -> list[int]:
    """Hungarian algorithm with potentials, O(n^3); returns col per row."""
    n = cost.shape[0]
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match = [0] * (n + 1)   # match[j] = row assigned to column j (1-based)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = inf
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col_of_row = [0] * n
    for j in range(1, n + 1):
        if match[j]:
            col_of_row[match[j] - 1] = j - 1
    return col_of_row


def hungarian_max(profit) -> AssignmentResult:
    """Maximum-profit one-to-one assignment of a rectangular profit matrix.

    The matrix is padded square with zeros internally; min(m, n) pairs are
    returned (zero-profit pairs included). An empty matrix yields an empty
    assignment.
    """
    arr = np.asarray(profit, dtype=float)
    if arr.size == 0:
        return AssignmentResult([], 0.0)
    if arr.ndim != 2:
        raise ValueError("profit matrix must be two-dimensional")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("profit entries must be finite and non-negative")
    m, n = arr.shape
    size = max(m, n)
    padded = np.zeros((size, size))
    padded[:m, :n] = arr
    cost = padded.max() - padded
    col_of_row = _solve_square_min_cost(cost)
    pairs = [(i, col_of_row[i]) for i in range(m) if col_of_row[i] < n]
    total = float(sum(arr[i, j] for i, j in pairs))
    return AssignmentResult(pairs, total)


def soft_f1(expected: Sequence[Interval],
            returned: Sequence[Interval]) -> tuple[float, float, float]:
    """Assignment-based precision, recall, and F1 over character overlaps."""
    if not expected and not returned:
        return (1.0, 1.0, 1.0)
    if not expected or not returned:
        return (0.0, 0.0, 0.0)
    profit = [[overlap_chars(e, r) for r in returned] for e in expected]
    matched = hungarian_max(profit).total_overlap
    precision = matched / sum(iv.length for iv in returned)
    recall = matched / sum(iv.length for iv in expected)
    if precision + recall == 0.0:
        return (0.0, 0.0, 0.0)
    f1 = 2.0 * precision * recall / (precision + recall)
    return (precision, recall, f1)


def evaluate_run(expected_path: str | Path, out_path: str | Path,
                 convention: RangeConvention = DEFAULT_CONVENTION) -> MetricReport:
    """Score an answer file against the gold file, line by line.

    Files must be aligned: same line count and the same clause label per
    line. The macro score is the arithmetic mean of per-line F1.
    """
    expected_rows = load_expected_tsv(expected_path, convention)
    out_rows = load_expected_tsv(out_path, convention)
    if len(expected_rows) != len(out_rows):
        raise FormatError(
            f"line count mismatch: {len(expected_rows)} expected lines vs "
            f"{len(out_rows)} answer lines", path=str(out_path))
    per_query: list[QueryMetrics] = []
    for line_no, ((exp_clause, exp_span), (out_clause, out_span)) in enumerate(
            zip(expected_rows, out_rows), 1):
        if exp_clause != out_clause:
            raise FormatError(
                f"clause label mismatch: expected {exp_clause!r}, got {out_clause!r}",
                path=str(out_path), line_no=line_no)
        p, r, f1 = soft_f1(exp_span.items, out_span.items)
        per_query.append(QueryMetrics(line_no, exp_clause, p, r, f1))
    macro = sum(q.f1 for q in per_query) / len(per_query) if per_query else 1.0
    return MetricReport(per_query, macro)


def render_report(report: MetricReport) -> str:
    """Human-readable per-clause summary table."""
    by_clause: dict[str, list[QueryMetrics]] = {}
    for q in report.per_query:
        by_clause.setdefault(q.clause_label, []).append(q)
    width = max([len(c) for c in by_clause], default=6)
    width = max(width, len("clause"))
    lines = [f"{'clause':<{width}}  {'lines':>5}  {'mean-p':>7}  {'mean-r':>7}  {'mean-f1':>7}"]
    for clause in sorted(by_clause):
        rows = by_clause[clause]
        mp = sum(q.precision for q in rows) / len(rows)
        mr = sum(q.recall for q in rows) / len(rows)
        mf = sum(q.f1 for q in rows) / len(rows)
        lines.append(f"{clause:<{width}}  {len(rows):>5}  {mp:>7.4f}  {mr:>7.4f}  {mf:>7.4f}")
    return "\n".join(lines)
