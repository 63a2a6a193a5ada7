"""Similarity between encoded segments: cosine, Word Mover's Distance
(exact and relaxed), and multi-seed score pooling.

Exact WMD is solved as a min-cost flow on the bipartite transport graph.
Masses and ground costs are quantized to a 1e-9 fixed-point grid and the
flow runs in exact integer arithmetic, so results are deterministic and the
relaxed bound can never exceed the exact optimum.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

_SCALE = 10 ** 9

PoolingPolicy = Literal["mean", "max"]


@dataclass
class NbowSignature:
    """Normalized bag-of-words mass distribution over a segment's unique tokens.

    Weights are occurrence counts divided by the total count; the vector row
    for a token is the mean of its occurrence vectors (identical occurrences
    for static lexicons, per-occurrence means for contextual embeddings).
    """

    tokens: tuple[str, ...]
    weights: np.ndarray
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)


def build_signature(tokens: Sequence[str], vectors: np.ndarray) -> NbowSignature:
    """Group token occurrences into an NbowSignature (first-seen order)."""
    if len(tokens) != len(vectors):
        raise ValueError("one vector row required per token")
    if len(tokens) == 0:
        raise ValueError("cannot build a signature from zero tokens")
    order: list[str] = []
    counts: dict[str, int] = {}
    sums: dict[str, np.ndarray] = {}
    for token, row in zip(tokens, np.asarray(vectors, dtype=float)):
        if token not in counts:
            order.append(token)
            counts[token] = 0
            sums[token] = np.zeros_like(row)
        counts[token] += 1
        sums[token] += row
    weights = np.array([counts[t] for t in order], dtype=float)
    weights /= weights.sum()
    matrix = np.vstack([sums[t] / counts[t] for t in order])
    return NbowSignature(tuple(order), weights, matrix)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero-norm inputs are rejected."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine is undefined for zero-norm vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _quantize_masses(weights: np.ndarray) -> list[int]:
    # Largest-remainder rounding so the integer masses sum to exactly _SCALE.
    raw = weights * _SCALE
    base = np.floor(raw).astype(np.int64)
    residual = _SCALE - int(base.sum())
    if residual > 0:
        fractions = raw - base
        for idx in np.argsort(-fractions, kind="stable")[:residual]:
            base[idx] += 1
    return [int(b) for b in base]


def _quantized_problem(a: NbowSignature, b: NbowSignature
                       ) -> tuple[list[int], list[int], list[list[int]]]:
    if len(a) == 0 or len(b) == 0:
        raise ValueError("WMD is undefined for empty signatures")
    diff = a.vectors[:, None, :] - b.vectors[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    cost = np.rint(dist * _SCALE).astype(np.int64)
    return (_quantize_masses(a.weights), _quantize_masses(b.weights),
            cost.tolist())


def _min_cost_transport(supply: list[int], demand: list[int],
                        cost: list[list[int]]) -> int:
    """Successive shortest paths with Dijkstra + potentials; exact integers."""
    m, n = len(supply), len(demand)
    source, sink = 0, m + n + 1
    node_count = m + n + 2
    to: list[int] = []
    cap: list[int] = []
    cst: list[int] = []
    adjacency: list[list[int]] = [[] for _ in range(node_count)]

    def add_edge(u: int, v: int, capacity: int, weight: int) -> None:
        adjacency[u].append(len(to))
        to.append(v)
        cap.append(capacity)
        cst.append(weight)
        adjacency[v].append(len(to))
        to.append(u)
        cap.append(0)
        cst.append(-weight)

    total = sum(supply)
    for i, s in enumerate(supply):
        add_edge(source, 1 + i, s, 0)
    for j, d in enumerate(demand):
        add_edge(1 + m + j, sink, d, 0)
    for i in range(m):
        row = cost[i]
        for j in range(n):
            add_edge(1 + i, 1 + m + j, total, row[j])

    potential = [0] * node_count
    flow = 0
    total_cost = 0
    inf = float("inf")
    while flow < total:
        dist = [inf] * node_count
        dist[source] = 0
        prev_edge = [-1] * node_count
        heap = [(0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for edge_id in adjacency[u]:
                if cap[edge_id] <= 0:
                    continue
                v = to[edge_id]
                nd = d + cst[edge_id] + potential[u] - potential[v]
                if nd < dist[v]:
                    dist[v] = nd
                    prev_edge[v] = edge_id
                    heapq.heappush(heap, (nd, v))
        if dist[sink] == inf:
            raise RuntimeError("transport network unexpectedly disconnected")
        for v in range(node_count):
            if dist[v] < inf:
                potential[v] += dist[v]
        push = total - flow
        v = sink
        while v != source:
            edge_id = prev_edge[v]
            push = min(push, cap[edge_id])
            v = to[edge_id ^ 1]
        v = sink
        while v != source:
            edge_id = prev_edge[v]
            cap[edge_id] -= push
            cap[edge_id ^ 1] += push
            total_cost += push * cst[edge_id]
            v = to[edge_id ^ 1]
        flow += push
    return total_cost


def wmd_exact(a: NbowSignature, b: NbowSignature) -> float:
    """Minimum-cost transport between the two mass distributions.

    Ground cost is the Euclidean distance between token vectors; the optimum
    is exact for the quantized problem (symmetric, zero iff the weighted
    point sets coincide).
    """
    supply, demand, cost = _quantized_problem(a, b)
    return _min_cost_transport(supply, demand, cost) / (_SCALE * _SCALE)


def wmd_relaxed(a: NbowSignature, b: NbowSignature) -> float:
    """Lower bound: each side's mass moves to its nearest counterpart.

    Computed on the same quantized data as wmd_exact, so the bound holds
    exactly: wmd_relaxed <= wmd_exact always.
    """
    supply, demand, cost = _quantized_problem(a, b)
    forward = sum(s * min(row) for s, row in zip(supply, cost))
    cols = [[cost[i][j] for i in range(len(supply))] for j in range(len(demand))]
    backward = sum(d * min(col) for d, col in zip(demand, cols))
    return max(forward, backward) / (_SCALE * _SCALE)


def pool_over_seeds(per_seed_scores: Sequence[float],
                    policy: PoolingPolicy) -> float:
    """Combine per-seed similarities into one candidate score."""
    if len(per_seed_scores) == 0:
        raise ValueError("cannot pool an empty score list")
    if policy == "mean":
        return float(sum(per_seed_scores) / len(per_seed_scores))
    if policy == "max":
        return float(max(per_seed_scores))
    raise ValueError(f"unknown pooling policy {policy!r}")
