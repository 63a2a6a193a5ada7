"""Aggregators (mean, max, frequency-weighted, cosine-basis) and projectors
(truncated SVD, FastICA, common-component removal) over token matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import FormatError


# ---------------------------------------------------------------------------
# Aggregators
# ---------------------------------------------------------------------------

def mean_aggregate(matrix: np.ndarray) -> np.ndarray:
    """Element-wise mean over token rows."""
    if len(matrix) == 0:
        raise ValueError("cannot aggregate an empty token matrix")
    return np.asarray(matrix, dtype=float).mean(axis=0)


def max_aggregate(matrix: np.ndarray) -> np.ndarray:
    """Element-wise maximum over token rows."""
    if len(matrix) == 0:
        raise ValueError("cannot aggregate an empty token matrix")
    return np.asarray(matrix, dtype=float).max(axis=0)


def sif_weight(relative_frequency: float, a: float) -> float:
    """Inverse-frequency weight a / (a + f_r); strictly decreasing in f_r."""
    if a <= 0:
        raise ValueError(f"weight parameter a must be positive, got {a}")
    if not 0 < relative_frequency <= 1:
        raise ValueError(f"relative frequency must be in (0, 1], got {relative_frequency}")
    return a / (a + relative_frequency)


def sif_aggregate(matrix: np.ndarray, relative_frequencies: Sequence[float],
                  a: float = 1e-3) -> np.ndarray:
    """Frequency-weighted mean: sum_i w_i v_i / N with w_i = a/(a + f_i).

    Common-component removal is a separate pass (fit_common_component /
    remove_common_component), applied after aggregation.
    """
    matrix = np.asarray(matrix, dtype=float)
    if len(matrix) == 0:
        raise ValueError("cannot aggregate an empty token matrix")
    if len(relative_frequencies) != len(matrix):
        raise ValueError("one relative frequency required per token row")
    weights = np.array([sif_weight(f, a) for f in relative_frequencies])
    return (weights[:, None] * matrix).sum(axis=0) / len(matrix)


def dct_basis(num_tokens: int, k_max: int) -> np.ndarray:
    """Orthonormal DCT-II analysis rows for orders 0..k_max.

    Row k holds s_k * cos(pi * (2t + 1) * k / (2N)); rows with k >= N are
    zero so requesting more coefficients than tokens degrades gracefully.
    """
    basis = np.zeros((k_max + 1, num_tokens))
    t = np.arange(num_tokens)
    for k in range(min(k_max + 1, num_tokens)):
        scale = np.sqrt(1.0 / num_tokens) if k == 0 else np.sqrt(2.0 / num_tokens)
        basis[k] = scale * np.cos(np.pi * (2 * t + 1) * k / (2 * num_tokens))
    return basis


def dct_aggregate(matrix: np.ndarray, k_max: int) -> np.ndarray:
    """Order-aware embedding: concatenated cosine-transform coefficients.

    Applies the orthonormal DCT-II along the token axis independently per
    dimension and concatenates coefficient blocks c^0..c^k_max, giving a
    vector of length (k_max + 1) * d. With k_max=0 the output is the mean
    scaled by sqrt(N), so cosine rankings match mean aggregation exactly.
    """
    if k_max < 0:
        raise ValueError(f"coefficient order must be >= 0, got {k_max}")
    matrix = np.asarray(matrix, dtype=float)
    if len(matrix) == 0:
        raise ValueError("cannot aggregate an empty token matrix")
    return (dct_basis(len(matrix), k_max) @ matrix).ravel()


# ---------------------------------------------------------------------------
# Truncated SVD
# ---------------------------------------------------------------------------

@dataclass
class TsvdProjector:
    """Top-r right singular vectors (orthonormal rows) and singular values."""

    components: np.ndarray       # (r, d)
    singular_values: np.ndarray  # (r,) non-increasing

    @property
    def rank(self) -> int:
        return self.components.shape[0]

    def project(self, v):
        if sparse.issparse(v):
            return np.asarray(v @ self.components.T).ravel()
        return self.components @ np.asarray(v, dtype=float)

    def project_rows(self, m):
        if sparse.issparse(m):
            return np.asarray(m @ self.components.T)
        return np.asarray(m, dtype=float) @ self.components.T


def fit_tsvd(matrix, rank: int, seed: int = 0, oversample: int = 10,
             power_iters: int = 2) -> TsvdProjector:
    """Randomized truncated SVD (works on dense and scipy.sparse inputs).

    Range finding draws a Gaussian sketch of rank + oversample columns and
    runs ``power_iters`` power iterations, accumulating every iterate into
    the range basis (QR-stabilized) before the exact SVD of the reduced
    matrix. Accumulation is what buys singular-value accuracy far beyond the
    plain power scheme at the same iteration count.
    """
    n_rows, n_cols = matrix.shape
    if not 1 <= rank <= min(n_rows, n_cols):
        raise ValueError(
            f"rank {rank} not in [1, {min(n_rows, n_cols)}] for a "
            f"{n_rows}x{n_cols} matrix")
    rng = np.random.Generator(np.random.PCG64(seed))
    n_sketch = min(rank + oversample, min(n_rows, n_cols))
    omega = rng.standard_normal((n_cols, n_sketch))
    block, _ = np.linalg.qr(matrix @ omega)
    blocks = [block]
    for _ in range(power_iters):
        if sum(b.shape[1] for b in blocks) >= min(n_rows, n_cols):
            break  # basis already spans the smaller side
        block, _ = np.linalg.qr(matrix @ (matrix.T @ block))
        blocks.append(block)
    q, _ = np.linalg.qr(np.concatenate(blocks, axis=1))
    if sparse.issparse(matrix):
        reduced = (matrix.T @ q).T
    else:
        reduced = q.T @ matrix
    _, sing, vt = np.linalg.svd(reduced, full_matrices=False)
    return TsvdProjector(vt[:rank].copy(), sing[:rank].copy())


# ---------------------------------------------------------------------------
# Common component (first right singular vector) removal
# ---------------------------------------------------------------------------

def fit_common_component(vectors: np.ndarray, seed: int = 0) -> np.ndarray:
    """First right singular vector of the stacked segment-vector matrix."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[0] < 2:
        raise ValueError("common-component fitting needs at least 2 segment vectors")
    if not np.any(vectors):
        raise ValueError("cannot fit a common component on an all-zero matrix")
    u = fit_tsvd(vectors, 1, seed=seed).components[0]
    return u / np.linalg.norm(u)


def remove_common_component(v: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Subtract the projection on the (unit) common component: v - (v.u)u."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        return v - np.outer(v @ u, u)
    return v - (v @ u) * u


# ---------------------------------------------------------------------------
# FastICA
# ---------------------------------------------------------------------------

@dataclass
class FicaProjector:
    """Whitening plus rotation recovered by the fixed-point iteration.

    ``mean`` is the training mean; projection subtracts it before applying
    the unmixing matrix so new vectors land in the same space the components
    were estimated in.
    """

    whitening: np.ndarray  # (n_components, d)
    unmixing: np.ndarray   # (n_components, d)
    mean: np.ndarray       # (d,)
    n_components: int
    converged: bool

    def project(self, v: np.ndarray) -> np.ndarray:
        return self.unmixing @ (np.asarray(v, dtype=float) - self.mean)

    def project_rows(self, m: np.ndarray) -> np.ndarray:
        return (np.asarray(m, dtype=float) - self.mean) @ self.unmixing.T


def _symmetric_decorrelate(w: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(w @ w.T)
    eigvals = np.clip(eigvals, 1e-12, None)
    inv_sqrt = eigvecs @ np.diag(1.0 / np.sqrt(eigvals)) @ eigvecs.T
    return inv_sqrt @ w


def fit_fica(matrix: np.ndarray, n_components: int, tol: float = 1e-4,
             max_iter: int = 200, seed: int = 0) -> FicaProjector:
    """FastICA with logcosh contrast and symmetric decorrelation.

    Centers the data, whitens via eigendecomposition of the covariance
    (1/N normalization, so training outputs have unit population variance),
    then iterates the fixed point until the largest rotation-row change
    drops below ``tol`` or ``max_iter`` is hit. Non-convergence returns the
    best iterate with ``converged=False``.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a samples x features matrix")
    n_samples, n_features = x.shape
    if not 1 <= n_components <= n_features:
        raise ValueError(f"n_components {n_components} not in [1, {n_features}]")
    if n_samples < n_components:
        raise ValueError(
            f"need at least {n_components} samples, got {n_samples}")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n_samples
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    top_vals = eigvals[order]
    if top_vals[-1] <= 1e-12 * max(top_vals[0], 1.0):
        raise ValueError(
            "covariance is rank deficient for the requested component count")
    whitening = (eigvecs[:, order] / np.sqrt(top_vals)).T  # (n, d)
    z = centered @ whitening.T  # (samples, n), identity covariance

    rng = np.random.Generator(np.random.PCG64(seed))
    w = _symmetric_decorrelate(rng.standard_normal((n_components, n_components)))
    converged = False
    for _ in range(max_iter):
        wz = w @ z.T                      # (n, samples)
        g = np.tanh(wz)
        g_prime = 1.0 - g ** 2
        w_new = (g @ z) / n_samples - np.diag(g_prime.mean(axis=1)) @ w
        w_new = _symmetric_decorrelate(w_new)
        drift = np.max(np.abs(np.abs(np.diag(w_new @ w.T)) - 1.0))
        w = w_new
        if drift < tol:
            converged = True
            break

    return FicaProjector(whitening, w @ whitening, mean, n_components, converged)


# ---------------------------------------------------------------------------
# Projector serialization (versioned binary, little-endian float32)
# ---------------------------------------------------------------------------

PROJECTOR_MAGIC = b"CDPJ1"
_KIND_TSVD = b"TSVD"
_KIND_FICA = b"FICA"
_KIND_CCMP = b"CCMP"


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_projector(obj: TsvdProjector | FicaProjector | np.ndarray,
                   path: str | Path) -> None:
    """Serialize a fitted projector (or a common-component vector) to disk."""
    parts: list[bytes] = [PROJECTOR_MAGIC]
    if isinstance(obj, TsvdProjector):
        r, d = obj.components.shape
        parts += [_KIND_TSVD, struct.pack("<II", r, d),
                  _f32_bytes(obj.components), _f32_bytes(obj.singular_values)]
    elif isinstance(obj, FicaProjector):
        n, d = obj.unmixing.shape
        parts += [_KIND_FICA, struct.pack("<IIB", n, d, int(obj.converged)),
                  _f32_bytes(obj.whitening), _f32_bytes(obj.unmixing),
                  _f32_bytes(obj.mean)]
    elif isinstance(obj, np.ndarray) and obj.ndim == 1:
        parts += [_KIND_CCMP, struct.pack("<I", obj.shape[0]), _f32_bytes(obj)]
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    Path(path).write_bytes(b"".join(parts))


def _read_f32(blob: bytes, offset: int, shape: tuple[int, ...]) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape))
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
    return arr.copy(), offset + 4 * count


def load_projector(path: str | Path) -> TsvdProjector | FicaProjector | np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:5] != PROJECTOR_MAGIC:
        raise FormatError("bad magic bytes in projector file", path=str(path))
    kind = blob[5:9]
    if kind == _KIND_TSVD:
        r, d = struct.unpack_from("<II", blob, 9)
        components, off = _read_f32(blob, 17, (r, d))
        singular, off = _read_f32(blob, off, (r,))
        if off != len(blob):
            raise FormatError("projector file size mismatch", path=str(path))
        return TsvdProjector(components, singular)
    if kind == _KIND_FICA:
        n, d, converged = struct.unpack_from("<IIB", blob, 9)
        whitening, off = _read_f32(blob, 18, (n, d))
        unmixing, off = _read_f32(blob, off, (n, d))
        mean, off = _read_f32(blob, off, (d,))
        if off != len(blob):
            raise FormatError("projector file size mismatch", path=str(path))
        return FicaProjector(whitening, unmixing, mean, n, bool(converged))
    if kind == _KIND_CCMP:
        (d,) = struct.unpack_from("<I", blob, 9)
        vec, off = _read_f32(blob, 13, (d,))
        if off != len(blob):
            raise FormatError("projector file size mismatch", path=str(path))
        return vec
    raise FormatError(f"unknown projector kind tag {kind!r}", path=str(path))
