"""Pipeline assembly: parse a declarative configuration, fit models on the
reference corpus, encode seeds and target candidates, score, and choose
answer spans per episode.

Model fitting (TF-IDF vocabulary, common component, projectors) always uses
all candidate segments of all reference documents, so fitted state is
episode-independent and retrieval is deterministic.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from . import score as scoring
from . import segment as segmentation
from . import transform
from . import vectorize
from .corpus import (DEFAULT_CONVENTION, Document, Interval, QueryEpisode,
                     RangeConvention, SpanSet, format_span_field,
                     load_in_tsv, load_reference_tsv)
from .errors import ConfigError, FormatError, RunError, UnencodableSpanError

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class SegmenterConfig:
    max_ngram: int = 1


@dataclass
class VectorizerConfig:
    kind: str = "tfidf"            # tfidf | static | contextual
    ngram_lo: int = 1
    ngram_hi: int = 2
    binary_tf: bool = True
    lexicon: str | None = None
    sidecar_manifest: str | None = None
    frequency_file: str | None = None


@dataclass
class ProjectorConfig:
    kind: str = "none"             # none | tsvd | fica
    rank: int | None = None
    seed: int = 0
    fica_tol: float = 1e-4
    fica_max_iter: int = 200


@dataclass
class AggregatorConfig:
    kind: str = "none"             # none | mean | max | sif | dct
    sif_a: float = 1e-3
    sif_remove_common: bool = True
    dct_k: int = 0


@dataclass
class ScorerConfig:
    kind: str = "cosine"           # cosine | wmd
    pooling: str = "mean"          # mean | max
    relaxed: bool = False          # wmd only: use the nearest-counterpart bound


@dataclass
class ChooserConfig:
    kind: str = "top1"             # top1 | threshold
    theta: float | None = None


_PATH_KEYS = {"vectorizer.lexicon", "vectorizer.sidecar_manifest",
              "vectorizer.frequency_file"}

_BOOL_VALUES = {"true": True, "false": False, "yes": True, "no": False,
                "1": True, "0": False}


def _parse_bool(key: str, value: str) -> bool:
    try:
        return _BOOL_VALUES[value.lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected a boolean, got {value!r}") from None


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


@dataclass
class PipelineConfig:
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    vectorizer: VectorizerConfig = field(default_factory=VectorizerConfig)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    chooser: ChooserConfig = field(default_factory=ChooserConfig)

    @classmethod
    def from_items(cls, items: dict[str, str],
                   base_dir: Path | None = None) -> "PipelineConfig":
        """Build a config from dotted ``section.key`` -> value strings.

        Relative paths are resolved against ``base_dir`` (normally the
        config file's directory).
        """
        config = cls()
        if "aggregator.kind" not in items:
            # Sensible default: identity for segment-level TF-IDF vectors,
            # mean pooling for token-level vectorizers.
            kind = items.get("vectorizer.kind", "tfidf")
            config.aggregator.kind = "none" if kind == "tfidf" else "mean"
        for key, value in items.items():
            if key in _PATH_KEYS and base_dir is not None:
                path = Path(value)
                if not path.is_absolute():
                    value = str(base_dir / path)
            cls._apply(config, key, value)
        config.validate()
        return config

    @staticmethod
    def _apply(config: "PipelineConfig", key: str, value: str) -> None:
        setters = {
            "segmenter.max_ngram": lambda: setattr(
                config.segmenter, "max_ngram", _parse_int(key, value)),
            "vectorizer.kind": lambda: setattr(config.vectorizer, "kind", value),
            "vectorizer.ngram_lo": lambda: setattr(
                config.vectorizer, "ngram_lo", _parse_int(key, value)),
            "vectorizer.ngram_hi": lambda: setattr(
                config.vectorizer, "ngram_hi", _parse_int(key, value)),
            "vectorizer.binary_tf": lambda: setattr(
                config.vectorizer, "binary_tf", _parse_bool(key, value)),
            "vectorizer.lexicon": lambda: setattr(config.vectorizer, "lexicon", value),
            "vectorizer.sidecar_manifest": lambda: setattr(
                config.vectorizer, "sidecar_manifest", value),
            "vectorizer.frequency_file": lambda: setattr(
                config.vectorizer, "frequency_file", value),
            "projector.kind": lambda: setattr(config.projector, "kind", value),
            "projector.rank": lambda: setattr(
                config.projector, "rank", _parse_int(key, value)),
            "projector.seed": lambda: setattr(
                config.projector, "seed", _parse_int(key, value)),
            "projector.fica_tol": lambda: setattr(
                config.projector, "fica_tol", _parse_float(key, value)),
            "projector.fica_max_iter": lambda: setattr(
                config.projector, "fica_max_iter", _parse_int(key, value)),
            "aggregator.kind": lambda: setattr(config.aggregator, "kind", value),
            "aggregator.sif_a": lambda: setattr(
                config.aggregator, "sif_a", _parse_float(key, value)),
            "aggregator.sif_remove_common": lambda: setattr(
                config.aggregator, "sif_remove_common", _parse_bool(key, value)),
            "aggregator.dct_k": lambda: setattr(
                config.aggregator, "dct_k", _parse_int(key, value)),
            "scorer.kind": lambda: setattr(config.scorer, "kind", value),
            "scorer.pooling": lambda: setattr(config.scorer, "pooling", value),
            "scorer.relaxed": lambda: setattr(
                config.scorer, "relaxed", _parse_bool(key, value)),
            "chooser.kind": lambda: setattr(config.chooser, "kind", value),
            "chooser.theta": lambda: setattr(
                config.chooser, "theta", _parse_float(key, value)),
        }
        try:
            setters[key]()
        except KeyError:
            raise ConfigError(f"unknown configuration key {key!r}") from None

    def validate(self) -> None:
        seg, vec, proj = self.segmenter, self.vectorizer, self.projector
        agg, sc, ch = self.aggregator, self.scorer, self.chooser
        if seg.max_ngram < 1:
            raise ConfigError("segmenter.max_ngram must be >= 1")
        if vec.kind not in ("tfidf", "static", "contextual"):
            raise ConfigError(f"unknown vectorizer kind {vec.kind!r}")
        if vec.kind == "tfidf" and not 1 <= vec.ngram_lo <= vec.ngram_hi:
            raise ConfigError("vectorizer ngram range must satisfy 1 <= lo <= hi")
        if vec.kind == "static" and not vec.lexicon:
            raise ConfigError("static vectorizer requires vectorizer.lexicon")
        if vec.kind == "contextual" and not vec.sidecar_manifest:
            raise ConfigError("contextual vectorizer requires vectorizer.sidecar_manifest")
        if proj.kind not in ("none", "tsvd", "fica"):
            raise ConfigError(f"unknown projector kind {proj.kind!r}")
        if proj.kind in ("tsvd", "fica") and (proj.rank is None or proj.rank < 1):
            raise ConfigError(f"projector {proj.kind} requires projector.rank >= 1")
        if proj.kind == "fica" and vec.kind == "tfidf":
            raise ConfigError("fica projector requires a token-level vectorizer "
                              "(dense covariance is infeasible on a sparse vocabulary)")
        if agg.kind not in ("none", "mean", "max", "sif", "dct"):
            raise ConfigError(f"unknown aggregator kind {agg.kind!r}")
        if vec.kind == "tfidf" and agg.kind != "none":
            raise ConfigError("tfidf produces segment-level vectors; aggregator must be 'none'")
        if agg.kind == "dct" and agg.dct_k < 0:
            raise ConfigError("aggregator.dct_k must be >= 0")
        if agg.kind == "sif" and agg.sif_a <= 0:
            raise ConfigError("aggregator.sif_a must be positive")
        if sc.kind not in ("cosine", "wmd"):
            raise ConfigError(f"unknown scorer kind {sc.kind!r}")
        if sc.pooling not in ("mean", "max"):
            raise ConfigError(f"unknown pooling policy {sc.pooling!r}")
        if sc.kind == "wmd":
            if vec.kind == "tfidf":
                raise ConfigError("wmd scorer requires a token-level vectorizer")
            if agg.kind != "none":
                raise ConfigError("wmd consumes token signatures directly; "
                                  "aggregator must be 'none'")
            if proj.kind != "none":
                raise ConfigError("wmd scorer does not combine with a projector")
        if sc.kind == "cosine" and vec.kind != "tfidf" and agg.kind == "none":
            raise ConfigError("cosine scoring over token vectors requires an aggregator")
        if ch.kind not in ("top1", "threshold"):
            raise ConfigError(f"unknown chooser kind {ch.kind!r}")
        if ch.kind == "threshold" and ch.theta is None:
            raise ConfigError("threshold chooser requires chooser.theta")


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``section.key = value`` lines; '#' starts a comment."""
    items: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key or "." not in key:
            raise ConfigError(f"line {line_no}: expected 'section.key = value', got {raw!r}")
        if not value:
            raise ConfigError(f"line {line_no}: empty value for {key!r}")
        items[key] = value
    return items


def preset_path(name: str) -> Path | None:
    """Resolve a packaged preset name (e.g. 'tfidf-lsa') to its file."""
    from importlib import resources
    candidate = resources.files("clauseseek").joinpath(f"presets/{name}.cfg")
    with resources.as_file(candidate) as path:
        return path if path.exists() else None


def load_config(config: str | Path,
                overrides: Sequence[str] = ()) -> PipelineConfig:
    """Load a config file or packaged preset name, then apply overrides.

    Overrides are ``section.key=value`` strings (CLI --set); their relative
    paths resolve against the current directory, while paths inside the
    config file resolve against the file's own directory.
    """
    path = Path(config)
    if not path.exists():
        preset = preset_path(str(config))
        if preset is None:
            raise FileNotFoundError(f"no config file or preset named {config!r}")
        path = preset
    items = parse_config_text(path.read_text(encoding="utf-8"))
    base_dir = path.parent
    resolved: dict[str, str] = {}
    for key, value in items.items():
        if key in _PATH_KEYS and not Path(value).is_absolute():
            value = str(base_dir / value)
        resolved[key] = value
    for override in overrides:
        key, sep, value = override.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"override must be 'section.key=value', got {override!r}")
        if key in _PATH_KEYS and not Path(value).is_absolute():
            value = str(Path.cwd() / value)
        resolved[key] = value
    return PipelineConfig.from_items(resolved)


# ---------------------------------------------------------------------------
# Fitted pipeline
# ---------------------------------------------------------------------------

@dataclass
class ScoredCandidate:
    candidate: segmentation.CandidateSegment
    score: float


class Pipeline:
    """All reference-corpus state needed to answer episodes.

    Heavy resources (lexicon, sidecars, frequency table) may be injected to
    bypass file loading in tests; otherwise they are read from the paths in
    the configuration.
    """

    def __init__(self, config: PipelineConfig, docs: dict[str, Document], *,
                 lexicon: vectorize.EmbeddingLexicon | None = None,
                 sidecar_docs: dict[str, vectorize.TokenEmbeddingsDoc] | None = None,
                 frequency_table: vectorize.FrequencyTable | None = None,
                 abbreviations: frozenset[str] | None = None) -> None:
        config.validate()
        self.config = config
        self.docs = docs
        self.doc_ids = sorted(docs)
        self.sentences: dict[str, list[segmentation.Sentence]] = {}
        self.candidates: dict[str, list[segmentation.CandidateSegment]] = {}
        for doc_id in self.doc_ids:
            sents = segmentation.split_sentences(docs[doc_id].text, abbreviations)
            self.sentences[doc_id] = sents
            self.candidates[doc_id] = segmentation.generate_candidates(
                sents, config.segmenter.max_ngram)

        self.tfidf_model: vectorize.TfidfModel | None = None
        self.streams: dict[str, vectorize.TokenStream] = {}
        self.freq_table: vectorize.FrequencyTable | None = frequency_table
        self.common_component: np.ndarray | None = None
        self.projector: transform.TsvdProjector | transform.FicaProjector | None = None
        self.doc_vectors: dict[str, np.ndarray | sparse.csr_matrix] = {}
        self.doc_norms: dict[str, np.ndarray] = {}
        self._signature_cache: dict[str, list[scoring.NbowSignature | None]] = {}

        if config.vectorizer.kind == "tfidf":
            self._fit_tfidf_state()
        else:
            self._fit_token_state(lexicon, sidecar_docs)

    # -- fitting ------------------------------------------------------------

    def _candidate_text(self, doc_id: str, cand: segmentation.CandidateSegment) -> str:
        iv = cand.interval
        return self.docs[doc_id].text[iv.start:iv.end]

    def _fit_tfidf_state(self) -> None:
        config = self.config
        token_lists: list[list[str]] = []
        bounds: dict[str, tuple[int, int]] = {}
        for doc_id in self.doc_ids:
            first = len(token_lists)
            for cand in self.candidates[doc_id]:
                token_lists.append(vectorize.tokens_only(self._candidate_text(doc_id, cand)))
            bounds[doc_id] = (first, len(token_lists))
        if not token_lists:
            raise ConfigError("reference corpus produced no candidate segments")
        self.tfidf_model = vectorize.fit_tfidf(
            token_lists, (config.vectorizer.ngram_lo, config.vectorizer.ngram_hi),
            config.vectorizer.binary_tf)
        global_matrix = vectorize.tfidf_encode_many(self.tfidf_model, token_lists)
        if config.projector.kind == "tsvd":
            self.projector = self._fit_tsvd(global_matrix)
            projected = self.projector.project_rows(global_matrix)
            for doc_id, (lo, hi) in bounds.items():
                self._store_doc_vectors(doc_id, projected[lo:hi])
        else:
            for doc_id, (lo, hi) in bounds.items():
                self._store_doc_vectors(doc_id, global_matrix[lo:hi])

    def _fit_token_state(self, lexicon, sidecar_docs) -> None:
        config = self.config
        if not self.docs:
            raise ConfigError("reference corpus is empty")
        if config.vectorizer.kind == "static":
            if lexicon is None:
                lexicon = vectorize.load_lexicon(config.vectorizer.lexicon)
            for doc_id in self.doc_ids:
                self.streams[doc_id] = vectorize.TokenStream.from_lexicon(
                    self.docs[doc_id].text, lexicon)
        else:
            if sidecar_docs is None:
                sidecar_docs = vectorize.load_sidecar_docs(config.vectorizer.sidecar_manifest)
            for doc_id in self.doc_ids:
                if doc_id not in sidecar_docs:
                    raise ConfigError(
                        f"no sidecar embeddings for reference document {doc_id!r}")
                self.streams[doc_id] = vectorize.TokenStream.from_sidecar(
                    self.docs[doc_id].text, sidecar_docs[doc_id])

        if self.freq_table is None and self._needs_frequencies():
            if config.vectorizer.frequency_file:
                self.freq_table = vectorize.load_frequency_table(
                    config.vectorizer.frequency_file)
            else:
                self.freq_table = vectorize.build_frequency_table(
                    [self.streams[d].tokens for d in self.doc_ids])

        if config.scorer.kind == "wmd":
            return  # signatures are built lazily per target document

        agg_rows: list[np.ndarray] = []
        bounds: dict[str, tuple[int, int]] = {}
        dim = self._aggregated_dim()
        for doc_id in self.doc_ids:
            first = len(agg_rows)
            stream = self.streams[doc_id]
            for cand in self.candidates[doc_id]:
                idx = stream.span_indices(cand.interval)
                if len(idx) == 0:
                    agg_rows.append(np.zeros(dim))
                else:
                    agg_rows.append(self._aggregate(stream, idx))
            bounds[doc_id] = (first, len(agg_rows))
        global_matrix = np.vstack(agg_rows) if agg_rows else np.empty((0, dim))

        if config.aggregator.kind == "sif" and config.aggregator.sif_remove_common:
            self.common_component = transform.fit_common_component(
                global_matrix, seed=config.projector.seed)
            global_matrix = transform.remove_common_component(
                global_matrix, self.common_component)

        if config.projector.kind == "tsvd":
            self.projector = self._fit_tsvd(global_matrix)
            global_matrix = self.projector.project_rows(global_matrix)
        elif config.projector.kind == "fica":
            rank = config.projector.rank
            if rank > min(global_matrix.shape):
                raise ConfigError(
                    f"fica rank {rank} exceeds candidate matrix shape "
                    f"{global_matrix.shape}")
            self.projector = transform.fit_fica(
                global_matrix, rank, tol=config.projector.fica_tol,
                max_iter=config.projector.fica_max_iter, seed=config.projector.seed)
            if not self.projector.converged:
                logger.warning("fica did not converge in %d iterations; "
                               "using the final iterate", config.projector.fica_max_iter)
            global_matrix = self.projector.project_rows(global_matrix)

        for doc_id, (lo, hi) in bounds.items():
            self._store_doc_vectors(doc_id, global_matrix[lo:hi])

    def _fit_tsvd(self, matrix) -> transform.TsvdProjector:
        rank = self.config.projector.rank
        if rank > min(matrix.shape):
            raise ConfigError(
                f"tsvd rank {rank} exceeds candidate matrix shape {matrix.shape}")
        return transform.fit_tsvd(matrix, rank, seed=self.config.projector.seed)

    def _needs_frequencies(self) -> bool:
        return self.config.aggregator.kind == "sif"

    def _aggregated_dim(self) -> int:
        dim = next(iter(self.streams.values())).matrix.shape[1]
        if self.config.aggregator.kind == "dct":
            return (self.config.aggregator.dct_k + 1) * dim
        return dim

    def _aggregate(self, stream: vectorize.TokenStream, idx: np.ndarray) -> np.ndarray:
        agg = self.config.aggregator
        matrix = stream.matrix[idx]
        if agg.kind == "mean":
            return transform.mean_aggregate(matrix)
        if agg.kind == "max":
            return transform.max_aggregate(matrix)
        if agg.kind == "sif":
            freqs = [self.freq_table.relative(stream.tokens[i]) for i in idx]
            return transform.sif_aggregate(matrix, freqs, agg.sif_a)
        if agg.kind == "dct":
            return transform.dct_aggregate(matrix, agg.dct_k)
        raise ConfigError(f"aggregator {agg.kind!r} cannot produce segment vectors")

    def _store_doc_vectors(self, doc_id: str, rows) -> None:
        self.doc_vectors[doc_id] = rows
        if sparse.issparse(rows):
            norms = np.sqrt(np.asarray(rows.multiply(rows).sum(axis=1)).ravel())
        else:
            norms = np.linalg.norm(rows, axis=1)
        self.doc_norms[doc_id] = norms

    # -- encoding -----------------------------------------------------------

    def _span_token_indices(self, doc_id: str, span: SpanSet) -> np.ndarray:
        stream = self.streams[doc_id]
        parts = [stream.span_indices(iv) for iv in span.items]
        if not parts:
            return np.empty(0, dtype=int)
        return np.concatenate(parts)

    def encode_span(self, doc_id: str, span: SpanSet):
        """Encode a (possibly discontinuous) span into the scoring space.

        Returns a vector for cosine pipelines and an nBOW signature for WMD
        pipelines. Raises UnencodableSpanError when the span yields no
        usable tokens ("unencodable seed").
        """
        if not span.items:
            raise UnencodableSpanError(f"empty span in document {doc_id!r}")
        config = self.config
        if config.vectorizer.kind == "tfidf":
            text = " ".join(self.docs[doc_id].text[iv.start:iv.end] for iv in span.items)
            vec = vectorize.tfidf_encode(self.tfidf_model, vectorize.tokens_only(text))
            if vec.nnz == 0:
                raise UnencodableSpanError(
                    f"span in document {doc_id!r} has no in-vocabulary tokens")
            if self.projector is not None:
                return self.projector.project(vec)
            return vec

        idx = self._span_token_indices(doc_id, span)
        if len(idx) == 0:
            raise UnencodableSpanError(
                f"span in document {doc_id!r} covers no embeddable tokens")
        stream = self.streams[doc_id]
        if config.scorer.kind == "wmd":
            tokens = [stream.tokens[i] for i in idx]
            return scoring.build_signature(tokens, stream.matrix[idx])
        vec = self._aggregate(stream, idx)
        if self.common_component is not None:
            vec = transform.remove_common_component(vec, self.common_component)
        if self.projector is not None:
            vec = self.projector.project(vec)
        return vec

    # -- scoring ------------------------------------------------------------

    def _candidate_signatures(self, doc_id: str) -> list[scoring.NbowSignature | None]:
        cached = self._signature_cache.get(doc_id)
        if cached is not None:
            return cached
        stream = self.streams[doc_id]
        signatures: list[scoring.NbowSignature | None] = []
        for cand in self.candidates[doc_id]:
            idx = stream.span_indices(cand.interval)
            if len(idx) == 0:
                signatures.append(None)
            else:
                tokens = [stream.tokens[i] for i in idx]
                signatures.append(scoring.build_signature(tokens, stream.matrix[idx]))
        self._signature_cache[doc_id] = signatures
        return signatures

    def _cosine_scores(self, doc_id: str, seed_vectors: list) -> np.ndarray:
        rows = self.doc_vectors[doc_id]
        norms = self.doc_norms[doc_id]
        valid = norms > 0
        per_seed = []
        for vec in seed_vectors:
            if sparse.issparse(vec):
                dots = (rows @ vec.T).toarray().ravel()
                seed_norm = float(np.sqrt(vec.multiply(vec).sum()))
            else:
                dots = np.asarray(rows @ np.asarray(vec, dtype=float)).ravel()
                seed_norm = float(np.linalg.norm(vec))
            sims = np.full(len(norms), -np.inf)
            np.divide(dots, norms * seed_norm, out=sims, where=valid)
            per_seed.append(sims)
        stacked = np.vstack(per_seed)
        if self.config.scorer.pooling == "max":
            pooled = stacked.max(axis=0)
        else:
            pooled = stacked.mean(axis=0)
        pooled[~valid] = -np.inf
        return pooled

    def _wmd_scores(self, doc_id: str, seed_signatures: list) -> np.ndarray:
        distance = scoring.wmd_relaxed if self.config.scorer.relaxed else scoring.wmd_exact
        signatures = self._candidate_signatures(doc_id)
        pooled = np.full(len(signatures), -np.inf)
        for i, sig in enumerate(signatures):
            if sig is None:
                continue
            sims = [-distance(seed, sig) for seed in seed_signatures]
            pooled[i] = scoring.pool_over_seeds(sims, self.config.scorer.pooling)
        return pooled

    def run_episode(self, episode: QueryEpisode) -> SpanSet:
        """Score every target candidate against the seeds and choose spans.

        An empty target document yields an empty SpanSet with a warning;
        unencodable seeds are skipped unless every seed fails.
        """
        target = episode.target_doc_id
        if target not in self.docs:
            raise ValueError(f"target document {target!r} not in the reference corpus")
        candidates = self.candidates[target]
        if not candidates:
            logger.warning("target document %r has no candidate segments", target)
            return SpanSet(target, ())

        seed_reprs = []
        failures: list[str] = []
        for seed in episode.seeds:
            try:
                seed_reprs.append(self.encode_span(seed.doc_id, seed))
            except UnencodableSpanError as exc:
                failures.append(str(exc))
        if not seed_reprs:
            raise UnencodableSpanError(
                "no encodable seed for episode: " + "; ".join(failures))
        if failures:
            logger.warning("skipped %d unencodable seed(s): %s",
                           len(failures), "; ".join(failures))

        if self.config.scorer.kind == "wmd":
            pooled = self._wmd_scores(target, seed_reprs)
        else:
            pooled = self._cosine_scores(target, seed_reprs)
        if not np.any(np.isfinite(pooled)):
            raise UnencodableSpanError(
                f"all candidates in target document {target!r} are unencodable")

        if self.config.chooser.kind == "threshold":
            chosen = [cand.interval for cand, s in zip(candidates, pooled)
                      if np.isfinite(s) and s >= self.config.chooser.theta]
            return SpanSet(target, tuple(chosen))

        best_idx = None
        for i, s in enumerate(pooled):
            if not np.isfinite(s):
                continue
            if best_idx is None:
                best_idx = i
                continue
            best = pooled[best_idx]
            if s > best:
                best_idx = i
            elif s == best:
                # Deterministic tie-break: earliest start, then shorter segment.
                cur = candidates[i].interval
                ref = candidates[best_idx].interval
                if (cur.start, cur.length) < (ref.start, ref.length):
                    best_idx = i
        return SpanSet(target, (candidates[best_idx].interval,))

    def scored_candidates(self, episode: QueryEpisode) -> list[ScoredCandidate]:
        """All target candidates with pooled scores (diagnostics helper)."""
        target = episode.target_doc_id
        seed_reprs = [self.encode_span(s.doc_id, s) for s in episode.seeds]
        if self.config.scorer.kind == "wmd":
            pooled = self._wmd_scores(target, seed_reprs)
        else:
            pooled = self._cosine_scores(target, seed_reprs)
        return [ScoredCandidate(cand, float(s))
                for cand, s in zip(self.candidates[target], pooled)]


def run_file(config: PipelineConfig, in_path: str | Path,
             reference_path: str | Path,
             convention: RangeConvention = DEFAULT_CONVENTION,
             threads: int = 1,
             abbreviations: frozenset[str] | None = None) -> list[str]:
    """Answer every episode line of in.tsv; returns out.tsv lines in order.

    Output is deterministic for fixed inputs regardless of ``threads``. A
    line that cannot produce an answer aborts the run with its line number.
    """
    docs = load_reference_tsv(reference_path)
    episodes = load_in_tsv(in_path, convention, known_doc_ids=docs)
    pipeline = Pipeline(config, docs, abbreviations=abbreviations)

    def solve(episode: QueryEpisode) -> str:
        try:
            answer = pipeline.run_episode(episode)
            if not answer.items:
                raise ValueError("no answer produced (target has no candidates)")
            return f"{episode.clause_label}\t{format_span_field(answer, convention)}"
        except RunError:
            raise
        except Exception as exc:
            raise RunError(str(exc), episode.line_no) from exc

    if threads > 1 and len(episodes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(solve, episodes))
    return [solve(ep) for ep in episodes]
