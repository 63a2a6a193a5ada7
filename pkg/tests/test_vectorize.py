from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clauseseek.corpus import Interval, overlap_chars
from clauseseek.errors import FormatError
from clauseseek.vectorize import (EmbeddingLexicon, TokenStream,
                                  build_frequency_table, dump_lexicon,
                                  fit_tfidf, iter_ngrams, load_frequency_table,
                                  load_lexicon, load_sidecar_doc,
                                  load_sidecar_docs, load_sidecar_manifest,
                                  load_tfidf, save_tfidf, sidecar_file_size,
                                  tfidf_encode, tfidf_encode_many, tokenize,
                                  tokens_only, token_vectors_for_span,
                                  write_sidecar_doc)


# -- tokenizer ----------------------------------------------------------------

def test_tokenize_lowercases_and_strips_punctuation():
    tokens = tokenize("Governing Law.")
    assert [t for t, _ in tokens] == ["governing", "law"]
    assert tokens[0][1] == Interval(0, 9)
    assert tokens[1][1] == Interval(10, 13)


def test_tokenize_alphanumeric_run_kept_whole():
    tokens = tokenize("FRS17")
    assert [t for t, _ in tokens] == ["frs17"]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_underscore_is_separator():
    assert tokens_only("a_b") == ["a", "b"]


# -- TF-IDF --------------------------------------------------------------------

def test_idf_term_in_every_segment_is_one():
    model = fit_tfidf([["tax"], ["tax"], ["tax"]], (1, 1), binary_tf=True)
    assert model.idf[model.vocabulary["tax"]] == pytest.approx(1.0)


def test_idf_hand_arithmetic():
    # 2 segments, term in 1 of them: ln(3/2) + 1.
    model = fit_tfidf([["tax", "law"], ["tax"]], (1, 1), binary_tf=True)
    assert model.idf[model.vocabulary["law"]] == pytest.approx(math.log(3 / 2) + 1)


def test_vocabulary_ngram_enumeration():
    model = fit_tfidf([["a", "b"]], (1, 2), binary_tf=True)
    assert set(model.vocabulary) == {"a", "b", "a_b"}


def test_encode_self_cosine_is_one():
    model = fit_tfidf([["tax", "law"], ["merger", "notice"]], (1, 2), False)
    vec = tfidf_encode(model, ["tax", "law"])
    assert (vec @ vec.T).toarray()[0, 0] == pytest.approx(1.0)


def test_binary_tf_collapses_repetition():
    model = fit_tfidf([["tax", "law"], ["merger"]], (1, 1), binary_tf=True)
    a = tfidf_encode(model, ["tax", "tax", "tax"])
    b = tfidf_encode(model, ["tax"])
    assert np.array_equal(a.toarray(), b.toarray())


def test_encode_matches_hand_computation():
    # Brute-force arithmetic oracle for a 2-segment corpus, raw term counts.
    model = fit_tfidf([["tax", "law"], ["tax", "change"]], (1, 1), binary_tf=False)
    idf_shared = math.log(3 / 3) + 1          # appears in both segments
    idf_rare = math.log(3 / 2) + 1            # appears in one segment
    raw = {"law": 1 * idf_rare, "tax": 1 * idf_shared}
    norm = math.sqrt(sum(v * v for v in raw.values()))
    vec = tfidf_encode(model, ["tax", "law"]).toarray().ravel()
    assert vec[model.vocabulary["law"]] == pytest.approx(raw["law"] / norm)
    assert vec[model.vocabulary["tax"]] == pytest.approx(raw["tax"] / norm)
    assert vec[model.vocabulary["change"]] == 0.0


def test_encode_all_oov_yields_flagged_zero_vector():
    model = fit_tfidf([["tax"]], (1, 1), True)
    vec = tfidf_encode(model, ["unknown", "words"])
    assert vec.nnz == 0


def test_fit_rejects_empty_corpus():
    with pytest.raises(ValueError):
        fit_tfidf([], (1, 1), True)
    with pytest.raises(ValueError):
        fit_tfidf([[], []], (1, 1), True)


@settings(max_examples=100)
@given(st.lists(st.sampled_from(["tax", "law", "merger", "notice"]), min_size=1,
                max_size=8))
def test_encode_invariant_to_token_order(tokens):
    model = fit_tfidf([["tax", "law", "merger"], ["notice", "tax"]], (1, 1), False)
    forward = tfidf_encode(model, tokens).toarray()
    backward = tfidf_encode(model, list(reversed(tokens))).toarray()
    assert np.allclose(forward, backward)


@settings(max_examples=100)
@given(st.lists(st.sampled_from(["tax", "law", "merger"]), min_size=1, max_size=8))
def test_binary_encode_equals_dedupe(tokens):
    model = fit_tfidf([["tax", "law"], ["merger"]], (1, 1), binary_tf=True)
    deduped = list(dict.fromkeys(tokens))
    assert np.array_equal(tfidf_encode(model, tokens).toarray(),
                          tfidf_encode(model, deduped).toarray())


def test_idf_non_increasing_in_document_frequency():
    segments = [["a"], ["a", "b"], ["a", "b", "c"]]
    model = fit_tfidf(segments, (1, 1), True)
    idf_a = model.idf[model.vocabulary["a"]]  # df 3
    idf_b = model.idf[model.vocabulary["b"]]  # df 2
    idf_c = model.idf[model.vocabulary["c"]]  # df 1
    assert idf_a <= idf_b <= idf_c


def test_encode_many_stacks_single_encodings():
    model = fit_tfidf([["tax", "law"], ["merger"]], (1, 2), True)
    segments = [["tax"], ["merger", "tax"], ["oov"]]
    stacked = tfidf_encode_many(model, segments)
    for i, tokens in enumerate(segments):
        assert np.array_equal(stacked[i].toarray(),
                              tfidf_encode(model, tokens).toarray())


def test_tfidf_save_load_round_trip(tmp_path):
    model = fit_tfidf([["tax", "law"], ["tax", "change"]], (1, 2), False)
    path = tmp_path / "tfidf.json"
    save_tfidf(model, path)
    loaded = load_tfidf(path)
    assert loaded.vocabulary == model.vocabulary
    assert np.array_equal(loaded.idf, model.idf)
    assert loaded.ngram_range == model.ngram_range
    save_tfidf(loaded, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_ngram_iteration():
    assert list(iter_ngrams(["a", "b", "c"], (1, 2))) == [
        "a", "b", "c", "a_b", "b_c"]


# -- lexicons --------------------------------------------------------------------

def test_lexicon_basic_load(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("law 0.1 0.2 0.3\ntax -1 0 2.5\n")
    lex = load_lexicon(path)
    assert lex.dim == 3
    assert len(lex) == 2
    assert np.allclose(lex.get("tax"), [-1.0, 0.0, 2.5])
    assert lex.get("absent") is None


def test_lexicon_duplicate_keeps_first(tmp_path, caplog):
    path = tmp_path / "vectors.txt"
    path.write_text("law 1 0\nLAW 0 1\n")
    lex = load_lexicon(path)
    assert len(lex) == 1
    assert np.allclose(lex.get("law"), [1.0, 0.0])


def test_lexicon_ragged_line_rejected(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("law 1 0\ntax 1\n")
    with pytest.raises(FormatError, match="2"):
        load_lexicon(path)


def test_lexicon_non_numeric_rejected(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("law 1 x\n")
    with pytest.raises(FormatError):
        load_lexicon(path)


def test_lexicon_dump_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    table = {f"tok{i}": rng.standard_normal(4).astype(np.float32) for i in range(10)}
    lex = EmbeddingLexicon(4, table)
    path = tmp_path / "dump.txt"
    dump_lexicon(lex, path)
    loaded = load_lexicon(path)
    for token, vec in table.items():
        assert np.array_equal(loaded.get(token), vec)


# -- frequency tables -------------------------------------------------------------

def test_frequency_basic():
    table = build_frequency_table([["a", "a", "b"]])
    assert table.relative("a") == pytest.approx(2 / 3)
    assert table.relative("b") == pytest.approx(1 / 3)


def test_frequency_singleton():
    table = build_frequency_table([["only"]])
    assert table.relative("only") == 1.0


def test_frequency_additive_over_docs():
    split = build_frequency_table([["a", "b"], ["a", "c"]])
    merged = build_frequency_table([["a", "b", "a", "c"]])
    assert split.counts == merged.counts
    assert split.total == merged.total


def test_frequency_unseen_token_gets_minimum():
    table = build_frequency_table([["a", "b", "c", "d"]])
    assert table.relative("zz") == pytest.approx(1 / 4)


def test_frequency_empty_rejected():
    with pytest.raises(ValueError):
        build_frequency_table([[]])


def test_frequency_file_load(tmp_path):
    path = tmp_path / "freq.tsv"
    path.write_text("the\t100\nlaw\t25\n")
    table = load_frequency_table(path)
    assert table.relative("the") == pytest.approx(100 / 125)
    bad = tmp_path / "bad.tsv"
    bad.write_text("the\tx\n")
    with pytest.raises(FormatError):
        load_frequency_table(bad)


# -- sidecar files ----------------------------------------------------------------

def _toy_sidecar(tmp_path, num_tokens=4, dim=3):
    rng = np.random.default_rng(0)
    offsets = [Interval(5 * i, 5 * i + 3) for i in range(num_tokens)]
    matrix = rng.standard_normal((num_tokens, dim)).astype(np.float32)
    path = tmp_path / "doc.cdsc"
    write_sidecar_doc(path, offsets, matrix)
    return path, offsets, matrix


def test_sidecar_round_trip_bit_exact(tmp_path):
    path, offsets, matrix = _toy_sidecar(tmp_path)
    doc = load_sidecar_doc(path, "d1")
    assert doc.offsets == tuple(offsets)
    assert doc.matrix.tobytes() == matrix.tobytes()
    rewritten = tmp_path / "again.cdsc"
    write_sidecar_doc(rewritten, doc.offsets, doc.matrix)
    assert rewritten.read_bytes() == path.read_bytes()


def test_sidecar_size_formula(tmp_path):
    path, offsets, matrix = _toy_sidecar(tmp_path, num_tokens=7, dim=5)
    assert path.stat().st_size == sidecar_file_size(7, 5) == 5 + 8 + 8 * 7 + 4 * 7 * 5


def test_sidecar_rejects_bad_magic(tmp_path):
    path, _, _ = _toy_sidecar(tmp_path)
    blob = bytearray(path.read_bytes())
    blob[:5] = b"WRONG"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="magic"):
        load_sidecar_doc(path)


def test_sidecar_rejects_truncation(tmp_path):
    path, _, _ = _toy_sidecar(tmp_path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    with pytest.raises(FormatError, match="size"):
        load_sidecar_doc(path)


def test_sidecar_rejects_non_monotone_offsets(tmp_path):
    rng = np.random.default_rng(0)
    offsets = [Interval(10, 13), Interval(2, 5)]
    path = tmp_path / "doc.cdsc"
    write_sidecar_doc(path, offsets, rng.standard_normal((2, 3)).astype(np.float32))
    with pytest.raises(FormatError, match="increasing"):
        load_sidecar_doc(path)


def test_manifest_load_and_validation(tmp_path):
    p1, _, m1 = _toy_sidecar(tmp_path)
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text(f"d1\t{p1.name}\t4\t3\ttoy-model\tlast\n")
    records = load_sidecar_manifest(manifest)
    assert records[0].doc_id == "d1"
    docs = load_sidecar_docs(manifest)
    assert docs["d1"].matrix.shape == (4, 3)

    manifest.write_text(f"d1\t{p1.name}\t4\t3\ttoy\tlast\nd1\t{p1.name}\t4\t3\ttoy\tlast\n")
    with pytest.raises(FormatError, match="duplicate"):
        load_sidecar_manifest(manifest)

    manifest.write_text(f"d1\t{p1.name}\t4\t3\ttoy\tlast\nd2\t{p1.name}\t4\t9\ttoy\tlast\n")
    with pytest.raises(FormatError, match="dimension"):
        load_sidecar_manifest(manifest)

    manifest.write_text(f"d1\t{p1.name}\t9\t3\ttoy\tlast\n")
    with pytest.raises(FormatError, match="manifest says"):
        load_sidecar_docs(manifest)


# -- token streams -----------------------------------------------------------------

def _stream() -> TokenStream:
    text = "alpha beta gamma delta epsilon zeta eta theta"
    dim = 2
    table = {t: np.full(dim, float(i), dtype=np.float32)
             for i, t in enumerate(text.split())}
    return TokenStream.from_lexicon(text, EmbeddingLexicon(dim, table))


def test_span_covering_tokens_3_to_7():
    stream = _stream()
    span = Interval(int(stream.starts[3]), int(stream.ends[7]))
    rows = token_vectors_for_span(stream, span)
    assert rows.shape[0] == 5
    assert np.allclose(rows[:, 0], [3, 4, 5, 6, 7])


def test_span_between_tokens_empty():
    stream = _stream()
    gap = Interval(int(stream.ends[1]), int(stream.starts[2]))
    assert token_vectors_for_span(stream, gap).shape[0] == 0


@settings(max_examples=200)
@given(st.integers(0, 47), st.integers(1, 20))
def test_partial_overlap_matches_brute_force(start, length):
    # Brute-force oracle: a token belongs to the span iff the character
    # overlap of its interval with the span is positive.
    stream = _stream()
    span = Interval(start, start + length)
    expected = [i for i in range(len(stream.tokens))
                if overlap_chars(Interval(int(stream.starts[i]),
                                          int(stream.ends[i])), span) > 0]
    assert list(stream.span_indices(span)) == expected


def test_stream_from_lexicon_skips_oov():
    text = "known unknown known"
    lex = EmbeddingLexicon(2, {"known": np.ones(2, dtype=np.float32)})
    stream = TokenStream.from_lexicon(text, lex)
    assert stream.tokens == ["known", "known"]
    assert stream.matrix.shape == (2, 2)


def test_stream_from_sidecar_recovers_surface_forms(tmp_path):
    text = "Tax LAW merger"
    offsets = [Interval(0, 3), Interval(4, 7), Interval(8, 14)]
    matrix = np.arange(9, dtype=np.float32).reshape(3, 3)
    path = tmp_path / "doc.cdsc"
    write_sidecar_doc(path, offsets, matrix)
    stream = TokenStream.from_sidecar(text, load_sidecar_doc(path, "d"))
    assert stream.tokens == ["tax", "law", "merger"]
    assert np.array_equal(stream.matrix, matrix)
