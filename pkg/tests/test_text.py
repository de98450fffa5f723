import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbanfuse import text
from urbanfuse.core import Dataset, InvalidInputError
from urbanfuse.text import (
    TfidfModel,
    WordVectors,
    build_vocabulary,
    report_text_block,
    tfidf_fit,
    tfidf_term_weights,
    tfidf_transform,
    tokenize,
    train_word_vectors,
)

from conftest import make_dataset, make_report, make_taxonomy


class TestTokenize:
    def test_basic_dutch_sentence(self):
        assert tokenize("Grofvuil op straat!") == ["grofvuil", "op", "straat"]

    def test_empty(self):
        assert tokenize("") == []

    def test_digit_and_length_rules(self):
        assert tokenize("Bak 3x vol, 2019") == ["bak", "vol"]

    def test_unicode_letters_kept(self):
        assert tokenize("Überfüllte Mülltonne") == ["überfüllte", "mülltonne"]

    @given(st.text(max_size=80))
    @settings(max_examples=100, deadline=None)
    def test_deterministic_and_clean(self, s):
        first = tokenize(s)
        assert first == tokenize(s)
        for tok in first:
            assert len(tok) >= 2
            assert tok == tok.lower()
            assert not any(c.isdigit() for c in tok)


class TestVocabulary:
    def test_document_frequencies(self):
        vocab = build_vocabulary([["a", "b"], ["b"]], max_terms=10, min_df=1)
        assert set(vocab.terms) == {"a", "b"}
        assert vocab.document_frequency == {"a": 1, "b": 2}

    def test_top_by_df(self):
        vocab = build_vocabulary([["a", "b"], ["b"]], max_terms=1, min_df=1)
        assert vocab.terms == ("b",)

    def test_df_tie_breaks_lexicographically(self):
        vocab = build_vocabulary([["x", "y"]], max_terms=1, min_df=1)
        assert vocab.terms == ("x",)

    def test_min_df_filters(self):
        vocab = build_vocabulary([["a", "b"], ["b"]], max_terms=10, min_df=2)
        assert vocab.terms == ("b",)

    def test_invalid_max_terms(self):
        with pytest.raises(InvalidInputError):
            build_vocabulary([["a"]], max_terms=0)

    def test_order_invariant_to_document_order(self):
        docs = [["a", "b"], ["b", "c"], ["c"], ["a"]]
        v1 = build_vocabulary(docs, 10, 1)
        v2 = build_vocabulary(list(reversed(docs)), 10, 1)
        assert v1.terms == v2.terms
        assert v1.document_frequency == v2.document_frequency


class TestTfidf:
    def _fit_two_docs(self, normalize=False):
        corpus = [tokenize("trash on street"), tokenize("trash bag")]
        vocab = build_vocabulary(corpus, 10, 1)
        return tfidf_fit(corpus, vocab, normalize=normalize)

    def test_idf_values_match_formula(self):
        # Hand computation: idf(t) = ln((1+N)/(1+df)) + 1 with N=2.
        model = self._fit_two_docs()
        idf = {t: model.idf[i] for i, t in enumerate(model.vocabulary.terms)}
        assert idf["trash"] == pytest.approx(math.log(3 / 3) + 1, abs=1e-12)
        assert idf["street"] == pytest.approx(math.log(3 / 2) + 1, abs=1e-12)
        assert idf["street"] == pytest.approx(1.4054651081081644, abs=1e-12)

    def test_transform_pre_normalization(self):
        model = self._fit_two_docs(normalize=False)
        weights = tfidf_term_weights(model, "trash on street")
        assert weights["trash"] == pytest.approx(1.0, abs=1e-12)
        assert weights["on"] == pytest.approx(math.log(3 / 2) + 1, abs=1e-12)
        assert weights["street"] == pytest.approx(math.log(3 / 2) + 1, abs=1e-12)

    def test_empty_text_gives_zero_row(self):
        model = self._fit_two_docs()
        assert not tfidf_transform(model, "").any()

    def test_oov_ignored(self):
        model = self._fit_two_docs()
        row = tfidf_transform(model, "unseen words only")
        assert not row.any()

    def test_normalized_rows_unit_or_zero(self):
        model = self._fit_two_docs(normalize=True)
        for doc in ("trash on street", "trash trash bag", ""):
            norm = np.linalg.norm(tfidf_transform(model, doc))
            assert norm == pytest.approx(0.0, abs=1e-12) or norm == pytest.approx(1.0, abs=1e-9)

    def test_idf_non_increasing_in_df(self):
        # More documents containing a term never raises its idf.
        corpus = [["a"], ["a", "b"], ["b"], ["b", "c"]]
        vocab = build_vocabulary(corpus, 10, 1)
        model = tfidf_fit(corpus, vocab)
        df = vocab.document_frequency
        pairs = sorted(
            ((df[t], model.idf[vocab.term_to_index[t]]) for t in vocab.terms)
        )
        for (d1, i1), (d2, i2) in zip(pairs, pairs[1:]):
            if d1 < d2:
                assert i1 >= i2

    def test_save_load_round_trip(self, tmp_path):
        from urbanfuse import ingest

        model = self._fit_two_docs(normalize=True)
        ingest.save_model(model, tmp_path / "tfidf.json")
        loaded = ingest.load_model(tmp_path / "tfidf.json")
        assert isinstance(loaded, TfidfModel)
        assert np.array_equal(loaded.idf, model.idf)
        assert loaded.vocabulary.terms == model.vocabulary.terms


class TestWordVectors:
    def test_deterministic(self):
        corpus = [["aa", "bb", "cc"], ["aa", "bb"], ["cc", "dd"]] * 5
        wv1 = train_word_vectors(corpus, dims=8, window=2, negatives=2, epochs=2, seed=9)
        wv2 = train_word_vectors(corpus, dims=8, window=2, negatives=2, epochs=2, seed=9)
        assert np.array_equal(wv1.matrix, wv2.matrix)

    def test_cooccurring_tokens_more_similar_than_random(self):
        # Tokens that always co-occur (same group, shared contexts) end up
        # with a higher cosine than the mean over random vocabulary pairs,
        # across several seeds.
        wins = 0
        for seed in range(3):
            rng = np.random.default_rng(100 + seed)
            groups = [[f"g{g}t{t}" for t in range(5)] for g in range(12)]
            docs = [
                list(rng.choice(groups[int(rng.integers(0, len(groups)))], size=4))
                for _ in range(600)
            ]
            wv = train_word_vectors(docs, dims=8, window=3, negatives=3, epochs=4, seed=seed)

            def cos(a, b):
                va, vb = wv.vector(a), wv.vector(b)
                return float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb) + 1e-12))

            target = cos("g0t0", "g0t1")
            pairs = rng.choice(list(wv.vocabulary.terms), size=(100, 2))
            random_mean = np.mean([cos(a, b) for a, b in pairs if a != b])
            if target > random_mean:
                wins += 1
        assert wins == 3

    def test_single_one_token_document_warns(self):
        with pytest.warns(UserWarning, match="initialization"):
            wv = train_word_vectors([["alone"]], dims=4, window=2, epochs=1, seed=0)
        assert wv.matrix.shape == (1, 4)

    def test_empty_corpus_rejected(self):
        with pytest.raises(InvalidInputError):
            train_word_vectors([], dims=4)
        with pytest.raises(InvalidInputError):
            train_word_vectors([[], []], dims=4)


class TestReportTextBlock:
    def test_tfidf_width_equals_vocab(self):
        ds = make_dataset(4)
        corpus = [tokenize(r.text) for r in ds.reports]
        vocab = build_vocabulary(corpus, 100, 1)
        model = tfidf_fit(corpus, vocab)
        block = report_text_block(ds, model)
        assert block.width == len(vocab)
        assert block.kind == "raw"

    def test_word_vector_rows_are_token_means(self):
        tax = make_taxonomy()
        ds = Dataset(
            (
                make_report("a", taxonomy=tax, text="alpha beta"),
                make_report("b", taxonomy=tax, text="zzz unknown tokens"),
            ),
            tax,
        )
        vocab = build_vocabulary([["alpha", "beta"]], 10, 1)
        matrix = np.array([[1.0, 0.0], [0.0, 2.0]])
        wv = WordVectors(vocab, 2, matrix)
        block = report_text_block(ds, wv)
        assert np.allclose(block.matrix[0], (matrix[vocab.term_to_index["alpha"]] + matrix[vocab.term_to_index["beta"]]) / 2)
        assert not block.matrix[1].any()  # all-OOV report -> zero row
