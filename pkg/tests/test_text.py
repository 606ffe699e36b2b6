import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialrank.errors import ValidationError
from trialrank.records import RegistryRecord
from oracles import TOY, tfidf_oracle
from trialrank.text import (
    Tokenizer,
    Vocabulary,
    FeatureMatrix,
    build_vocabulary,
    count_matrix,
    idf_weights,
    load_stopwords,
    tokenize,
    vectorize,
)


class TestTokenize:
    def test_example(self):
        assert tokenize("Metformin improves glycemic control") == ["metformin", "improv", "glycem", "control"]

    def test_stop_words_only(self):
        assert tokenize("the of and") == []

    def test_empty(self):
        assert tokenize("") == []

    def test_digits_and_short_tokens_dropped(self):
        assert tokenize("500 mg x 2 a b12 hba1c") == ["mg", "b12", "hba1c"]

    def test_punctuation_and_underscore_split(self):
        assert tokenize("insulin/glucose_ratio; (ACE-inhibitor)") == ["insulin", "glucos", "ratio", "ac", "inhibitor"]

    def test_order_preserved(self):
        assert tokenize("placebo metformin placebo") == ["placebo", "metformin", "placebo"]

    def test_stoplist_versioned(self):
        words = load_stopwords()
        assert len(words) == 318 and "the" in words and "metformin" not in words
        with pytest.raises(ValidationError, match="unknown stop-word list"):
            Tokenizer(stopwords="en-999")

    def test_no_stemming_option(self):
        assert Tokenizer(stemmer="none")("Running trials") == ["running", "trials"]


class TestVocabulary:
    def test_threshold_boundary(self):
        docs = ["diabet"] * 5 + ["rare"] * 4
        vocab = build_vocabulary(docs, min_df=5)
        assert "diabet" in vocab and "rare" not in vocab

    def test_sorted_with_document_frequency(self):
        vocab = build_vocabulary(TOY, min_df=1)
        assert vocab.terms == ("diabet", "insulin", "metformin", "placebo")
        assert vocab.document_frequency == (1, 2, 2, 1)

    def test_empty_corpus(self):
        with pytest.raises(ValidationError, match="empty corpus"):
            build_vocabulary([], min_df=1)

    def test_fixture_hand_count(self):
        # df counts per term across three short documents, counted by hand
        docs = ["asthma wheeze inhaler", "asthma inhaler", "asthma trial"]
        vocab = build_vocabulary(docs, min_df=2)
        assert dict(zip(vocab.terms, vocab.document_frequency)) == {"asthma": 3, "inhal": 2}

    def test_round_trip(self, tmp_path):
        vocab = build_vocabulary(TOY, min_df=1)
        vocab.save(tmp_path / "v.txt")
        again = Vocabulary.load(tmp_path / "v.txt")
        assert again == vocab and again.digest() == vocab.digest()

    def test_digest_tracks_tokenizer(self):
        a = build_vocabulary(TOY, min_df=1)
        b = build_vocabulary(TOY, min_df=1, tokenizer=Tokenizer(min_length=3))
        assert a.terms == b.terms and a.digest() != b.digest()

    def test_rejects_unsorted(self):
        with pytest.raises(ValidationError):
            Vocabulary(("b", "a"), (1, 1), 1, 2)


class TestVectorize:
    def test_binary(self):
        vocab = build_vocabulary(TOY, min_df=1)
        row = vectorize(["diabet diabet metformin"], vocab, "binary").dense()[0]
        assert row.tolist() == [1.0, 0.0, 1.0, 0.0]

    def test_frequency(self):
        vocab = build_vocabulary(TOY, min_df=1)
        row = vectorize(["diabet diabet metformin"], vocab, "frequency").dense()[0]
        assert row.tolist() == [2.0, 0.0, 1.0, 0.0]

    def test_tfidf_matches_oracle(self):
        vocab = build_vocabulary(TOY, min_df=1)
        got = vectorize(TOY, vocab).dense()
        expected = tfidf_oracle([d.split() for d in TOY], list(vocab.terms))
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-10)

    def test_tfidf_hand_table(self):
        # N=3; df=1 gives idf 1+ln2, df=2 gives idf 1+ln(4/3)
        a, b = 1 + math.log(2), 1 + math.log(4 / 3)
        n1 = math.hypot(2 * a, b)
        vocab = build_vocabulary(TOY, min_df=1)
        row = vectorize(TOY, vocab).dense()[0]
        np.testing.assert_allclose(row, [2 * a / n1, 0, b / n1, 0], atol=1e-12)

    @pytest.mark.parametrize("smooth, normalize", [(False, True), (True, False), (False, False)])
    def test_variants_match_oracle(self, smooth, normalize):
        vocab = build_vocabulary(TOY, min_df=1)
        got = vectorize(TOY, vocab, smooth_idf=smooth, normalize=normalize).dense()
        expected = tfidf_oracle([d.split() for d in TOY], list(vocab.terms), smooth, normalize)
        np.testing.assert_allclose(got, expected, atol=1e-10)
        assert got.shape == (3, 4)

    def test_unknown_weighting(self):
        vocab = build_vocabulary(TOY, min_df=1)
        with pytest.raises(ValidationError, match="unknown weighting"):
            vectorize(TOY, vocab, "bm25")

    def test_unseen_terms_dropped(self):
        vocab = build_vocabulary(TOY, min_df=1)
        fm = vectorize(["metformin sitagliptin", "sitagliptin"], vocab)
        assert fm.dense()[0].tolist() == [0.0, 0.0, 1.0, 0.0]
        assert fm.dense()[1].tolist() == [0.0] * 4

    def test_rows_follow_record_ids(self):
        recs = [RegistryRecord("NCT2", brief_title="insulin"), RegistryRecord("NCT1", brief_title="placebo")]
        vocab = build_vocabulary(recs, min_df=1)
        assert vectorize(recs, vocab).rows == ("NCT2", "NCT1")

    def test_idf_formula(self):
        vocab = build_vocabulary(TOY, min_df=1)
        rare, common = 1 + math.log(2), 1 + math.log(4 / 3)
        np.testing.assert_allclose(idf_weights(vocab), [rare, common, common, rare])
        np.testing.assert_allclose(idf_weights(vocab, smooth=False), 1 + np.log(3 / np.array([1, 2, 2, 1])))

    def test_persistence_round_trip(self, tmp_path):
        vocab = build_vocabulary(TOY, min_df=1)
        fm = vectorize(TOY, vocab)
        sha = fm.save(tmp_path / "f.trc")
        again = FeatureMatrix.load(tmp_path / "f.trc")
        assert again.rows == fm.rows and again.vocab_hash == vocab.digest()
        assert np.array_equal(again.dense(), fm.dense())
        assert again.save(tmp_path / "g.trc") == sha

    def test_deterministic(self):
        vocab = build_vocabulary(TOY, min_df=1)
        a, b = vectorize(TOY, vocab).values, vectorize(TOY, vocab).values
        assert (a != b).nnz == 0


WORDS = ["insulin", "metformin", "placebo", "glucose", "asthma", "the", "and", "trial", "42", "x"]
docs_strategy = st.lists(st.lists(st.sampled_from(WORDS), max_size=12).map(" ".join), min_size=1, max_size=8)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(docs_strategy)
    def test_support_and_norm_invariants(self, docs):
        vocab = build_vocabulary(docs, min_df=1)
        if len(vocab) == 0:
            return
        b = vectorize(docs, vocab, "binary").dense()
        f = vectorize(docs, vocab, "frequency").dense()
        t = vectorize(docs, vocab, "tfidf").dense()
        assert np.array_equal(b != 0, f != 0) and np.array_equal(f != 0, t != 0)
        assert set(np.unique(b)) <= {0.0, 1.0}
        assert np.all(f == np.round(f)) and np.all(t >= 0)
        norms = np.linalg.norm(t, axis=1)
        assert np.all((np.abs(norms - 1) < 1e-12) | (norms == 0))
        for d, row in zip(docs, f):
            assert row.sum() == sum(1 for tok in tokenize(d) if tok in vocab)

    @settings(max_examples=40, deadline=None)
    @given(docs_strategy, st.integers(1, 3))
    def test_every_term_meets_min_df(self, docs, min_df):
        vocab = build_vocabulary(docs, min_df=min_df)
        counts = count_matrix(docs, vocab).toarray()
        assert all(df >= min_df for df in vocab.document_frequency)
        assert ((counts > 0).sum(axis=0) == np.array(vocab.document_frequency, dtype=int)).all()
