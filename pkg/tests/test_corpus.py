import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pledgespec import corpus as cm
from pledgespec.corpus import (CLASS_COUNTS, CLASS_PROBS, NUM_CLASSES, Corpus,
                               IntegrityError, ParseError, Sentence)

from conftest import make_corpus


class TestSentence:
    def test_empty_tokens_rejected(self):
        with pytest.raises(IntegrityError, match="non-empty"):
            Sentence("s", "d", 0, (), "labor", 1990)

    def test_label_range(self):
        with pytest.raises(IntegrityError, match="outside 1..7"):
            Sentence("s", "d", 0, ("a",), "labor", 1990, label=8)
        with pytest.raises(IntegrityError):
            Sentence("s", "d", 0, ("a",), "labor", 1990, label=0)

    def test_theme_range(self):
        with pytest.raises(IntegrityError, match="policy_theme"):
            Sentence("s", "d", 0, ("a",), "labor", 1990, policy_theme=58)

    def test_with_tokens_replaces_only_tokens(self):
        s = Sentence("s", "d", 0, ("a", "b"), "labor", 1990, label=3)
        t = s.with_tokens(["b"])
        assert t.tokens == ("b",)
        assert (t.id, t.label, t.doc_id) == (s.id, s.label, s.doc_id)


class TestCorpus:
    def test_duplicate_position_rejected(self):
        a = Sentence("s1", "d", 0, ("a",), "labor", 1990)
        b = Sentence("s2", "d", 0, ("b",), "labor", 1990)
        with pytest.raises(IntegrityError, match="duplicate"):
            Corpus((a, b))

    def test_documents_ordered_by_index(self):
        c = make_corpus(n=12, doc_size=4)
        for members in c.documents.values():
            assert [s.index_in_doc for s in members] == sorted(
                s.index_in_doc for s in members)

    def test_round_trip(self, tmp_path, small_corpus):
        path = tmp_path / "c.jsonl"
        cm.write_corpus(small_corpus, path)
        assert cm.load_corpus(path) == small_corpus

    def test_parse_error_carries_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = json.dumps(Sentence("s", "d", 0, ("a",), "p", 1990).to_record())
        path.write_text(good + "\n{not json\n")
        with pytest.raises(ParseError, match="line 2"):
            cm.load_corpus(path)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        rec = Sentence("s", "d", 0, ("a",), "p", 1990).to_record()
        del rec["party"]
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ParseError, match="party"):
            cm.load_corpus(path)

    def test_strip_labels(self, small_corpus):
        stripped = cm.strip_labels(small_corpus)
        assert all(s.label is None for s in stripped.sentences)
        assert len(stripped) == len(small_corpus)


class TestSplit:
    @given(seed=st.integers(0, 2**16), frac=st.floats(0.1, 0.9),
           by_doc=st.booleans())
    @settings(max_examples=40, deadline=None)
    def test_split_is_a_partition(self, seed, frac, by_doc):
        corpus = make_corpus(n=30, doc_size=5)
        tr, te = cm.split(corpus, frac, seed, by_document=by_doc)
        ids = sorted(s.id for s in tr.sentences) + sorted(s.id for s in te.sentences)
        assert sorted(ids) == sorted(s.id for s in corpus.sentences)

    def test_document_split_keeps_documents_whole(self):
        corpus = make_corpus(n=30, doc_size=5)
        tr, te = cm.split(corpus, 0.6, 3, by_document=True)
        assert {s.doc_id for s in tr.sentences}.isdisjoint(
            {s.doc_id for s in te.sentences})

    def test_bad_fraction(self, small_corpus):
        with pytest.raises(ValueError):
            cm.split(small_corpus, 1.0, 0)


class TestReleasedMarginals:
    """Frozen statistics of the released annotation effort."""

    def test_total_label_count(self):
        assert sum(CLASS_COUNTS) == 12185

    def test_extreme_class_fractions(self):
        assert CLASS_COUNTS[0] == 8165
        assert CLASS_COUNTS[6] == 973
        assert CLASS_PROBS[0] == pytest.approx(0.6700, abs=1e-4)
        assert CLASS_PROBS[6] == pytest.approx(0.0799, abs=1e-4)


class TestSynthCorpus:
    def test_marginals_match_target(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        corpus = cm.synth_corpus(seed=11, n=10000)
        hist = cm.class_histogram(corpus)["counts"]
        observed = np.array([hist[k] for k in range(1, NUM_CLASSES + 1)])
        expected = np.array(CLASS_PROBS) * len(corpus)
        stat, p = scipy_stats.chisquare(observed, expected)
        assert p > 0.001, f"chi-square p={p}"

    def test_class_one_fraction(self):
        corpus = cm.synth_corpus(seed=5, n=10000)
        hist = cm.class_histogram(corpus)["counts"]
        assert hist[1] / len(corpus) == pytest.approx(0.67, abs=0.02)

    def test_length_gradient(self):
        corpus = cm.synth_corpus(seed=7, n=10000)
        by_label = {1: [], 7: []}
        for s in corpus.sentences:
            if s.label in by_label:
                by_label[s.label].append(len(s.tokens))
        assert np.mean(by_label[7]) > np.mean(by_label[1])

    def test_deterministic(self):
        a = cm.synth_corpus(seed=3, n=200)
        b = cm.synth_corpus(seed=3, n=200)
        assert a == b

    def test_autocorr_keeps_marginals_and_adds_stickiness(self):
        iid = cm.synth_corpus(seed=13, n=8000)
        sticky = cm.synth_corpus(seed=13, n=8000, label_autocorr=0.6)

        def agreement(corpus):
            agree = total = 0
            for doc in corpus.documents.values():
                for a, b in zip(doc, doc[1:]):
                    agree += a.label == b.label
                    total += 1
            return agree / total

        assert agreement(sticky) > agreement(iid) + 0.1
        hist = cm.class_histogram(sticky)["counts"]
        assert hist[1] / 8000 == pytest.approx(CLASS_PROBS[0], abs=0.03)

    def test_theme_count_controls_distinct_themes(self):
        corpus = cm.synth_corpus(seed=1, n=300, theme_count=5)
        themes = {s.policy_theme for s in corpus.sentences}
        assert themes <= set(range(1, 6)) and len(themes) == 5
