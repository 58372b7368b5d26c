import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from melstyle.corpus import (Corpus, FeatureConfig, build_context_window,
                             load_manifest, phone_level_average, subword_spans,
                             train_test_split, write_corpus)
from melstyle.errors import DataError, UnknownUtteranceError

from conftest import make_document, make_utterance


class TestManifest:
    def test_single_entry_round_trip(self, tmp_path):
        utt = make_utterance()
        manifest = write_corpus(tmp_path, [utt], FeatureConfig(mel_bins=4))
        corpus = load_manifest(manifest)
        assert len(corpus) == 1
        loaded = corpus.utterance("doc", 0)
        assert loaded.text == utt.text
        assert np.array_equal(loaded.durations, utt.durations)
        assert np.allclose(loaded.mel, utt.mel, atol=1e-6)

    def test_shape_mismatch_rejected(self, tmp_path):
        utt = make_utterance(counts=(1, 1), durations=(5, 5))
        manifest = write_corpus(tmp_path, [utt], FeatureConfig(mel_bins=4))
        # truncate the mel tensor to 9 frames on disk
        from melstyle.tensorfile import read_tensor, write_tensor
        mel_path = tmp_path / "tensors" / "doc_0000_mel.msst"
        write_tensor(mel_path, read_tensor(mel_path)[:9])
        with pytest.raises(DataError, match="frames"):
            load_manifest(manifest)

    def test_two_documents_grouped_and_sorted(self, tmp_path):
        utts = make_document("d1", 3) + make_document("d2", 2)
        manifest = write_corpus(tmp_path, utts, FeatureConfig(mel_bins=4))
        corpus = load_manifest(manifest)
        assert len(corpus.document_ids) == 2
        assert len(corpus) == 5
        assert [u.sentence_index for u in corpus.sentences("d1")] == [0, 1, 2]

    def test_duplicate_key_rejected(self):
        utts = [make_utterance(), make_utterance()]
        with pytest.raises(DataError, match="duplicate"):
            Corpus(utts, FeatureConfig(mel_bins=4))

    def test_missing_tensor_file(self, tmp_path):
        utt = make_utterance()
        manifest = write_corpus(tmp_path, [utt], FeatureConfig(mel_bins=4))
        (tmp_path / "tensors" / "doc_0000_pitch.msst").unlink()
        with pytest.raises(DataError, match="missing tensor"):
            load_manifest(manifest)


class TestContextWindow:
    def test_centered_window(self, tiny_corpus):
        window = build_context_window(tiny_corpus, "docA", 2, L=2)
        assert len(window) == 5
        assert window.current_offset == 2
        assert window.current.sentence_index == 2

    def test_clamped_at_document_start(self, tiny_corpus):
        window = build_context_window(tiny_corpus, "docA", 0, L=2)
        assert [u.sentence_index for u in window.sentences] == [0, 1, 2]
        assert window.current_offset == 0

    def test_L_zero(self, tiny_corpus):
        window = build_context_window(tiny_corpus, "docA", 3, L=0)
        assert len(window) == 1 and window.current_offset == 0

    def test_never_crosses_documents(self, tiny_corpus):
        window = build_context_window(tiny_corpus, "docB", 0, L=4)
        assert all(u.document_id == "docB" for u in window.sentences)
        assert len(window) == 2
        indices = [u.sentence_index for u in window.sentences]
        assert indices == list(range(indices[0], indices[0] + len(indices)))

    def test_unknown_utterance(self, tiny_corpus):
        with pytest.raises(UnknownUtteranceError):
            build_context_window(tiny_corpus, "docA", 99, L=1)


class TestSubwordSpans:
    def test_prefix_sums(self):
        assert subword_spans([3, 2, 4, 1], [2, 2]) == [(0, 5), (5, 10)]

    def test_singletons(self):
        assert subword_spans([2, 2, 2], [1, 1, 1]) == [(0, 2), (2, 4), (4, 6)]

    def test_zero_duration_subword_flagged_by_empty_span(self):
        spans = subword_spans([0, 0, 3], [2, 1])
        assert spans == [(0, 0), (0, 3)]
        assert spans[0][0] == spans[0][1]

    def test_count_mismatch(self):
        with pytest.raises(DataError):
            subword_spans([1, 1], [3])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 6), min_size=1, max_size=12),
           st.data())
    def test_contiguous_partition(self, durations, data):
        """Span starts equal previous ends and the last end is the total."""
        n = len(durations)
        cuts = sorted(data.draw(st.lists(
            st.integers(1, n), max_size=4, unique=True))) if n > 1 else []
        counts = np.diff([0] + cuts + [n]).tolist()
        counts = [c for c in counts if c > 0]
        spans = subword_spans(durations, counts)
        assert spans[0][0] == 0
        for (_, prev_end), (start, _) in zip(spans, spans[1:]):
            assert start == prev_end
        assert spans[-1][1] == sum(durations)


class TestPhoneLevelAverage:
    def test_plain_means(self):
        out = phone_level_average([1, 1, 4, 4, 4], [2, 3])
        assert np.allclose(out, [1.0, 4.0])

    def test_pitch_excludes_unvoiced(self):
        out = phone_level_average([0, 200, 0, 100], [2, 2], exclude_zeros=True)
        assert np.allclose(out, [200.0, 100.0])

    def test_zero_duration_yields_zero(self):
        out = phone_level_average([5, 5, 5, 5], [0, 4])
        assert np.allclose(out, [0.0, 5.0])

    def test_all_unvoiced_phoneme_yields_zero(self):
        out = phone_level_average([0, 0, 7], [2, 1], exclude_zeros=True)
        assert np.allclose(out, [0.0, 7.0])

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            phone_level_average([1, 2], [3])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(1, 5), min_size=1, max_size=6), st.integers(0, 10_000))
    def test_split_recombine_invariance(self, durations, seed):
        """Splitting a phoneme into sub-segments and recombining by
        duration-weighted mean reproduces the original average."""
        rng = np.random.default_rng(seed)
        frames = rng.standard_normal(sum(durations))
        whole = phone_level_average(frames, durations)
        split = []
        for d in durations:
            cut = int(rng.integers(0, d + 1))
            split.extend([cut, d - cut])
        parts = phone_level_average(frames, split)
        recombined = []
        for i, d in enumerate(durations):
            a, b = split[2 * i], split[2 * i + 1]
            total = a + b
            recombined.append((parts[2 * i] * a + parts[2 * i + 1] * b) / total
                              if total else 0.0)
        assert np.allclose(recombined, whole, atol=1e-12)


def test_validate_catches_each_invariant():
    good = make_utterance()
    bad = make_utterance()
    bad.durations = np.zeros(3, dtype=np.int64)
    bad.mel = bad.mel[:0]
    bad.pitch_frame = bad.pitch_frame[:0]
    bad.energy_frame = bad.energy_frame[:0]
    with pytest.raises(DataError, match="zero"):
        bad.validate()
    mismatched = make_utterance()
    mismatched.subword_phoneme_counts = (1, 1)
    with pytest.raises(DataError):
        mismatched.validate()
    assert good.frames == int(good.durations.sum())


def test_train_test_split_is_per_document_tail(tiny_corpus):
    train, test = train_test_split(tiny_corpus, holdout_per_document=1)
    assert ("docA", 4) in test and ("docB", 1) in test
    assert len(test) == 2 and len(train) == 5
    assert set(train).isdisjoint(test)
