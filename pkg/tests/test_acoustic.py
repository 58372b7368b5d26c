import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from melstyle.acoustic import (AcousticModel, FeatureStats, PhonemeSequence,
                               quantize)
from melstyle.errors import DataError
from melstyle.nn import Tensor
from melstyle.nn import autograd as ag
from melstyle.nn import grad_check
from melstyle.nn.gradcheck import trainable_params

STATS = FeatureStats(pitch_mean=200.0, pitch_std=50.0, energy_mean=1.0,
                     energy_std=0.3, energy_min=0.2, energy_max=2.0)


def model(seed=0, mel_bins=6, d_model=8, bins=8):
    return AcousticModel(phoneme_vocab=6, mel_bins=mel_bins, d_model=d_model,
                         rng=np.random.default_rng(seed), encoder_layers=1,
                         decoder_layers=1, heads=2, d_ff=12, variance_hidden=6,
                         variance_bins=bins, stats=STATS)


def styles_for(n_subwords, d=8, seed=1, scale=0.1):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(d) * scale, rng.standard_normal(d) * scale,
            rng.standard_normal((n_subwords, d)) * scale)


class TestReplicateStyles:
    def test_sum_and_replication(self):
        m = model()  # replicate_styles is width-agnostic array arithmetic
        ph = PhonemeSequence(ids=[0, 1, 2], subword_of=[0, 0, 1])
        out = m.replicate_styles((np.array([1.0]), np.array([2.0]),
                                  np.array([[3.0], [5.0]])), ph)
        assert np.allclose(out.data, [[6.0], [6.0], [8.0]])

    def test_zero_styles_zero_matrix(self):
        m = model()
        ph = PhonemeSequence(ids=[0, 1], subword_of=[0, 1])
        out = m.replicate_styles((np.zeros(8), np.zeros(8), np.zeros((2, 8))), ph)
        assert np.all(out.data == 0.0)

    def test_phoneme_count_preserved(self):
        m = model()
        for alignment in ([0, 0, 0, 1], [0, 1, 1, 1], [0, 0, 1, 1]):
            ph = PhonemeSequence(ids=[0] * 4, subword_of=alignment)
            assert m.replicate_styles(styles_for(2), ph).shape == (4, 8)

    def test_subword_index_out_of_range(self):
        m = model()
        ph = PhonemeSequence(ids=[0, 1], subword_of=[0, 1])
        with pytest.raises(DataError, match="subword"):
            m.replicate_styles(styles_for(1), ph)

    def test_linear_in_each_level(self):
        """Additivity and homogeneity in S_g, S_s and S_w separately."""
        m = model()
        ph = PhonemeSequence(ids=[0, 1, 2], subword_of=[0, 1, 1])
        rng = np.random.default_rng(5)
        base = styles_for(2, seed=6)
        for slot in range(3):
            delta = [np.zeros_like(np.asarray(x)) for x in base]
            delta[slot] = rng.standard_normal(np.asarray(base[slot]).shape)
            combined = [b + d for b, d in zip(base, delta)]
            lhs = m.replicate_styles(tuple(combined), ph).data
            rhs = (m.replicate_styles(tuple(base), ph).data
                   + m.replicate_styles(tuple(delta), ph).data)
            assert np.allclose(lhs, rhs, atol=1e-12)
            scaled = [np.asarray(b) * (2.0 if i == slot else 0.0)
                      for i, b in enumerate(base)]
            half = [np.asarray(b) * (1.0 if i == slot else 0.0)
                    for i, b in enumerate(base)]
            assert np.allclose(m.replicate_styles(tuple(scaled), ph).data,
                               2 * m.replicate_styles(tuple(half), ph).data,
                               atol=1e-12)


class TestEncodePhonemes:
    def test_shape_and_determinism(self):
        m = model()
        out = m.encode_phonemes(np.array([0, 3, 5]))
        assert out.shape == (3, 8)
        again = model().encode_phonemes(np.array([0, 3, 5]))
        assert np.array_equal(out.data, again.data)

    def test_position_sensitive(self):
        m = model()
        a = m.encode_phonemes(np.array([1, 2, 3]))
        b = m.encode_phonemes(np.array([3, 2, 1]))
        assert not np.allclose(a.data[1], b.data[1])  # same id, new neighbours

    def test_unknown_id(self):
        with pytest.raises(ValueError, match="range"):
            model().encode_phonemes(np.array([17]))


class TestVarianceAdaptor:
    def test_quantize_boundaries(self):
        for bins in (8, 64):
            assert quantize(np.array([0.0]), 0.0, 600.0, bins)[0] == 0
            assert quantize(np.array([600.0]), 0.0, 600.0, bins)[0] == bins - 1
            assert quantize(np.array([-5.0]), 0.0, 600.0, bins)[0] == 0
            assert quantize(np.array([700.0]), 0.0, 600.0, bins)[0] == bins - 1

    def test_teacher_forcing_uses_target_bins_but_still_predicts(self):
        m = model()
        hidden = Tensor(np.random.default_rng(3).standard_normal((3, 8)))
        targets = {"pitch_hz": np.array([150.0, 300.0, 0.0]),
                   "energy": np.array([0.5, 1.5, 1.0])}
        forced_hidden, forced = m.variance_adapt(hidden, targets)
        free_hidden, free = m.variance_adapt(hidden, None)
        # predictions identical in both modes (same input hidden);
        # the injected embeddings differ because the bins differ
        assert np.array_equal(forced.pitch_norm.data, free.pitch_norm.data)
        assert not np.array_equal(forced_hidden.data, free_hidden.data)
        assert forced.log_duration.shape == (3,)

    def test_pitch_grad_check(self):
        m = model()
        hidden = Tensor(np.random.default_rng(4).standard_normal((3, 8)))

        def loss():
            _, var = m.variance_adapt(hidden, None)
            return ag.mse(var.pitch_norm, np.array([0.2, -0.3, 0.5]))

        params = {n: p for n, p in m.pitch_net.named_params()}
        report = grad_check(loss, params)
        assert report.passed, report.max_rel_error


class TestLengthRegulator:
    def test_repeats_rows_in_order(self):
        m = model(d_model=2)
        hidden = Tensor(np.array([[1.0, 1.0], [2.0, 2.0]]))
        out = m.length_regulate(hidden, np.array([2, 3]))
        assert np.allclose(out.data[:, 0], [1, 1, 2, 2, 2])

    def test_zero_duration_phoneme_absent(self):
        m = model()
        hidden = Tensor(np.array([[1.0], [2.0], [3.0]]))
        out = m.length_regulate(hidden, np.array([2, 0, 3]))
        assert np.allclose(out.data.reshape(-1), [1, 1, 3, 3, 3])

    def test_all_ones_is_identity(self):
        m = model()
        hidden = Tensor(np.random.default_rng(5).standard_normal((4, 8)))
        out = m.length_regulate(hidden, np.ones(4, dtype=int))
        assert np.array_equal(out.data, hidden.data)

    def test_all_zero_durations_error(self):
        with pytest.raises(DataError, match="zero"):
            model().length_regulate(Tensor(np.zeros((2, 8))), np.zeros(2, int))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=1, max_size=8))
    def test_row_count_equals_duration_sum(self, durations):
        m = model()
        if sum(durations) == 0:
            return
        hidden = Tensor(np.zeros((len(durations), 8)))
        out = m.length_regulate(hidden, np.array(durations))
        assert out.shape == (sum(durations), 8)


class TestDecodeAndSynthesize:
    def test_decoder_preserves_frame_count(self):
        m = model()
        for frames in (1, 5, 17):
            out = m.decode_mel(Tensor(np.zeros((frames, 8))))
            assert out.shape == (frames, 6)

    def test_zero_hidden_zero_weights_zero_mel(self):
        m = model()
        for _, p in m.named_params():
            if not p.is_buffer:
                p.data = np.zeros_like(p.data)
        out = m.decode_mel(Tensor(np.zeros((4, 8))))
        assert np.all(out.data == 0.0)

    def test_teacher_forced_frames_match_ground_truth(self):
        m = model()
        ph = PhonemeSequence(ids=[0, 1, 2], subword_of=[0, 0, 1])
        targets = {"durations": np.array([2, 4, 1]),
                   "pitch_hz": np.array([200.0, 220.0, 0.0]),
                   "energy": np.array([1.0, 1.2, 0.9])}
        pred, _ = m.synthesize(ph, styles_for(2), targets=targets)
        assert pred.frames == 7
        assert np.array_equal(pred.durations_rounded, targets["durations"])

    def test_free_running_duration_rule(self):
        """log-durations of ln(3) everywhere give 2 frames per phoneme."""
        m = model()
        ph = PhonemeSequence(ids=[0, 1, 2], subword_of=[0, 1, 1])
        hidden = m.encode_phonemes(ph.ids)
        _, var = m.variance_adapt(hidden, None)
        var.log_duration.data[:] = np.log(3.0)
        assert np.array_equal(var.round_durations(), [2, 2, 2])

    def test_style_sensitivity(self):
        m = model()
        ph = PhonemeSequence(ids=[0, 1, 2], subword_of=[0, 0, 1])
        targets = {"durations": np.array([2, 2, 2]),
                   "pitch_hz": np.array([200.0, 210.0, 190.0]),
                   "energy": np.array([1.0, 1.0, 1.0])}
        s1 = styles_for(2, seed=8, scale=0.5)
        s2 = (s1[0] + 0.5, s1[1], s1[2])
        a, _ = m.synthesize(ph, s1, targets=targets)
        b, _ = m.synthesize(ph, s2, targets=targets)
        assert not np.allclose(a.mel.data, b.mel.data)

    def test_end_to_end_grad_check_small(self):
        """Mel MSE through the whole acoustic stack on a 3-phoneme toy."""
        from melstyle.training import acoustic_loss
        m = model()
        ph = PhonemeSequence(ids=[0, 2, 4], subword_of=[0, 0, 1])
        styles = styles_for(2, seed=9)
        rng = np.random.default_rng(10)
        targets = {"durations": np.array([2, 1, 2]),
                   "pitch_hz": np.array([220.0, 0.0, 240.0]),
                   "energy": np.array([1.0, 0.8, 1.3]),
                   "mel": rng.standard_normal((5, 6)),
                   "pitch_norm": np.array([0.4, -4.0, 0.8]),
                   "energy_norm": np.array([0.0, -0.6, 1.0]),
                   "log_duration": np.log(np.array([2, 1, 2]) + 1.0)}

        def loss():
            pred, var = m.synthesize(ph, styles, targets=targets)
            return acoustic_loss(pred.mel, var, targets, mel_loss="mse")[0]

        report = grad_check(loss, trainable_params(m))
        assert report.passed, (report.max_rel_error, report.worst_param)


def test_phoneme_sequence_validation():
    with pytest.raises(DataError, match="non-decreasing"):
        PhonemeSequence(ids=[0, 1], subword_of=[1, 0])
    with pytest.raises(DataError, match="empty"):
        PhonemeSequence(ids=[], subword_of=[])
    seq = PhonemeSequence(ids=[0, 1, 2], subword_of=[0, 0, 1])
    assert seq.n_subwords == 2


def test_feature_stats_round_trip():
    d = STATS.to_dict()
    again = FeatureStats.from_dict(d)
    assert again == STATS
    z = STATS.norm_pitch(np.array([250.0]))
    assert STATS.denorm_pitch(z)[0] == pytest.approx(250.0)
