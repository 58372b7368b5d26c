import math

import numpy as np
import pytest

from melstyle.nn import (BiGRU, ConvStack, Embedding, GRU, LayerNorm, LayerSpec,
                         Linear, MultiHeadAttention, Tensor, scaled_dot_attention)
from melstyle.nn import autograd as ag
from melstyle.nn.layers import Param, orthogonal


def rng():
    return np.random.default_rng(42)


class TestLinear:
    def test_identity_weights_pass_input_through(self):
        lin = Linear(3, 3, rng())
        lin.weight.data = np.eye(3)
        lin.bias.data = np.zeros(3)
        x = np.array([[0.3, -1.0, 2.0]])
        assert np.allclose(lin(Tensor(x)).data, x)

    def test_zero_weights_tanh_of_bias(self):
        lin = Linear(4, 2, rng(), activation="tanh")
        lin.weight.data = np.zeros((4, 2))
        lin.bias.data = np.array([0.5, -1.0])
        out = lin(Tensor(np.random.default_rng(0).standard_normal((6, 4))))
        assert np.allclose(out.data, np.tanh([0.5, -1.0]))

    def test_random_case_against_dot_product(self):
        """Independent oracle: explicit per-element dot products."""
        r = rng()
        lin = Linear(3, 4, r)
        x = r.standard_normal((5, 3))
        out = lin(Tensor(x)).data
        for i in range(5):
            for j in range(4):
                expected = sum(x[i, k] * lin.weight.data[k, j] for k in range(3))
                expected += lin.bias.data[j]
                assert out[i, j] == pytest.approx(expected, abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="trailing dim"):
            Linear(3, 2, rng())(Tensor(np.zeros((2, 5))))


class TestScaledDotAttention:
    def test_single_key(self):
        q = Tensor(np.array([1.0, 2.0]))
        k = Tensor(np.array([[3.0, 4.0]]))
        v = Tensor(np.array([[5.0, 6.0, 7.0]]))
        ctx, w = scaled_dot_attention(q, k, v)
        assert np.allclose(w.data, [1.0])
        assert np.allclose(ctx.data, [5.0, 6.0, 7.0])

    def test_identical_keys_give_uniform_weights(self):
        q = Tensor(np.array([0.5, -0.5]))
        k = Tensor(np.tile([1.0, 2.0], (4, 1)))
        _, w = scaled_dot_attention(q, k, k)
        assert np.allclose(w.data, 0.25)

    def test_closed_form_two_keys(self):
        """Logits q.k/sqrt(d) of [0, ln 3] give weights [0.25, 0.75]."""
        d = 2
        q = Tensor(np.array([1.0, 0.0]))
        keys = np.array([[0.0, 5.0], [math.log(3.0) * math.sqrt(d), 1.0]])
        _, w = scaled_dot_attention(q, Tensor(keys), Tensor(keys))
        assert np.allclose(w.data, [0.25, 0.75], atol=1e-12)

    def test_empty_keys_error(self):
        with pytest.raises(ValueError, match="at least one"):
            scaled_dot_attention(Tensor(np.zeros(2)), Tensor(np.zeros((0, 2))),
                                 Tensor(np.zeros((0, 2))))


class TestGRU:
    def test_zero_weights_zero_init_gives_zero_state(self):
        gru = GRU(2, 3, rng())
        for p in (gru.w_input, gru.w_hidden, gru.b_input, gru.b_hidden):
            p.data = np.zeros_like(p.data)
        out = gru(Tensor(np.array([[1.0, -2.0]])))
        assert np.allclose(out.data, 0.0)

    def test_bigru_output_width(self):
        bg = BiGRU(3, 4, rng())
        for t in (1, 2, 7):
            out = bg(Tensor(np.random.default_rng(t).standard_normal((t, 3))))
            assert out.shape == (t, 8)

    def test_two_step_scalar_against_hand_recurrence(self):
        """Scalar oracle: the same gate equations in pure python floats."""
        gru = GRU(1, 1, rng())
        xs = np.array([[0.7], [-0.4]])
        out = gru(Tensor(xs)).data

        w_ir, w_iz, w_in = gru.w_input.data[0]
        w_hr, w_hz, w_hn = gru.w_hidden.data[0]

        def sigmoid(v):
            return 1.0 / (1.0 + math.exp(-v))

        h = 0.0
        states = []
        for x in (0.7, -0.4):
            r = sigmoid(x * w_ir + h * w_hr)
            z = sigmoid(x * w_iz + h * w_hz)
            n = math.tanh(x * w_in + r * (h * w_hn))
            h = (1 - z) * n + z * h
            states.append(h)
        assert np.allclose(out.reshape(-1), states, atol=1e-12)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            GRU(2, 2, rng())(Tensor(np.zeros((0, 2))))

    def test_reverse_pass_sees_future(self):
        gru = GRU(1, 2, rng())
        xs = np.array([[1.0], [2.0], [3.0]])
        fwd = gru(Tensor(xs)).data
        bwd = gru(Tensor(xs), reverse=True).data
        # position 0: forward state has no history, backward one carries 3,2
        assert not np.allclose(fwd[0], bwd[0])


class TestConvStack:
    def test_six_stride2_layers_reduce_64_frames_to_1(self):
        cs = ConvStack(16, (2,) * 6, rng())
        out = cs(Tensor(np.random.default_rng(0).standard_normal((64, 16))))
        assert out.shape[0] == 1
        assert cs.output_frames(64) == 1

    def test_zero_input_zero_bias_gives_zero(self):
        cs = ConvStack(8, (2, 3), rng())
        out = cs(Tensor(np.zeros((10, 8))))
        assert np.allclose(out.data, 0.0)

    def test_single_frame_still_produces_one_frame(self):
        cs = ConvStack(8, (2,) * 6, rng())
        assert cs(Tensor(np.zeros((1, 8)))).shape[0] == 1

    def test_batched_matches_single(self):
        cs = ConvStack(6, (2, 2), rng())
        r = np.random.default_rng(1)
        stack = r.standard_normal((3, 9, 6))
        batched = cs.batched(stack).data
        for i in range(3):
            single = cs(Tensor(stack[i])).data
            assert np.allclose(batched[i], single, atol=1e-12)


class TestMultiHeadAttention:
    def test_weights_are_simplex_per_head(self):
        r = rng()
        mha = MultiHeadAttention(4, 4, 8, 2, r, out_proj=False)
        q = Tensor(r.standard_normal((3, 4)))
        k = Tensor(r.standard_normal((5, 4)))
        out, w = mha(q, k, k)
        assert out.shape == (3, 8)
        assert w.shape == (2, 3, 5)
        assert np.allclose(w.data.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(w.data >= 0)

    def test_head_count_must_divide_width(self):
        with pytest.raises(ValueError, match="divide"):
            MultiHeadAttention(4, 4, 9, 2, rng())


class TestFreezingAndDeterminism:
    def test_frozen_param_untouched_by_optimizer(self):
        from melstyle.training import Adam
        lin = Linear(3, 3, rng())
        lin.weight.trainable = False
        before = np.array(lin.weight.data)
        loss = ag.mse(lin(Tensor(np.ones((2, 3)))), np.zeros((2, 3)))
        lin.zero_grad()
        loss.backward()
        Adam(lin.named_params()).step(0.1)
        assert np.array_equal(lin.weight.data, before)  # bit-identical
        assert not np.array_equal(lin.bias.data, np.zeros(3))

    def test_freezing_preserves_values(self):
        lin = Linear(2, 2, rng())
        snapshot = np.array(lin.weight.data)
        lin.weight.trainable = False
        lin.weight.trainable = True
        assert np.array_equal(lin.weight.data, snapshot)

    def test_same_seed_identical_init_and_forward(self):
        x = Tensor(np.linspace(-1, 1, 12).reshape(4, 3))
        a = Linear(3, 5, np.random.default_rng(9), activation="tanh")
        b = Linear(3, 5, np.random.default_rng(9), activation="tanh")
        assert np.array_equal(a.weight.data, b.weight.data)
        assert np.array_equal(a(x).data, b(x).data)

    def test_buffers_never_trainable(self):
        cs = ConvStack(8, (2,), rng())
        cs.set_trainable(True)
        norm = cs.norms[0]
        assert not norm.running_mean.trainable
        with pytest.raises(ValueError):
            norm.running_mean.trainable = True


class TestMisc:
    def test_embedding_unknown_id(self):
        emb = Embedding(5, 3, rng())
        with pytest.raises(ValueError, match="range"):
            emb(np.array([5]))

    def test_layer_spec_validation(self):
        LayerSpec("gru", {"d_in": 2, "d_h": 3}).validate()
        with pytest.raises(ValueError, match="unknown layer kind"):
            LayerSpec("lstm").validate()
        with pytest.raises(ValueError, match="positive"):
            LayerSpec("linear", {"d_in": 0}).validate()
        with pytest.raises(ValueError, match="divide"):
            LayerSpec("multihead_attention", {"width": 10, "heads": 4}).validate()

    def test_orthogonal_init_is_orthogonal(self):
        q = orthogonal(np.random.default_rng(0), 6, 6)
        assert np.allclose(q @ q.T, np.eye(6), atol=1e-10)

    def test_layer_norm_normalizes_rows(self):
        ln = LayerNorm(4)
        x = np.random.default_rng(2).standard_normal((3, 4)) * 5 + 2
        out = ln(Tensor(x)).data
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        assert np.allclose(out.std(axis=-1), 1.0, atol=1e-3)

    def test_running_stats_update_only_when_training_and_trainable(self):
        cs = ConvStack(4, (2,), rng())
        norm = cs.norms[0]
        x = Tensor(np.random.default_rng(3).standard_normal((6, 4)))
        before = np.array(norm.running_mean.data)
        cs(x)  # eval mode: no update
        assert np.array_equal(norm.running_mean.data, before)
        cs.set_training(True)
        cs.set_trainable(False)
        cs(x)  # frozen: still no update
        assert np.array_equal(norm.running_mean.data, before)
        cs.set_trainable(True)
        cs(x)
        assert not np.array_equal(norm.running_mean.data, before)
