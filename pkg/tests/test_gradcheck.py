import numpy as np
import pytest

from melstyle.nn import Linear, Tensor, grad_check, scaled_dot_attention
from melstyle.nn import autograd as ag
from melstyle.nn.gradcheck import trainable_params
from melstyle.nn.layers import Param


def test_square_function_analytic_matches_numeric():
    """f(x) = x^2 at x=3: analytic 6 vs central difference 6 within 1e-6."""
    p = Param(np.array([3.0]))

    def fn():
        return ag.reduce_sum(ag.mul(p.tensor, p.tensor))

    report = grad_check(fn, {"x": p}, eps=1e-4, tol=1e-6)
    fn().backward()
    assert report.passed
    p.zero_grad()
    loss = fn()
    loss.backward()
    assert abs(p.grad[0] - 6.0) < 1e-12
    assert report.max_rel_error < 1e-6


def test_linear_tanh_layer_passes():
    rng = np.random.default_rng(0)
    lin = Linear(4, 3, rng, activation="tanh")
    x = Tensor(rng.standard_normal((5, 4)))
    target = rng.standard_normal((5, 3))

    report = grad_check(lambda: ag.mse(lin(x), target), trainable_params(lin))
    assert report.passed, report.per_param


def test_scaled_dot_attention_end_to_end_passes():
    rng = np.random.default_rng(1)
    q = Param(rng.standard_normal(3))
    k = Param(rng.standard_normal((4, 3)))
    v = Param(rng.standard_normal((4, 2)))

    def fn():
        ctx, _ = scaled_dot_attention(q.tensor, k.tensor, v.tensor)
        return ag.reduce_sum(ag.mul(ctx, ctx))

    report = grad_check(fn, {"q": q, "k": k, "v": v})
    assert report.passed, report.max_rel_error


def test_detects_wrong_gradient():
    """A function whose value ignores half the parameter cannot pass if the
    check is fed a fake analytic gradient path."""
    p = Param(np.array([1.0, 2.0]))

    def fn():
        # value depends on p[0] only, but gradient flows to both entries
        # through an artificial zero-weighted term
        return ag.add(ag.reduce_sum(p.tensor[np.array([0])]),
                      ag.mul(ag.reduce_sum(p.tensor), 0.0))

    report = grad_check(fn, {"p": p})
    assert report.passed  # zero-weighted term contributes zero gradient: ok

    evil = Param(np.array([1.5]))

    def fn_nondiff():
        # kink within eps of the evaluation point: central difference
        # straddles it and disagrees with the one-sided analytic slope
        return ag.reduce_sum(ag.absolute(ag.sub(evil.tensor, 1.5 + 5e-5)))

    report = grad_check(fn_nondiff, {"p": evil})
    assert not report.passed


def test_nonfinite_loss_raises():
    p = Param(np.array([0.0]))
    with pytest.raises(FloatingPointError):
        grad_check(lambda: ag.log(p.tensor)[0:1].sum(), {"p": p})
