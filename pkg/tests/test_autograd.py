import numpy as np
import pytest

from melstyle.nn import Tensor
from melstyle.nn import autograd as ag


def _numeric_grad(fn, x, eps=1e-6):
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


@pytest.mark.parametrize("op,arg_shapes", [
    (lambda a, b: ag.add(a, b), [(3, 2), (3, 2)]),
    (lambda a, b: ag.sub(a, b), [(3, 2), (2,)]),          # broadcast
    (lambda a, b: ag.mul(a, b), [(3, 2), (3, 1)]),        # broadcast
    (lambda a, b: ag.div(a, b), [(2, 2), (2, 2)]),
    (lambda a, b: ag.matmul(a, b), [(3, 4), (4, 2)]),
])
def test_binary_op_gradients(op, arg_shapes):
    rng = np.random.default_rng(0)
    arrays = [rng.standard_normal(s) + 2.0 for s in arg_shapes]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]

    def forward():
        return float(ag.reduce_sum(ag.mul(op(*[Tensor(a) for a in arrays]),
                                          weight)).data)

    weight = Tensor(rng.standard_normal(op(*tensors).shape))
    loss = ag.reduce_sum(ag.mul(op(*tensors), weight))
    loss.backward()
    for tensor, array in zip(tensors, arrays):
        numeric = _numeric_grad(forward, array)
        assert np.allclose(tensor.grad, numeric, atol=1e-6), op


@pytest.mark.parametrize("unary", [ag.exp, ag.tanh, ag.sigmoid, ag.absolute,
                                   lambda t: ag.power(t, 3.0), ag.relu])
def test_unary_op_gradients(unary):
    rng = np.random.default_rng(1)
    array = rng.standard_normal((4, 3)) + 1.5  # keep away from relu/abs kinks
    tensor = Tensor(array, requires_grad=True)
    loss = ag.reduce_sum(unary(tensor))
    loss.backward()
    numeric = _numeric_grad(lambda: float(ag.reduce_sum(unary(Tensor(array))).data),
                            array)
    assert np.allclose(tensor.grad, numeric, atol=1e-5)


def test_log_gradient():
    array = np.array([[0.5, 2.0], [3.0, 0.1]])
    tensor = Tensor(array, requires_grad=True)
    ag.reduce_sum(ag.log(tensor)).backward()
    assert np.allclose(tensor.grad, 1.0 / array)


def test_softmax_rows_simplex_and_shift_invariant():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((5, 7))
    out = ag.softmax(Tensor(logits), axis=-1)
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(out.data >= 0)
    shifted = ag.softmax(Tensor(logits + 123.456), axis=-1)
    assert np.allclose(out.data, shifted.data, atol=1e-12)
    # with dyadic logits the shift is exact arithmetic, so bit-equal output
    dyadic = rng.integers(-8, 8, (5, 7)) / 16.0
    assert np.array_equal(ag.softmax(Tensor(dyadic), axis=-1).data,
                          ag.softmax(Tensor(dyadic + 4.0), axis=-1).data)


def test_take_and_concat_gradients():
    rng = np.random.default_rng(3)
    array = rng.standard_normal((5, 3))
    tensor = Tensor(array, requires_grad=True)
    idx = np.array([0, 2, 2, 4])
    loss = ag.reduce_sum(ag.mul(tensor[idx], 2.0))
    loss.backward()
    expected = np.zeros_like(array)
    np.add.at(expected, idx, 2.0)
    assert np.array_equal(tensor.grad, expected)

    a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    ag.reduce_sum(ag.concat([a, b], axis=0)).backward()
    assert np.all(a.grad == 1.0) and np.all(b.grad == 1.0)


def test_mean_axis_gradient():
    array = np.arange(12.0).reshape(3, 4)
    tensor = Tensor(array, requires_grad=True)
    ag.reduce_sum(ag.reduce_mean(tensor, axis=0)).backward()
    assert np.allclose(tensor.grad, np.full((3, 4), 1 / 3))


def test_constant_graph_builds_no_tape():
    a = Tensor(np.ones(3))
    out = ag.add(ag.mul(a, 2.0), 1.0)
    assert out._backward is None and out._parents == ()
    assert not out.requires_grad


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ag.mul(t, 2.0).backward()


def test_grad_accumulates_across_shared_use():
    t = Tensor(np.array([2.0]), requires_grad=True)
    loss = ag.add(ag.mul(t, 3.0), ag.mul(t, t))  # 3t + t^2 -> d/dt = 3 + 2t
    ag.reduce_sum(loss).backward()
    assert np.allclose(t.grad, [7.0])


def test_conv2d_matches_direct_computation():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 2, 5, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = ag.conv2d(Tensor(x), Tensor(w), Tensor(b), (2, 2), (1, 1, 1, 1))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expect = np.zeros(out.shape)
    for n in range(2):
        for co in range(3):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    expect[n, co, i, j] = (patch * w[co]).sum() + b[co]
    assert np.allclose(out.data, expect, atol=1e-12)
