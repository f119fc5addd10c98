import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiercap import tensor as T
from hiercap.errors import ContractError, DimensionError, NumericError
from hiercap.tensor import Tape, Tensor

from gradcheck import check_gradients


def test_tensor_invariants():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.shape == (2, 2)
    assert t.size == 4
    assert t.grad is None and not t.requires_grad
    with pytest.raises(NumericError):
        Tensor([1.0, float("nan")])
    with pytest.raises(NumericError):
        Tensor([float("inf")])


def test_matmul_identity_cases():
    a = T.constant([[1.0, 2.0], [3.0, 4.0]])
    eye = T.constant(np.eye(2))
    npt.assert_array_equal(T.matmul(a, eye).data, a.data)
    b = T.constant([[5.0], [7.0]])
    npt.assert_array_equal(T.matmul(eye, b).data, b.data)


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        T.matmul(T.constant([[1.0, 2.0]]), T.constant([[1.0, 2.0]]))


def test_matmul_analytic_gradient():
    a = T.parameter([[1.0, 1.0]])
    b = T.constant([[2.0], [3.0]])
    with Tape() as tape:
        loss = T.total(T.matmul(a, b))
    tape.backward(loss)
    npt.assert_array_equal(a.grad, [[2.0, 3.0]])


def test_elementwise_values():
    assert T.sigmoid(T.constant([0.0])).data[0] == 0.5
    assert T.tanh(T.constant([0.0])).data[0] == 0.0
    npt.assert_array_equal(T.mul(T.constant([1.0, 2.0]), T.constant([3.0, 4.0])).data,
                           [3.0, 8.0])


def test_elementwise_broadcast_rules():
    m = T.constant(np.ones((3, 4)))
    row = T.constant(np.arange(4.0))
    col = T.constant(np.ones((3, 1)) * 2)
    npt.assert_array_equal(T.add(m, row).data, 1.0 + np.tile(np.arange(4.0), (3, 1)))
    npt.assert_array_equal(T.mul(m, col).data, np.full((3, 4), 2.0))
    with pytest.raises(DimensionError):
        T.add(m, T.constant(np.ones((4, 3))))
    with pytest.raises(DimensionError):
        T.add(m, T.constant(np.ones(3)))


def test_broadcast_gradients():
    w = T.parameter(np.arange(4.0))

    def loss_fn():
        m = T.constant(np.arange(12.0).reshape(3, 4))
        return T.total(T.mul(m, w))

    check_gradients(loss_fn, [("w", w)])


def test_softmax_basics():
    npt.assert_allclose(T.softmax(T.constant([0.0, 0.0])).data, [0.5, 0.5])
    huge = T.softmax(T.constant([1000.0, 1000.0, 1000.0]))
    npt.assert_allclose(huge.data, [1 / 3] * 3)
    hand = T.softmax(T.constant([0.0, math.log(3.0)]))
    npt.assert_allclose(hand.data, [0.25, 0.75], atol=1e-15)
    with pytest.raises(DimensionError):
        T.softmax(T.constant(np.zeros((2, 0))))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=16))
def test_softmax_sums_to_one_and_permutes(xs):
    y = T.softmax(T.constant(xs)).data
    assert abs(y.sum() - 1.0) <= 1e-12
    assert (y > 0).all()
    perm = np.random.default_rng(0).permutation(len(xs))
    y2 = T.softmax(T.constant(np.asarray(xs)[perm])).data
    npt.assert_allclose(y2, y[perm], rtol=1e-12, atol=1e-15)


def test_concat_cases():
    c = T.concat(T.constant([1.0, 2.0]), T.constant([3.0]), axis=0)
    npt.assert_array_equal(c.data, [1.0, 2.0, 3.0])
    a = T.constant(np.zeros((2, 512)))
    b = T.constant(np.zeros((2, 512)))
    assert T.concat(a, b, axis=1).shape == (2, 1024)
    with pytest.raises(DimensionError):
        T.concat(a, b, axis=2)
    with pytest.raises(DimensionError):
        T.concat(a, T.constant(np.zeros((3, 512))), axis=1)


def test_concat_backward_routes_slices():
    a = T.parameter(np.ones((2, 2)))
    b = T.parameter(np.ones((2, 3)))
    with Tape() as tape:
        out = T.concat(a, b, axis=1)
        loss = T.total(T.mul(out, T.constant(np.arange(10.0).reshape(2, 5))))
    tape.backward(loss)
    npt.assert_array_equal(a.grad, [[0.0, 1.0], [5.0, 6.0]])
    npt.assert_array_equal(b.grad, [[2.0, 3.0, 4.0], [7.0, 8.0, 9.0]])


def test_backward_simple_cases():
    x = T.parameter([1.0, 2.0])
    with Tape() as tape:
        loss = T.total(T.mul(x, x))
    tape.backward(loss)
    npt.assert_array_equal(x.grad, [2.0, 4.0])

    w = T.parameter([0.0])
    with Tape() as tape:
        loss = T.total(T.sigmoid(w))
    tape.backward(loss)
    npt.assert_allclose(w.grad, [0.25])


def test_backward_contract_errors():
    x = T.parameter([1.0, 2.0])
    with Tape() as tape:
        y = T.mul(x, x)
        loss = T.total(y)
    with pytest.raises(ContractError):
        tape.backward(y)   # non-scalar
    tape.backward(loss)
    with pytest.raises(ContractError):
        tape.backward(loss)   # consumed
    with pytest.raises(ContractError):
        Tape().backward(T.parameter(np.zeros(())))   # empty tape


def test_no_grad_outside_tape_and_requires_grad_false():
    x = T.parameter([1.0])
    y = T.constant([2.0])
    out = T.mul(x, y)
    assert not out.requires_grad       # nothing recorded outside a tape
    with Tape() as tape:
        loss = T.total(T.mul(x, y))
    tape.backward(loss)
    assert y.grad is None
    npt.assert_array_equal(x.grad, [2.0])


def test_nan_poisoning_raises():
    big = T.constant([1e308])
    with pytest.raises(NumericError):
        T.mul(big, big)


def test_masked_softmax_exact_zeros():
    x = T.constant([[1.0, 5.0, 2.0], [0.0, 0.0, 0.0]])
    mask = np.array([[True, False, True], [True, True, False]])
    y = T.masked_softmax(x, mask)
    assert y.data[0, 1] == 0.0
    assert y.data[1, 2] == 0.0
    npt.assert_allclose(y.data.sum(axis=1), [1.0, 1.0])
    with pytest.raises(ContractError):
        T.masked_softmax(x, np.zeros((2, 3), dtype=bool))


def test_pick_and_gather_gradients():
    table = T.parameter(np.arange(20.0).reshape(5, 4))
    with Tape() as tape:
        rows = T.gather_rows(table, [2, 2])
        loss = T.total(rows)
    tape.backward(loss)
    expected = np.zeros((5, 4))
    expected[2] = 2.0
    npt.assert_array_equal(table.grad, expected)

    x = T.parameter(np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        loss = T.total(T.pick(x, [1, 2]))
    tape.backward(loss)
    npt.assert_array_equal(x.grad, [[0, 1, 0], [0, 0, 1]])


def test_repeat_group_roundtrip_gradients():
    x = T.parameter(np.arange(6.0).reshape(2, 3))

    def loss_fn():
        up = T.repeat_rows(x, 4)
        w = T.constant(np.arange(24.0).reshape(8, 3))
        return T.total(T.mul(T.group_sum(T.mul(up, w), 4), x))

    check_gradients(loss_fn, [("x", x)])


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=1, max_value=4), st.integers(min_value=1, max_value=4),
       st.integers(min_value=0, max_value=10_000))
def test_composed_graph_matches_finite_differences(m, n, seed):
    rng = np.random.default_rng(seed)
    a = T.parameter(rng.normal(0, 0.8, (m, n)))
    b = T.parameter(rng.normal(0, 0.8, (n, m)))
    c = T.parameter(rng.normal(0, 0.8, (1, m)))

    def loss_fn():
        h = T.tanh(T.matmul(a, b))
        s = T.sigmoid(T.add(h, c))
        z = T.log_softmax(T.matmul(s, T.exp(T.scale(a, 0.1))))
        return T.add(T.mean(T.softplus(z)), T.mean(T.mul(s, s)))

    check_gradients(loss_fn, [("a", a), ("b", b), ("c", c)])
