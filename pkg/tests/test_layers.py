import numpy as np
import numpy.testing as npt
import pytest

from hiercap import tensor as T
from hiercap.errors import DimensionError, VocabularyError
from hiercap.layers import Embedding, Linear, LstmCell, lstm_step, zero_state
from hiercap.optim import Adam
from hiercap.tensor import Tape

from gradcheck import check_gradients


def make_cell(input_dim=3, hidden_dim=4, seed=0, scale=0.5, activation="tanh"):
    return LstmCell(input_dim, hidden_dim, np.random.default_rng(seed),
                    init_scale=scale, candidate_activation=activation)


def test_lstm_zero_weights_forced_values():
    cell = make_cell(scale=0.0)
    state = zero_state(2, 4)
    z = T.constant(np.ones((2, 3)))
    out = lstm_step(cell, z, state)
    npt.assert_array_equal(out.c.data, np.zeros((2, 4)))
    npt.assert_array_equal(out.h.data, np.zeros((2, 4)))
    # with zero pre-activations the gates all sit at 0.5
    pre = T.add(T.add(T.matmul(z, cell.w_xi), T.matmul(state.h, cell.w_hi)), cell.b_i)
    npt.assert_array_equal(T.sigmoid(pre).data, np.full((2, 4), 0.5))


def test_lstm_forget_gate_saturation_conserves_cell():
    cell = make_cell(scale=0.0)
    cell.b_f.data[:] = 50.0   # forget gate pinned to 1, input path is zero
    c0 = np.linspace(-1.0, 1.0, 8).reshape(2, 4)
    state = type(zero_state(2, 4))(h=T.constant(np.zeros((2, 4))), c=T.constant(c0))
    for _ in range(5):
        state = lstm_step(cell, T.constant(np.ones((2, 3))), state)
    npt.assert_allclose(state.c.data, c0, atol=1e-9)


def test_lstm_dim_errors():
    cell = make_cell()
    with pytest.raises(DimensionError):
        lstm_step(cell, T.constant(np.ones((2, 5))), zero_state(2, 4))
    with pytest.raises(DimensionError):
        lstm_step(cell, T.constant(np.ones((2, 3))), zero_state(2, 6))


def test_lstm_deterministic():
    cell = make_cell(seed=3)
    z = T.constant(np.random.default_rng(1).normal(0, 1, (2, 3)))
    s = zero_state(2, 4)
    a = lstm_step(cell, z, s)
    b = lstm_step(cell, z, s)
    npt.assert_array_equal(a.h.data, b.h.data)


@pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
def test_lstm_gradcheck(activation):
    cell = make_cell(seed=5, activation=activation)
    z_data = np.random.default_rng(2).normal(0, 0.8, (2, 3))

    def loss_fn():
        state = zero_state(2, 4)
        state = cell.step(T.constant(z_data), state)
        state = cell.step(T.constant(z_data * 0.5), state)
        return T.total(state.h)

    check_gradients(loss_fn, cell.parameters("cell"))


def test_embedding_lookup_and_grads():
    emb = Embedding(5, 4, np.random.default_rng(0))
    row0 = emb.lookup([0])
    npt.assert_array_equal(row0.data[0], emb.table.data[0])
    with pytest.raises(VocabularyError):
        emb.lookup([5])

    with Tape() as tape:
        loss = T.total(emb.lookup([2, 2]))
    tape.backward(loss)
    expected = np.zeros((5, 4))
    expected[2] = 2.0
    npt.assert_array_equal(emb.table.grad, expected)


def test_embedding_one_hot_equivalence():
    emb = Embedding(5, 4, np.random.default_rng(7))
    ids = [3, 0, 4]
    onehot = np.zeros((3, 5))
    onehot[np.arange(3), ids] = 1.0
    via_matmul = T.matmul(T.constant(onehot), emb.table)
    npt.assert_array_equal(emb.lookup(ids).data, via_matmul.data)


def test_linear_identity_and_bias():
    lin = Linear(3, 3, np.random.default_rng(0))
    lin.w.data = np.eye(3)
    lin.b.data = np.zeros(3)
    x = T.constant(np.arange(6.0).reshape(2, 3))
    npt.assert_array_equal(lin(x).data, x.data)
    lin.b.data = np.array([1.0, 2.0, 3.0])
    npt.assert_array_equal(lin(T.constant(np.zeros((2, 3)))).data,
                           np.tile([1.0, 2.0, 3.0], (2, 1)))


def test_linear_decode_shape():
    lin = Linear(1024, 37, np.random.default_rng(0))
    out = lin(T.constant(np.zeros((4, 1024))))
    assert out.shape == (4, 37)


def test_adam_zero_grad_is_noop():
    p = T.parameter(np.ones(3))
    opt = Adam([("p", p)], lr=0.1)
    p.grad = np.zeros(3)
    before = p.data.copy()
    opt.step()
    npt.assert_array_equal(p.data, before)


def test_adam_descends_quadratic():
    p = T.parameter(np.array([5.0, -3.0]))
    opt = Adam([("p", p)], lr=0.1)
    for _ in range(400):
        p.grad = 2.0 * p.data
        opt.step()
    assert np.abs(p.data).max() < 1e-2
