import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from permlm import numerics as nx
from permlm.errors import NonFiniteError, ParameterError, ShapeError
from permlm.numerics import AdamState, Tape, Tensor, adam_step, backward, lr_at_step

from conftest import central_difference

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_matmul_identity_and_hand_product():
    b = [[3.0, 4.0], [5.0, 6.0]]
    np.testing.assert_array_equal(nx.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)
    assert nx.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(nx.matmul(Tensor(a), Tensor(b)).data, ref, rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_examples():
    np.testing.assert_allclose(nx.stable_softmax(Tensor([1.0, 1.0, 1.0])).data, [1 / 3] * 3, atol=1e-15)
    out = nx.stable_softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out)) and out[0] == pytest.approx(1.0) and out[1] < 1e-300
    # 40-digit evaluation with mpmath
    expected = [0.20761092402443031123, 0.10309653377708696614, 0.68929254219848272263]
    np.testing.assert_allclose(nx.stable_softmax(Tensor([0.5, -0.2, 1.7])).data, expected, rtol=0, atol=1e-15)


def test_softmax_empty_axis():
    with pytest.raises(ShapeError):
        nx.stable_softmax(Tensor(np.zeros((2, 0))), axis=1)
    with pytest.raises(ShapeError):
        nx.stable_softmax(Tensor(np.zeros(3)), axis=2)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-1e4, 1e4)))
def test_softmax_rows_are_distributions(x):
    out = nx.stable_softmax(Tensor(x), axis=-1).data
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-15, 15)))
def test_softmax_strictly_inside_unit_interval_for_moderate_inputs(x):
    out = nx.stable_softmax(Tensor(x), axis=-1).data
    assert np.all(out > 0)
    if x.shape[-1] > 1:
        assert np.all(out < 1)


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(3)), Tensor(np.zeros(3))
    np.testing.assert_array_equal(nx.layer_norm(Tensor([[5.0, 5.0, 5.0]]), one, zero, 1e-5).data, [[0, 0, 0]])
    expected = [-1.224735685908390169, 0.0, 1.224735685908390169]  # mpmath, eps=1e-5
    np.testing.assert_allclose(nx.layer_norm(Tensor([1.0, 2.0, 3.0]), one, zero, 1e-5).data, expected, atol=1e-14)
    x = Tensor(np.random.default_rng(1).normal(size=(4, 3)))
    out = nx.layer_norm(x, zero, Tensor([7.0, 7.0, 7.0]), 1e-5).data
    np.testing.assert_array_equal(out, np.full((4, 3), 7.0))


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ParameterError):
        nx.layer_norm(Tensor([1.0, 2.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), 0.0)


def test_layer_norm_moments():
    x = np.random.default_rng(2).normal(3.0, 5.0, size=(6, 10))
    out = nx.layer_norm(Tensor(x), Tensor(np.ones(10)), Tensor(np.zeros(10)), 1e-12).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)


def test_cross_entropy_examples():
    assert nx.cross_entropy(Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert nx.cross_entropy(Tensor([[100.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-40)
    rng = np.random.default_rng(3)
    logits, targets = rng.normal(size=(3, 4)), [2, 0, 3]
    per_row = []
    for row, t in zip(logits, targets):
        z = sum(math.exp(v) for v in row)
        per_row.append(-math.log(math.exp(row[t]) / z))
    assert nx.cross_entropy(Tensor(logits), targets).item() == pytest.approx(sum(per_row) / 3, abs=1e-14)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        nx.cross_entropy(Tensor([[0.0, 0.0]]), [2])


def test_backward_linear_and_constant():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = x.sum()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    x, y = Tensor(np.ones(3), requires_grad=True), Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        (x * 0.0).sum()
        loss = y.sum()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.zeros(3))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ShapeError):
        backward(y, tape)


def test_backward_accumulates_until_zeroed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = (x * x).sum()
        backward(loss, tape)
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    assert x.grad is None


def test_no_recording_outside_tape():
    x = Tensor([1.0], requires_grad=True)
    y = x * 3.0
    assert not y.requires_grad


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_output_raises():
    with pytest.raises(NonFiniteError):
        Tensor([1e308]) * 10.0


def _check_op_gradient(fn, *shapes, seed=0):
    rng = np.random.default_rng(seed)
    inputs = [Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
    weights = rng.normal(size=fn(*inputs).shape)

    def loss_value():
        return float((fn(*inputs).data * weights).sum())

    with Tape() as tape:
        loss = (fn(*inputs) * Tensor(weights)).sum()
    backward(loss, tape)
    for t in inputs:
        num = central_difference(loss_value, t.data)
        rel = np.abs(num - t.grad) / np.maximum(np.maximum(np.abs(num), np.abs(t.grad)), 1e-8)
        assert rel.max() < 1e-4, rel.max()


@pytest.mark.parametrize(
    "fn, shapes",
    [
        (lambda a, b: nx.matmul(a, b), [(3, 4), (4, 2)]),
        (lambda a, b: nx.matmul(a, b), [(2, 3, 4), (4, 5)]),
        (lambda a, b: a + b, [(3, 4), (4,)]),
        (lambda a, b: a - b, [(2, 3), (2, 1)]),
        (lambda a, b: a * b, [(3, 4), (3, 4)]),
        (lambda a: nx.stable_softmax(a, axis=-1), [(3, 5)]),
        (lambda a: nx.stable_softmax(a, axis=0), [(3, 5)]),
        (lambda a: nx.log_softmax(a, axis=-1), [(2, 4)]),
        (lambda a, g, b: nx.layer_norm(a, g, b, 1e-5), [(4, 6), (6,), (6,)]),
        (lambda a: nx.gelu(a), [(3, 4)]),
        (lambda a: a.reshape(2, 6).swapaxes(0, 1), [(3, 4)]),
        (lambda a: nx.embedding(a, np.array([[0, 2], [2, 1]])), [(3, 4)]),
        (lambda a: nx.cross_entropy(a, [1, 0, 3]), [(3, 4)]),
        (lambda a: a.mean(), [(3, 4)]),
    ],
)
def test_op_gradients_match_finite_differences(fn, shapes):
    _check_op_gradient(fn, *shapes)


# ---------------------------------------------------------------------- Adam


def test_adam_first_step_hand_evaluation():
    state = AdamState.zeros(())
    new, state = adam_step(np.array(1.0), np.array(0.5), state, lr=0.01)
    # m_hat = 0.5, v_hat = 0.25: theta - 0.01 * 0.5 / (0.5 + 1e-8), evaluated to 20 digits
    assert float(new) == pytest.approx(0.990000000199999996, abs=1e-15)
    assert state.t == 1


def test_adam_zero_gradient_is_noop():
    params = np.array([1.0, -2.0, 3.0])
    new, _ = adam_step(params, np.zeros(3), AdamState.zeros(3), lr=0.1)
    np.testing.assert_array_equal(new, params)


def test_adam_deterministic_replay():
    rng = np.random.default_rng(4)
    params, grads = rng.normal(size=5), [rng.normal(size=5) for _ in range(2)]

    def run():
        p, s = params, AdamState.zeros(5)
        for g in grads:
            p, s = adam_step(p, g, s, 0.01)
        return p, s

    (p1, s1), (p2, s2) = run(), run()
    assert p1.tobytes() == p2.tobytes() and s1.m.tobytes() == s2.m.tobytes() and s1.t == s2.t == 2


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step(np.ones(3), np.ones(2), AdamState.zeros(3), 0.1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite))
def test_adam_zero_lr_leaves_params(params, grads):
    new, state = adam_step(params, grads, AdamState.zeros(4), lr=0.0)
    np.testing.assert_array_equal(new, params)
    assert np.all(state.v >= 0) and state.t == 1


# ------------------------------------------------------------- lr schedule


def test_lr_schedule_examples():
    assert lr_at_step(0, 100, 0.005) == 0.0
    assert lr_at_step(math.ceil(0.1 * 100), 100, 0.005) == 0.005
    # decay segment: 10 -> 100, value at 55 is halfway down
    assert lr_at_step(55, 100, 0.005) == pytest.approx(0.005 * (100 - 55) / (100 - 10), abs=1e-18)
    assert lr_at_step(100, 100, 0.005) == 0.0


def test_lr_schedule_rejects_zero_total():
    with pytest.raises(ParameterError):
        lr_at_step(0, 0, 0.005)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 500), st.floats(1e-6, 1.0))
def test_lr_schedule_shape(total, max_lr):
    values = [lr_at_step(s, total, max_lr) for s in range(total + 1)]
    assert min(values) >= 0
    assert values.count(max(values)) == 1 and max(values) == max_lr
    warmup = -(-total // 10)
    slope = max(max_lr / warmup, max_lr / max(1, total - warmup))
    assert max(abs(a - b) for a, b in zip(values, values[1:])) <= slope * (1 + 1e-9)


def test_clip_grad_norm():
    a, b = Tensor([3.0], requires_grad=True), Tensor([4.0], requires_grad=True)
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    assert nx.clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose([a.grad[0], b.grad[0]], [0.6, 0.8])
