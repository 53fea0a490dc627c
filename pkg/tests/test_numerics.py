import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coilfail.numerics import (
    AdamState,
    GraphConsumedError,
    NonFiniteError,
    Tensor,
    adam_step,
    check_gradients,
    no_grad,
)
from coilfail.numerics.gradcheck import numeric_grad
from coilfail.numerics import functional as F

SEEDS = range(20)


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# ---------------------------------------------------------------- backward
def test_grad_of_sum_is_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_grad_of_sum_of_squares():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 4, 6])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_backward_twice_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(GraphConsumedError):
        loss.backward()


def test_non_participating_grad_untouched():
    x = Tensor([1.0], requires_grad=True)
    y = Tensor([5.0], requires_grad=True)
    y.grad = np.array([7.0])
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(y.grad, [7.0])
    np.testing.assert_array_equal(x.grad, [3.0])


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_nan_is_hard_error_naming_op():
    x = Tensor([-1.0], requires_grad=True)
    with pytest.raises(NonFiniteError) as err:
        x.log()
    assert err.value.op == "log"


def test_no_grad_builds_no_tape():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


# ------------------------------------------------------------ activations
def test_sigmoid_at_zero():
    assert Tensor([0.0]).sigmoid().item() == 0.5


def test_sigmoid_large_inputs_stay_finite():
    out = Tensor([-800.0, 800.0]).sigmoid().data
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_softmax_uniform():
    np.testing.assert_array_equal(F.softmax(Tensor([[0.0, 0.0]]), axis=1).data, [[0.5, 0.5]])


def test_softmax_empty_axis_raises():
    with pytest.raises(ValueError):
        F.softmax(Tensor(np.zeros((2, 0))), axis=1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=1, max_size=8))
def test_softmax_is_probability_vector(values):
    p = F.softmax(Tensor([values]), axis=1).data
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12


def test_tanh_backward_at_one():
    x = Tensor([1.0], requires_grad=True)
    x.tanh().sum().backward()
    expected = 1.0 - math.tanh(1.0) ** 2
    assert x.grad[0] == pytest.approx(expected, abs=1e-15)
    assert x.grad[0] == pytest.approx(0.41997, abs=1e-5)


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ValueError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


# ---------------------------------------- finite-difference oracle per op
OPS = {
    "add": lambda a, b: (a + b).sum(),
    "sub": lambda a, b: (a - b * 2.0).sum(),
    "mul": lambda a, b: (a * b).sum(),
    "div": lambda a, b: (a / (b * b + 1.0)).sum(),
    "scalar": lambda a, b: ((a * 3.0 - 1.5) ** 2).sum() + (2.0 - b).sum(),
    "broadcast": lambda a, b: (a * b[0]).sum(),
    "matmul": lambda a, b: (a @ b.transpose()).tanh().sum(),
    "relu": lambda a, b: (a.relu() * b).sum(),
    "sigmoid": lambda a, b: (a.sigmoid() * b).sum(),
    "tanh": lambda a, b: (a.tanh() * b).sum(),
    "exp_log": lambda a, b: ((a * 0.3).exp() + (b * b + 1.0).log()).sum(),
    "softmax": lambda a, b: (F.softmax(a, axis=1) * b).sum(),
    "log_softmax": lambda a, b: (F.log_softmax(a, axis=0) * b).sum(),
    "sum_axis": lambda a, b: (a.sum(axis=1) * b.sum(axis=1)).sum(),
    "mean_axis": lambda a, b: (a.mean(axis=0) * b.mean(axis=0)).sum(),
    "slice_reshape": lambda a, b: (a[:, 1:3].reshape(-1) * b[:, :2].reshape(-1)).sum(),
    "stack_concat": lambda a, b: (F.stack([a, b], axis=1) ** 2).sum() + F.concat([a, b], axis=0).tanh().sum(),
    "cross_entropy": lambda a, b: F.cross_entropy(a * b, np.array([0, 1, 3])),
    "bce_logits": lambda a, b: F.binary_cross_entropy_with_logits(a + b, np.array([1, 0, 2])),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    fn = OPS[name]
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        a, b = param(rng, 3, 4), param(rng, 3, 4)
        errors = check_gradients(lambda: fn(a, b), {"a": a, "b": b})
        assert max(errors.values()) < 1e-4, (seed, errors)


def test_finite_differences_shrink_step_across_a_kink():
    # relu kink 3e-6 from x: a 1e-5 central step straddles it and averages slopes 0 and 5
    x = Tensor(np.array([-3e-6]), requires_grad=True)
    errors = check_gradients(lambda: (x.relu() * 5.0 + x * 2.0).sum(), {"x": x}, h=1e-5)
    assert errors["x"] < 1e-6
    assert numeric_grad(lambda: (x.relu() * 5.0 + x * 2.0).sum(), x, h=1e-5)[0] == pytest.approx(2.0)


# ------------------------------------------------------------------- Adam
def scalar_adam(grad_fn, w, alpha, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float reference transcription of Adam."""
    m = v = 0.0
    trajectory = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        w = w - alpha * mhat / (math.sqrt(vhat) + eps)
        trajectory.append(w)
    return trajectory


def test_adam_first_step_moves_by_alpha_times_sign():
    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    p.grad = np.array([0.3, -7.0, 1e-3])
    state = AdamState(alpha=0.01)
    adam_step({"p": p}, state)
    np.testing.assert_allclose(p.data - [1.0, -2.0, 0.5], [-0.01, 0.01, -0.01], rtol=1e-4)
    assert p.grad is None
    assert state.step == 1


def test_adam_zero_gradient_is_identity():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    state = AdamState()
    for _ in range(5):
        p.grad = np.zeros(2)
        adam_step({"p": p}, state)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    np.testing.assert_array_equal(state.v["p"], [0.0, 0.0])


def test_adam_quadratic_matches_scalar_reference():
    w = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState(alpha=0.1)
    path = []
    for _ in range(10):
        ((w - 3.0) ** 2).sum().backward()
        adam_step({"w": w}, state)
        path.append(w.data[0])
    reference = scalar_adam(lambda x: 2 * (x - 3.0), 0.0, 0.1, 10)
    assert all(b > a for a, b in zip([0.0] + path, path))
    assert all(x < 3.0 for x in path)
    np.testing.assert_allclose(path, reference, rtol=1e-12)


def test_adam_missing_grad_raises():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ValueError, match="no gradient"):
        adam_step({"p": p}, AdamState())


def test_adam_shape_mismatch_raises():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.zeros(3)
    with pytest.raises(ValueError, match="shape"):
        adam_step({"p": p}, AdamState())


def test_adam_state_validation():
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)
    with pytest.raises(ValueError):
        AdamState(alpha=0.0)


def test_adam_trajectory_is_deterministic():
    def run():
        rng = np.random.default_rng(3)
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = rng.normal(size=(8, 4))
        state = AdamState()
        for _ in range(5):
            (Tensor(x) @ w).tanh().sum().backward()
            adam_step({"w": w}, state)
        return w.data.tobytes()

    assert run() == run()
