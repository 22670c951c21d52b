import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amid import diffcore as dc
from amid.diffcore import Adam, Parameter, Tensor
from amid.errors import ConfigurationError, NumericalError, UsageError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_leaky_relu_definition():
    out = dc.leaky_relu(Tensor([-1.0, 0.0, 2.0]), 0.01)
    np.testing.assert_array_equal(out.data, [-0.01, 0.0, 2.0])


def test_softmax_of_equal_logits_is_uniform():
    np.testing.assert_array_equal(dc.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_cosine_of_orthogonal_rows_is_zero():
    assert dc.cosine_rows(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])).data[0] == 0.0


def test_cosine_zero_row_names_the_row():
    with pytest.raises(NumericalError, match="row 1"):
        dc.cosine_matrix(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[1.0, 1.0]]))


def test_quadratic_gradient():
    x = Parameter([1.0, 2.0, 3.0])
    dc.sum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_log_sigmoid_gradient_at_zero():
    x = Parameter(0.0)
    dc.log(dc.sigmoid(x)).backward()
    assert x.grad == pytest.approx(0.5, abs=1e-15)


def test_backward_on_non_scalar_is_usage_error():
    x = Parameter([1.0, 2.0])
    with pytest.raises(UsageError):
        (x * x).backward()


@pytest.mark.parametrize("a, b", [((2, 3), (2, 4)), ((3,), (2, 4)), ((2, 1), (2, 3))])
def test_elementwise_shape_mismatch(a, b):
    with pytest.raises(ConfigurationError):
        dc.add(Tensor(np.ones(a)), Tensor(np.ones(b)))


def test_matmul_shape_mismatch():
    with pytest.raises(ConfigurationError):
        dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_bias_row_broadcasts_over_batch():
    b = Parameter(np.zeros(3))
    dc.sum(Tensor(np.ones((4, 3))) + b).backward()
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])


def test_clamp_keeps_log_finite():
    p = Tensor([0.0, 1.0, 0.5])
    out = dc.log_prob(p).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(math.log(1e-7))


def test_grad_check_on_squared_norm():
    x = Parameter([1.0, 2.0])
    assert dc.grad_check(lambda: dc.sum(x * x), [x]) < 1e-7


def _rand_param(rng, *shape):
    return Parameter(rng.normal(size=shape))


@pytest.mark.parametrize("op", [
    lambda a, b: dc.sum(dc.matmul(a, b.T)),
    lambda a, b: dc.sum(dc.leaky_relu(a) * b),
    lambda a, b: dc.sum(dc.sigmoid(a) * b),
    lambda a, b: dc.sum(dc.softmax(a, axis=1) * b),
    lambda a, b: dc.sum(dc.softmax(a, axis=0) * b),
    lambda a, b: dc.sum(dc.log_softmax(a, axis=1) * b),
    lambda a, b: dc.sum(dc.log(dc.exp(a) + 1.0) * b),
    lambda a, b: dc.mean(dc.concat([a, b], axis=1) * dc.concat([b, a], axis=1)),
    lambda a, b: dc.mean(dc.concat([a, b], axis=0)),
    lambda a, b: dc.sum(dc.cosine_matrix(a, b) * 2.0),
    lambda a, b: dc.sum(dc.cosine_rows(a, b)),
    lambda a, b: dc.sum(a[[0, 2, 2]] * b[[1, 1, 0]]),
    lambda a, b: dc.sum(dc.sum(a, axis=0) * dc.mean(b, axis=0)),
    lambda a, b: dc.sum(a - b * b),
])
def test_ops_match_finite_differences(op):
    rng = np.random.default_rng(0)
    a, b = _rand_param(rng, 3, 4), _rand_param(rng, 3, 4)
    # stay clear of LeakyReLU kinks
    a.data[np.abs(a.data) < 1e-3] = 0.1
    assert dc.grad_check(lambda: op(a, b), [a, b]) < 1e-7


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite))
def test_softmax_rows_sum_to_one(x):
    out = dc.softmax(Tensor(x), axis=1).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((out > 0) & (out < 1))


def test_detach_is_a_hard_barrier():
    x = Parameter([1.0, 2.0])
    y = Parameter([3.0, 4.0])
    loss = dc.sum((x * y).detach() * x) + dc.sum(y.detach() * y.detach())
    loss.backward()
    np.testing.assert_array_equal(x.grad, [3.0, 8.0])
    assert y.grad is None


def test_frozen_parameter_gets_no_gradient():
    x = Parameter([1.0, 2.0])
    x.freeze()
    y = Parameter([1.0, 1.0])
    dc.sum(x * y).backward()
    assert x.grad is None
    np.testing.assert_array_equal(y.grad, [1.0, 2.0])


def test_untouched_leaf_has_no_gradient():
    x, y = Parameter([1.0]), Parameter([1.0])
    dc.sum(x * 3.0).backward()
    assert y.grad is None


def test_shared_subgraph_accumulates():
    x = Parameter(2.0)
    y = Parameter(-4.0)
    ((x + y) * (x + 1.0)).backward()
    assert x.grad == pytest.approx(1.0)
    assert y.grad == pytest.approx(3.0)


def test_backward_is_deterministic():
    def grads():
        rng = np.random.default_rng(5)
        a, b = _rand_param(rng, 6, 4), _rand_param(rng, 6, 4)
        dc.sum(dc.softmax(dc.cosine_matrix(a, b) * 2.0, axis=1) * dc.leaky_relu(a @ b.T)).backward()
        return a.grad, b.grad

    g1, g2 = grads(), grads()
    for u, v in zip(g1, g2):
        assert np.array_equal(u, v)


def test_no_grad_builds_no_graph():
    x = Parameter([1.0])
    with dc.no_grad():
        y = x * 2.0
    assert not y.requires_grad


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        x = Parameter([1.0, -2.0])
        x.grad = np.zeros(2)
        Adam([x], lr=0.1).step()
        np.testing.assert_array_equal(x.data, [1.0, -2.0])

    def test_one_step_descends(self):
        x = Parameter([1.0])
        dc.sum(x * x).backward()
        Adam([x], lr=0.1).step()
        assert abs(x.data[0]) < 1.0

    def test_converges_on_quadratic(self):
        x = Parameter([3.0, -2.0])
        scale = np.array([1.0, 5.0])
        opt = Adam([x], lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            dc.sum(x * x * scale).backward()
            opt.step()
        assert np.linalg.norm(x.data) < 1e-3

    def test_frozen_params_unchanged(self):
        x, y = Parameter([1.0]), Parameter([1.0])
        y.freeze()
        dc.sum(x * y).backward()
        Adam([x, y], lr=0.1).step()
        assert y.data[0] == 1.0 and x.data[0] != 1.0

    def test_non_finite_gradient_aborts(self):
        x = Parameter([1.0], name="w")
        x.grad = np.array([np.nan])
        with pytest.raises(NumericalError, match="w"):
            Adam([x]).step()

    def test_state_round_trip(self):
        x = Parameter([1.0, 2.0])
        opt = Adam([x], lr=0.1)
        dc.sum(x * x).backward()
        opt.step()
        other = Adam([Parameter(x.data.copy())], lr=0.1)
        other.load_state_dict(opt.state_dict())
        assert other.t == 1
        np.testing.assert_array_equal(other.m[0], opt.m[0])
        np.testing.assert_array_equal(other.v[0], opt.v[0])
