import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ucdir import diffmath as dm


def test_dot_forward_and_backward():
    t = dm.Tape()
    x = t.leaf([3.0, 4.0], name="x", trainable=True)
    y = dm.dot(x, x)
    assert float(dm.forward(t)) == 25.0
    np.testing.assert_array_equal(dm.backward(t, y)["x"], [6.0, 8.0])


def test_l2normalize_forward():
    np.testing.assert_array_equal(dm.l2normalize(np.array([0.0, 5.0])).value, [0.0, 1.0])


def test_sum_exp():
    assert float(dm.reduce_sum(dm.exp(np.zeros(2))).value) == 2.0


def test_constant_root_gives_zero_gradient():
    t = dm.Tape()
    x = t.leaf([1.0, -2.0, 0.5], name="x", trainable=True)
    c = dm.reduce_sum(t.const([1.0, 2.0]))
    g = t.backward(c)
    np.testing.assert_array_equal(g["x"], np.zeros(3))
    assert x.grad.shape == (3,)


def test_constants_get_no_gradient_buffer():
    t = dm.Tape()
    x = t.leaf([1.0, 2.0], name="x", trainable=True)
    k = t.const([3.0, 4.0])
    t.backward(dm.dot(x, k))
    assert k.grad is None
    np.testing.assert_array_equal(x.grad, [3.0, 4.0])


def test_non_scalar_root_is_usage_error():
    t = dm.Tape()
    x = t.leaf([1.0, 2.0], name="x", trainable=True)
    dm.exp(x)
    with pytest.raises(dm.UsageError):
        t.backward()


def test_shape_error_names_node():
    t = dm.Tape()
    a = t.leaf(np.ones((2, 3)))
    b = t.leaf(np.ones((2, 3)))
    with pytest.raises(dm.ShapeError, match=r"node #2 \(matmul\)"):
        dm.matmul(a, b)


def test_l2normalize_guard():
    with pytest.raises(dm.CollapseError):
        dm.l2normalize(np.array([1e-9, 0.0]))


def test_forward_replay_tracks_leaf_changes():
    t = dm.Tape()
    x = t.leaf([1.0, 2.0], name="x", trainable=True)
    y = dm.reduce_sum(dm.square(x))
    x.value[:] = [3.0, 4.0]
    assert float(t.forward(y)) == 25.0


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(5, 4))

    def build():
        t = dm.Tape()
        x = t.leaf(w, name="w", trainable=True)
        return t, dm.reduce_sum(dm.logsumexp(dm.tanh(dm.matmul(x, x.T)), axis=1))

    t1, r1 = build()
    t2, r2 = build()
    assert t1.forward(r1).tobytes() == t2.forward(r2).tobytes()


def test_grad_check_quadratic_exact():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])

    def quad(tape, p):
        x = p["x"]
        return dm.dot(x, dm.matmul(a, x))

    err = dm.grad_check(quad, {"x": np.array([0.3, -1.7])}, h=1e-5)
    assert err < 1e-8


def test_grad_check_reports_nonfinite_coordinate():
    def bad(tape, p):
        return dm.reduce_sum(dm.log(p["x"]))

    with pytest.raises(dm.GradCheckError, match=r"x\[1\]"):
        dm.grad_check(bad, {"x": np.array([1.0, 1e-6])}, h=1e-5)


@pytest.mark.parametrize("op", ["exp", "tanh", "softmax", "log_softmax", "logsumexp", "l2normalize",
                                "square", "sqrt", "log"])
def test_unary_ops_match_finite_differences(op):
    rng = np.random.default_rng(1)
    x0 = rng.uniform(0.5, 1.5, size=(3, 4))
    w = rng.normal(size=(3, 4))
    fn = getattr(dm, op)

    def loss(tape, p):
        y = fn(p["x"])
        wt = w if y.shape == w.shape else w[:, 0]
        return dm.reduce_sum(dm.mul(y, wt))

    assert dm.grad_check(loss, {"x": x0}) < 1e-7


def test_broadcast_ops_match_finite_differences():
    rng = np.random.default_rng(2)
    params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,)),
              "c": rng.uniform(1, 2, size=(3, 1))}

    def loss(tape, p):
        y = dm.div(dm.sub(dm.mul(p["a"], p["b"]), p["c"]), p["c"])
        y = dm.add(y, dm.matmul(p["a"], p["b"]).value.mean())
        return dm.reduce_sum(dm.mul(y, dm.reshape_col(dm.reduce_sum(p["a"], axis=1))))

    assert dm.grad_check(loss, params) < 1e-7


@settings(deadline=None, max_examples=50)
@given(arrays(np.float64, st.integers(2, 6),
              elements=st.floats(-1e3, 1e3, allow_nan=False)).filter(
                  lambda v: np.linalg.norm(v) >= 1e-8))
def test_l2normalize_unit_norm(v):
    out = dm.l2normalize(v).value
    assert abs(np.linalg.norm(out) - 1.0) < 1e-12
