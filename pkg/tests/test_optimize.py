import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reclra.optimize import Optimizer, reproject

from conftest import dense_net

finite = st.floats(-1e6, 1e6, allow_nan=False)
radius = st.floats(1e-3, 1e3)


def test_reproject_examples():
    small = np.array([[0.1, -0.2]])
    assert np.array_equal(reproject(small, 1.0), small)
    np.testing.assert_allclose(reproject([[3.0, 4.0]], 1.0), [[0.6, 0.8]], rtol=0, atol=1e-15)
    on_ball = np.array([[3.0, 4.0]])
    assert np.array_equal(reproject(on_ball, 5.0), on_ball)


@pytest.mark.parametrize("c", [0.0, -1.0])
def test_reproject_rejects_nonpositive_radius(c):
    with pytest.raises(ValueError):
        reproject(np.ones(2), c)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), radius)
def test_reproject_bounds_norm(delta, c):
    assert np.linalg.norm(reproject(delta, c)) <= c + 1e-12 * max(c, 1.0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (5,), elements=finite), radius)
def test_reproject_is_nonnegative_multiple(delta, c):
    out = reproject(delta, c)
    assert np.all(out * delta >= 0)
    assert np.all(out[delta == 0] == 0)


def test_reproject_handles_huge_and_tiny_entries():
    huge = np.array([1e200, -1e200])
    np.testing.assert_allclose(reproject(huge, 1.0), [2 ** -0.5, -(2 ** -0.5)], rtol=1e-15)
    tiny = np.array([3e-200, 4e-200])
    assert np.array_equal(reproject(tiny, 1.0), tiny)


def test_reproject_does_not_alias_input():
    d = np.ones(3) * 0.1
    out = reproject(d, 1.0)
    out[0] = 9.0
    assert d[0] == 0.1


def test_sgd_step_subtracts_projected_delta():
    net = dense_net([3, 2, 2])
    before = {k: v.copy() for k, v in net.params.items()}
    delta = np.full((2, 3), 2.0)
    Optimizer("sgd", lr=1.0, radius=1.0).step(net, {"W1": delta})
    np.testing.assert_allclose(net.params["W1"], before["W1"] - reproject(delta, 1.0),
                               rtol=0, atol=1e-15)
    assert np.array_equal(net.params["W2"], before["W2"])


def test_adam_scalar_hand_trace():
    net = dense_net([1, 1, 1], out="identity")
    net.params["W1"][...] = 0.5
    opt = Optimizer("adam", lr=0.1, radius=math.inf)
    theta, m, v = 0.5, 0.0, 0.0
    for t, g in enumerate([0.3, 0.3, -0.1, 0.7], start=1):
        opt.step(net, {"W1": np.array([[g]])})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(net.params["W1"][0, 0] - theta) < 1e-15
    assert opt.step_count == 4


def test_adam_first_step_is_sign_like():
    net = dense_net([3, 2, 2])
    w0 = net.params["W1"].copy()
    delta = np.array([[1e-3, -5.0, 0.2], [-0.01, 3.0, 7.0]])
    Optimizer("adam", lr=0.01, radius=math.inf).step(net, {"W1": delta})
    np.testing.assert_allclose(w0 - net.params["W1"], 0.01 * np.sign(delta), rtol=1e-4)


def test_zero_updates_leave_parameters_but_advance_counter():
    net = dense_net([3, 2, 2])
    before = {k: v.copy() for k, v in net.params.items()}
    opt = Optimizer("adam")
    opt.step(net, {})
    opt.step(net, {k: np.zeros_like(v) for k, v in net.params.items()})
    assert opt.step_count == 2
    for k in before:
        assert np.array_equal(net.params[k], before[k])


def test_unknown_parameter_key():
    with pytest.raises(KeyError):
        Optimizer().step(dense_net([3, 2, 2]), {"W9": np.zeros((1, 1))})


def test_shape_mismatch():
    with pytest.raises(ValueError):
        Optimizer().step(dense_net([3, 2, 2]), {"W1": np.zeros((3, 2))})


def test_identical_streams_give_identical_parameters():
    g = np.random.default_rng(0)
    a, b = dense_net([4, 3, 2], seed=1), dense_net([4, 3, 2], seed=1)
    oa, ob = Optimizer("adam", lr=0.05), Optimizer("adam", lr=0.05)
    for _ in range(5):
        ups = {k: g.normal(size=v.shape) for k, v in a.params.items()}
        oa.step(a, ups)
        ob.step(b, {k: u.copy() for k, u in ups.items()})
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_error_synapses_are_stepped():
    net = dense_net([3, 2, 2])
    e0 = net.params["E2>1"].copy()
    Optimizer("sgd", lr=0.5).step(net, {"E2>1": np.ones_like(e0) * 0.1})
    assert not np.array_equal(net.params["E2>1"], e0)


def test_config_validation():
    with pytest.raises(ValueError):
        Optimizer("rmsprop")
    with pytest.raises(ValueError):
        Optimizer(lr=0.0)
    with pytest.raises(ValueError):
        Optimizer(radius=0.0)
