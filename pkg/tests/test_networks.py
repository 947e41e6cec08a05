import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ptpi import autodiff as ad
from ptpi.networks import (
    ConfigurationError,
    DenseNet,
    FourierEmbedding,
    ShapeError,
    fourier_embed,
    init_dense,
    net_forward,
)
from ptpi.training import AdamState, adam_step


def test_glorot_bound():
    net = init_dense([2, 50, 50, 2], "elu", seed=0)
    bound = np.sqrt(6 / 100)
    assert np.isclose(bound, 0.24495, atol=1e-5)
    w = net.weights[1]
    assert np.abs(w).max() <= bound and np.abs(w).max() > 0.9 * bound
    assert all(np.all(b == 0) for b in net.biases)


def test_init_deterministic():
    a, b = init_dense([3, 7, 2], "silu", 11), init_dense([3, 7, 2], "silu", 11)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.params(), b.params()))


def test_parameter_count_sine_net():
    net = init_dense([3] + [100] * 6 + [15], "sine", 0)
    # summation formula: 400 + 5 * 10100 + 1515
    assert net.n_params() == 3 * 100 + 100 + 5 * (100 * 100 + 100) + 100 * 15 + 15 == 52415


@pytest.mark.parametrize("widths", [[], [3], [3, 0, 2], [2, -1]])
def test_bad_widths(widths):
    with pytest.raises(ConfigurationError):
        init_dense(widths, "elu", 0)


def test_constant_output_with_zero_weights():
    net = init_dense([2, 4, 3], "elu", 0)
    net.weights = [np.zeros_like(w) for w in net.weights]
    net.biases[-1] = np.array([1.0, -2.0, 0.5])
    out = net_forward(net, np.random.default_rng(0).normal(size=(5, 2)))
    np.testing.assert_array_equal(out, np.tile([1.0, -2.0, 0.5], (5, 1)))


def test_sine_layer_at_zero():
    net = DenseNet([np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)], ["sine", "identity"])
    assert net_forward(net, np.zeros((1, 1)))[0, 0] == 0.0


def test_elu_value():
    net = DenseNet([np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)], ["elu", "identity"])
    assert np.isclose(net_forward(net, np.array([[-1.0]]))[0, 0], np.exp(-1) - 1, atol=1e-12)
    assert np.isclose(np.exp(-1) - 1, -0.63212, atol=1e-5)


def test_shape_error():
    net = init_dense([2, 3, 1], "elu", 0)
    with pytest.raises(ShapeError):
        net_forward(net, np.zeros((4, 3)))


def test_invariants_enforced():
    with pytest.raises(ConfigurationError):
        DenseNet([np.ones((2, 2)), np.ones((1, 3))], [np.zeros(2), np.zeros(1)], ["elu", "identity"])
    with pytest.raises(ConfigurationError):
        DenseNet([np.ones((2, 2))], [np.zeros(2)], ["elu"])


def test_forward_is_pure():
    net = init_dense([2, 8, 3], "silu", 1)
    x = np.random.default_rng(2).normal(size=(4, 2))
    assert net_forward(net, x).tobytes() == net_forward(net, x).tobytes()


def test_fourier_at_zero_and_quarter():
    emb = FourierEmbedding.sample(4, 2, 1.0, 0)
    z = fourier_embed(np.zeros((1, 2)), emb)
    np.testing.assert_array_equal(z[0, :4], 0.0)
    np.testing.assert_array_equal(z[0, 4:], 1.0)
    one = FourierEmbedding(np.array([[1.0]]))
    np.testing.assert_allclose(one(np.array([[0.25]])), [[1.0, 0.0]], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-5, 5))
def test_fourier_periodic_and_bounded(x):
    emb = FourierEmbedding(np.array([[1.0]]))
    a, b = emb(np.array([[x]])), emb(np.array([[x + 1.0]]))
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.all(np.abs(a) <= 1.0)


def test_freeze_keeps_parameters_bit_identical():
    from ptpi.model import bind

    net = init_dense([2, 5, 1], "elu", 3)
    net.freeze()
    before = [p.tobytes() for p in net.params()]

    # the frozen net contributes no leaves, so an optimizer has nothing to update
    class Holder:
        def nets(self):
            return {"trunk": net}

    tape = ad.Tape()
    P = bind(Holder(), tape, ("trunk",))
    assert not isinstance(P["trunk"][0], ad.Var)
    assert [p.tobytes() for p in net.params()] == before
    net.unfreeze()
    tape = ad.Tape()
    P = bind(Holder(), tape, ("trunk",))
    loss = ad.mean(ad.square(net_forward(net, np.ones((3, 2)), P["trunk"])))
    params = net.params()
    adam_step(AdamState.create(params, 1e-2), params, ad.grad(loss, P["trunk"]))
    net.set_params(params)
    assert [p.tobytes() for p in net.params()] != before
