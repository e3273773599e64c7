import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepfactor.errors import DimensionMismatchError, ZeroDenominatorError
from deepfactor.lrp import (
    RelevanceVector,
    propagate_layer,
    read_relevance_csv,
    relevance,
    write_relevance_csv,
)
from deepfactor.net import Network, NetworkSpec, forward, init_network

from oracles import lrp_messages


def zero_bias_net(rng, dims):
    return Network([(rng.normal(size=(o, i)), np.zeros(o)) for i, o in zip(dims[:-1], dims[1:])])


class TestPropagateLayer:
    def test_symmetric_split(self):
        lower, leak = propagate_layer([[1.0, 1.0]], [1.0, 1.0], [4.0])
        np.testing.assert_array_equal(lower, [2.0, 2.0])
        assert leak == 0.0

    def test_matches_message_oracle(self):
        rng = np.random.default_rng(0)
        W = rng.normal(size=(3, 4))
        a = rng.uniform(0.1, 2.0, size=4)
        R = rng.normal(size=3)
        lower, leak = propagate_layer(W, a, R)
        np.testing.assert_allclose(lower, lrp_messages(W.tolist(), a.tolist(), R.tolist()),
                                   rtol=1e-12, atol=1e-14)
        assert leak == 0.0

    def test_bias_share_goes_to_leak(self):
        W = np.array([[1.0, 2.0]])
        lower, leak = propagate_layer(W, [1.0, 1.0], [6.0], bias=[3.0])
        np.testing.assert_allclose(lower, [1.0, 2.0])
        assert leak == pytest.approx(3.0)

    def test_exact_zero_denominator_needs_stabilizer(self):
        with pytest.raises(ZeroDenominatorError):
            propagate_layer([[1.0, -1.0]], [1.0, 1.0], [1.0])
        lower, leak = propagate_layer([[1.0, -1.0]], [1.0, 1.0], [1.0], stabilizer=1e-9)
        assert lower.sum() + leak == pytest.approx(1.0, abs=1e-15)

    def test_zero_relevance_stays_zero(self):
        rng = np.random.default_rng(1)
        lower, leak = propagate_layer(rng.normal(size=(5, 7)), rng.uniform(size=7), np.zeros(5),
                                      stabilizer=1e-9, bias=rng.normal(size=5))
        np.testing.assert_array_equal(lower, np.zeros(7))
        assert leak == 0.0

    def test_shape_errors(self):
        with pytest.raises(DimensionMismatchError):
            propagate_layer(np.ones((2, 3)), np.ones(2), np.ones(2))
        with pytest.raises(DimensionMismatchError):
            propagate_layer(np.ones((2, 3)), np.ones(3), np.ones(2), bias=np.ones(3))

    def test_non_finite_relevance_rejected(self):
        with pytest.raises(ValueError):
            propagate_layer(np.ones((1, 2)), np.ones(2), [np.nan])


class TestRelevance:
    def test_linear_model_example(self):
        net = Network([([[3.0, -1.0]], [0.0])])
        rv = relevance(net, forward(net, [1.0, 2.0]), stabilizer=0.0)
        assert rv.predicted == 1.0
        np.testing.assert_array_equal(rv.per_input, [3.0, -2.0])
        assert rv.bias_absorbed == 0.0

    def test_zero_input_all_bias(self):
        rng = np.random.default_rng(2)
        layers = [(rng.normal(size=(4, 3)), rng.uniform(0.1, 1.0, size=4)),
                  (rng.normal(size=(1, 4)), np.array([0.3]))]
        net = Network(layers)
        rv = relevance(net, forward(net, np.zeros(3)))
        np.testing.assert_array_equal(rv.per_input, np.zeros(3))
        assert rv.bias_absorbed == pytest.approx(rv.predicted, abs=1e-12)

    def test_conservation_on_deep_model_1(self):
        net = init_network(NetworkSpec(80, (80, 50, 10), 1, seed=4))
        rng = np.random.default_rng(4)
        layers = [(w, rng.normal(scale=0.1, size=b.size)) for w, b in zip(net.weights, net.biases)]
        net = Network(layers)
        rv = relevance(net, forward(net, rng.normal(size=80)))
        assert rv.conservation_error < 1e-8

    def test_three_two_one_layer_sums(self):
        rng = np.random.default_rng(5)
        net = Network([(rng.uniform(0.2, 1.0, size=(2, 3)), np.zeros(2)),
                       (rng.uniform(0.2, 1.0, size=(1, 2)), np.zeros(1))])
        rv = relevance(net, forward(net, rng.uniform(0.5, 1.5, size=3)), stabilizer=0.0)
        top, hidden, inputs = (float(r.sum()) for r in rv.layers)
        assert top == rv.predicted
        assert hidden == pytest.approx(top, abs=1e-12)
        assert inputs == pytest.approx(top, abs=1e-12)

    def test_layer_sums_constant_without_bias(self):
        rng = np.random.default_rng(6)
        net = zero_bias_net(rng, [6, 8, 5, 4, 1])
        rv = relevance(net, forward(net, rng.normal(size=6)), stabilizer=0.0)
        for layer in rv.layers:
            assert layer.sum() == pytest.approx(rv.predicted, abs=1e-10)

    def test_scale_covariance(self):
        rng = np.random.default_rng(7)
        # positive hidden weights and inputs keep every denominator away from zero
        net = Network([(rng.uniform(0.1, 1, size=(6, 5)), np.zeros(6)),
                       (rng.uniform(0.1, 1, size=(4, 6)), np.zeros(4)),
                       (rng.normal(size=(1, 4)), np.zeros(1))])
        x = rng.uniform(0.1, 1, size=5)
        scaled = Network([*zip(net.weights[:-1], net.biases[:-1]),
                          (2.5 * net.weights[-1], net.biases[-1])])
        r1 = relevance(net, forward(net, x), stabilizer=0.0).per_input
        r2 = relevance(scaled, forward(scaled, x), stabilizer=0.0).per_input
        np.testing.assert_allclose(r2, 2.5 * r1, rtol=1e-12, atol=1e-15)

    def test_dead_input_gets_nothing(self):
        rng = np.random.default_rng(8)
        W0 = rng.normal(size=(5, 4))
        W0[:, 2] = 0.0
        net = Network([(W0, rng.normal(size=5)), (rng.normal(size=(1, 5)), [0.1])])
        rv = relevance(net, forward(net, rng.normal(size=4)))
        assert rv.per_input[2] == 0.0

    def test_negative_prediction_is_decomposed(self):
        net = Network([([[1.0, 1.0]], [0.0]), ([[-2.0]], [0.0])])
        rv = relevance(net, forward(net, [1.0, 3.0]), stabilizer=0.0)
        assert rv.predicted == -8.0
        np.testing.assert_allclose(rv.per_input, [-2.0, -6.0])

    def test_foreign_trace(self):
        a = init_network(NetworkSpec(3, (4,), 1))
        b = init_network(NetworkSpec(3, (4, 2), 1))
        with pytest.raises(DimensionMismatchError):
            relevance(a, forward(b, np.ones(3)))


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (6,), elements=st.floats(-3, 3)),
    st.integers(0, 2**32 - 1),
)
def test_conservation_property(x, seed):
    rng = np.random.default_rng(seed)
    dims = [6, *rng.integers(1, 9, size=rng.integers(0, 4)), 1]
    net = Network([(rng.normal(size=(o, i)), rng.normal(size=o)) for i, o in zip(dims[:-1], dims[1:])])
    rv = relevance(net, forward(net, x))
    assert rv.conservation_error < 1e-8


def test_relevance_csv_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    net = init_network(NetworkSpec(4, (3,), 1, seed=9))
    rows = [(f"S{i}", relevance(net, forward(net, rng.normal(size=4)))) for i in range(3)]
    names = ["a", "b", "c", "d"]
    write_relevance_csv(tmp_path / "r.csv", rows, names)
    back_names, back = read_relevance_csv(tmp_path / "r.csv")
    assert back_names == names
    for (sid, rv), (bid, brv) in zip(rows, back):
        assert sid == bid
        np.testing.assert_array_equal(rv.per_input, brv.per_input)
        assert rv.predicted == brv.predicted
        assert rv.bias_absorbed == brv.bias_absorbed


def test_csv_rejects_wrong_width(tmp_path):
    rv = RelevanceVector(per_input=np.ones(2), predicted=2.0, bias_absorbed=0.0)
    with pytest.raises(DimensionMismatchError):
        write_relevance_csv(tmp_path / "r.csv", [("S1", rv)], ["a", "b", "c"])
