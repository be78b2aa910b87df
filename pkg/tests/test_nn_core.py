import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ueba.errors import DimensionError, GraphStructureError
from ueba.nn_core import (
    Activation,
    AdamState,
    CompositionNet,
    LayeredGraphNet,
    Neuron,
    adam_step,
    composition_to_graph,
    forward_composition,
    forward_graph,
    gradients,
    graph_to_composition,
    loss_value,
    net_from_bytes,
    net_manifest,
    net_to_bytes,
)

ACTS = [Activation.IDENTITY, Activation.TANH, Activation.ELU]


def random_net(rng, dims, mixed=True):
    weights, biases, acts = [], [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(size=(n_out, n_in)))
        biases.append(rng.normal(size=n_out))
        if mixed:
            acts.append(tuple(ACTS[k] for k in rng.integers(0, 3, size=n_out)))
        else:
            acts.append(ACTS[rng.integers(0, 3)])
    return CompositionNet.from_arrays(weights, biases, acts)


def small_elu_net():
    return CompositionNet.from_arrays(
        [[[1.0, -2.0], [3.0, 1.0]], [[2.0, -1.0]]],
        [[0.5, -1.0], [1.0]],
        ["elu", "elu"],
    )


def numeric_grad(net, batch, l1, k, idx, h=1e-5):
    params = [p.copy() for p in net.params]
    params[k][idx] += h
    up = loss_value(net.with_params(params), batch, l1_lambda=l1)
    params[k][idx] -= 2 * h
    down = loss_value(net.with_params(params), batch, l1_lambda=l1)
    return (up - down) / (2 * h)


class TestActivations:
    def test_elu_formula(self):
        z = np.array([-2.0, -0.1, 0.0, 0.3, 5.0])
        np.testing.assert_allclose(
            Activation.ELU(z), [math.exp(-2) - 1, math.exp(-0.1) - 1, 0.0, 0.3, 5.0]
        )

    def test_ranges(self):
        z = np.linspace(-50, 50, 2001)
        t = Activation.TANH(z[np.abs(z) < 15])
        assert np.all((t > -1) & (t < 1))
        # expm1 rounds to exactly -1 below about -37 in double precision
        assert np.all(Activation.ELU(z[z > -30]) > -1)

    def test_elu_c1_at_zero(self):
        h = 1e-6
        left = (Activation.ELU(np.array(0.0)) - Activation.ELU(np.array(-h))) / h
        right = (Activation.ELU(np.array(h)) - Activation.ELU(np.array(0.0))) / h
        assert abs(left - right) < 1e-5
        assert abs(Activation.ELU(np.array(h)) - Activation.ELU(np.array(-h))) < 3e-6

    def test_large_negative_elu_is_finite(self):
        assert Activation.ELU(np.array(-1e4)) == -1.0


class TestForward:
    def test_identity_layer(self):
        net = CompositionNet.from_arrays([np.eye(3)], [np.zeros(3)], ["identity"])
        np.testing.assert_array_equal(forward_composition(net, [1, -2, 0.5]), [1, -2, 0.5])

    def test_zero_tanh(self):
        net = CompositionNet.from_arrays([np.zeros((4, 3))], [np.zeros(4)], ["tanh"])
        np.testing.assert_array_equal(forward_composition(net, [3.0, -1.0, 9.0]), np.zeros(4))

    def test_hand_evaluated_elu_net(self):
        # z1 = (-0.5, 3) -> (e^-0.5 - 1, 3); z2 = 2(e^-0.5 - 1) - 3 + 1
        z2 = 2 * (math.exp(-0.5) - 1) - 3 + 1
        expected = math.exp(z2) - 1
        out = forward_composition(small_elu_net(), [1.0, 1.0])
        assert out.shape == (1,)
        assert out[0] == pytest.approx(expected, abs=1e-15)

    def test_batch_matches_rows(self):
        rng = np.random.default_rng(0)
        net = random_net(rng, [4, 3, 2])
        X = rng.normal(size=(7, 4))
        batch = forward_composition(net, X)
        for i in range(7):
            np.testing.assert_allclose(batch[i], forward_composition(net, X[i]), atol=1e-14)

    def test_dimension_mismatch_names_layer(self):
        with pytest.raises(DimensionError) as err:
            forward_composition(small_elu_net(), [1.0, 2.0, 3.0])
        assert err.value.context["layer"] == 0

    def test_inconsistent_layers_rejected(self):
        with pytest.raises(DimensionError):
            CompositionNet.from_arrays(
                [np.ones((2, 3)), np.ones((1, 3))], [np.zeros(2), np.zeros(1)], ["tanh", "tanh"]
            )

    def test_graph_identity(self):
        net = CompositionNet.from_arrays([np.eye(3)], [np.zeros(3)], ["identity"])
        np.testing.assert_array_equal(forward_graph(composition_to_graph(net), [1, -2, 0.5]), [1, -2, 0.5])

    def test_graph_single_sum_neuron(self):
        g = LayeredGraphNet(2, ((Neuron({(0, 0): 1.0, (0, 1): 1.0}, 0.0, "identity"),),))
        np.testing.assert_array_equal(forward_graph(g, [2.0, 3.0]), [5.0])

    def test_graph_from_elu_net_matches(self):
        net = small_elu_net()
        g = composition_to_graph(net)
        assert forward_graph(g, [1.0, 1.0])[0] == pytest.approx(
            forward_composition(net, [1.0, 1.0])[0], abs=1e-15
        )


class TestConversions:
    def test_identity_net_fully_connected(self):
        net = CompositionNet.from_arrays([np.eye(3)], [np.zeros(3)], ["identity"])
        g = composition_to_graph(net)
        assert g.widths == (3, 3)
        assert g.edge_count == 9
        rng = np.random.default_rng(1)
        for x in rng.normal(size=(100, 3)):
            np.testing.assert_array_equal(forward_graph(g, x), x)

    def test_edge_count(self):
        net = random_net(np.random.default_rng(2), [5, 4, 3, 2])
        g = composition_to_graph(net)
        assert g.widths == (5, 4, 3, 2) == net.dims
        assert g.edge_count == 5 * 4 + 4 * 3 + 3 * 2 == 38

    def test_round_trip_parameters(self):
        net = random_net(np.random.default_rng(3), [6, 5, 4, 6])
        back = graph_to_composition(composition_to_graph(net))
        for a, b in zip(net.params, back.params):
            np.testing.assert_array_equal(a, b)
        assert [l.activations for l in net.layers] == [l.activations for l in back.layers]

    def test_sparse_graph_densified(self):
        g = LayeredGraphNet(
            3,
            (
                (
                    Neuron({(0, 0): 0.5}, 0.1, "tanh"),
                    Neuron({(0, 1): -1.0, (0, 2): 2.0}, 0.0, "elu"),
                ),
                (Neuron({(1, 1): 1.5}, -0.2, "identity"),),
            ),
        )
        net = graph_to_composition(g)
        np.testing.assert_array_equal(net.layers[0].affine.weights, [[0.5, 0, 0], [0, -1.0, 2.0]])
        np.testing.assert_array_equal(net.layers[1].affine.weights, [[0.0, 1.5]])
        rng = np.random.default_rng(4)
        for x in rng.normal(size=(100, 3)):
            # oracle: direct evaluation of the sparse neuron formulas
            z = -x[1] + 2 * x[2]
            h2 = z if z > 0 else math.expm1(z)
            expected = 1.5 * h2 - 0.2
            assert forward_composition(net, x)[0] == pytest.approx(expected, abs=1e-12)
            assert forward_graph(g, x)[0] == pytest.approx(expected, abs=1e-12)

    def test_single_neuron_graph(self):
        g = LayeredGraphNet(2, ((Neuron({(0, 0): 1.0, (0, 1): 1.0}, 0.0, "identity"),),))
        net = graph_to_composition(g)
        assert len(net.layers) == 1 and net.dims == (2, 1)

    def test_layer_skipping_edge_rejected(self):
        g = LayeredGraphNet(
            2,
            (
                (Neuron({(0, 0): 1.0}, 0.0, "tanh"),),
                (Neuron({(0, 1): 1.0}, 0.0, "tanh"),),
            ),
        )
        with pytest.raises(GraphStructureError) as err:
            graph_to_composition(g)
        assert err.value.context["edge"] == [[0, 1], [2, 0]]

    @settings(max_examples=25, deadline=None)
    @given(
        dims=st.lists(st.integers(1, 16), min_size=3, max_size=6),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_equivalence_property(self, dims, seed):
        rng = np.random.default_rng(seed)
        net = random_net(rng, dims)
        g = composition_to_graph(net)
        X = rng.normal(size=(100, dims[0]))
        for x in X:
            assert np.max(np.abs(forward_graph(g, x) - forward_composition(net, x))) <= 1e-12
        back = graph_to_composition(g)
        assert all(np.array_equal(a, b) for a, b in zip(net.params, back.params))


class TestGradients:
    def test_zero_weight_linear_layer(self):
        x = np.array([[1.0, -2.0, 0.5]])
        net = CompositionNet.from_arrays([np.zeros((3, 3))], [np.zeros(3)], ["identity"])
        g = gradients(net, x)
        # loss = mean((b - x)^2) over 3 features -> d/db = 2 (0 - x) / 3
        np.testing.assert_allclose(g.grads[1], 2 * (0 - x[0]) / 3)
        for j in range(3):
            assert g.grads[1][j] == pytest.approx(numeric_grad(net, x, 0.0, 1, j), rel=1e-4)

    def test_l1_zero_equals_pure_mse(self):
        rng = np.random.default_rng(5)
        net = random_net(rng, [4, 3, 4])
        X = rng.normal(size=(6, 4))
        a = gradients(net, X, l1_lambda=0.0)
        assert a.loss == pytest.approx(a.mse)
        b = gradients(net, X, l1_lambda=0.1)
        for ga, gb, w in zip(a.grads[::2], b.grads[::2], net.params[::2]):
            np.testing.assert_allclose(gb - ga, 0.1 * np.sign(w))
        for ga, gb in zip(a.grads[1::2], b.grads[1::2]):
            np.testing.assert_array_equal(ga, gb)

    def test_l1_subgradient_zero_at_zero(self):
        net = CompositionNet.from_arrays([np.zeros((2, 2))], [np.zeros(2)], ["identity"])
        X = np.zeros((3, 2))
        g = gradients(net, X, l1_lambda=1.0)
        np.testing.assert_array_equal(g.grads[0], np.zeros((2, 2)))

    @pytest.mark.parametrize("act", ["identity", "tanh", "elu"])
    def test_finite_differences(self, act):
        rng = np.random.default_rng({"identity": 1, "tanh": 2, "elu": 3}[act])
        dims = [5, 4, 3, 5]
        net = CompositionNet.from_arrays(
            [rng.normal(size=(o, i)) for i, o in zip(dims[:-1], dims[1:])],
            [rng.normal(size=o) for o in dims[1:]],
            [act] * 3,
        )
        X = rng.normal(size=(8, 5))
        g = gradients(net, X, l1_lambda=0.01)
        for _ in range(20):
            k = int(rng.integers(0, len(net.params)))
            idx = tuple(int(rng.integers(0, s)) for s in net.params[k].shape)
            num = numeric_grad(net, X, 0.01, k, idx)
            ana = g.grads[k][idx]
            assert abs(ana - num) <= 1e-4 * max(abs(num), abs(ana), 1e-6)

    def test_elu_straddling_zero(self):
        # pre-activations chosen close to 0 on both sides
        net = CompositionNet.from_arrays(
            [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 1.0], [1.0, -1.0]]], [[0.0, 0.0], [0.0, 0.0]], ["elu", "elu"]
        )
        X = np.array([[0.01, -0.01], [-0.02, 0.03]])
        g = gradients(net, X)
        for k, p in enumerate(net.params):
            for idx in np.ndindex(p.shape):
                num = numeric_grad(net, X, 0.0, k, idx)
                assert g.grads[k][idx] == pytest.approx(num, rel=1e-4, abs=1e-9)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            gradients(small_elu_net(), np.ones((1, 2)), l1_lambda=-1.0)


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = [np.array([1.0, -2.0])]
        new, state = adam_step(p, [np.zeros(2)], AdamState.for_params(p))
        np.testing.assert_array_equal(new[0], p[0])
        assert state.step == 1

    def test_sign_property(self):
        p = [np.array([0.0])]
        state = AdamState.for_params(p, lr=0.01)
        for _ in range(100):
            p, state = adam_step(p, [np.array([3.0])], state)
        assert p[0][0] < 0
        assert state.step == 100

    def test_first_step_hand_evaluated(self):
        lr, eps = 0.001, 1e-8
        # m = 0.1, v = 0.001; m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        new, _ = adam_step([np.array([0.5])], [np.array([1.0])], AdamState.for_params([np.zeros(1)]))
        assert new[0][0] == pytest.approx(0.5 - lr / (1 + eps), abs=1e-15)

    def test_two_steps_against_reference(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        g = [0.5, -1.5]
        m = v = 0.0
        x = 1.0
        for t, gt in enumerate(g, start=1):
            m = b1 * m + (1 - b1) * gt
            v = b2 * v + (1 - b2) * gt * gt
            x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        p, state = [np.array([1.0])], AdamState.for_params([np.zeros(1)], lr=lr)
        for gt in g:
            p, state = adam_step(p, [np.array([gt])], state)
        assert p[0][0] == pytest.approx(x, abs=1e-15)


class TestSerialization:
    def test_round_trip(self):
        net = random_net(np.random.default_rng(6), [4, 3, 2])
        blob = net_to_bytes(net)
        assert len(blob) == 8 * net.num_parameters()
        back = net_from_bytes(blob, net_manifest(net))
        for a, b in zip(net.params, back.params):
            np.testing.assert_array_equal(a, b)
        assert [l.activations for l in back.layers] == [l.activations for l in net.layers]

    def test_row_major_little_endian(self):
        net = CompositionNet.from_arrays([[[1.0, 2.0], [3.0, 4.0]]], [[5.0, 6.0]], ["tanh"])
        np.testing.assert_array_equal(np.frombuffer(net_to_bytes(net), "<f8"), [1, 2, 3, 4, 5, 6])

    def test_size_mismatch(self):
        net = small_elu_net()
        with pytest.raises(DimensionError):
            net_from_bytes(net_to_bytes(net)[:-8], net_manifest(net))
