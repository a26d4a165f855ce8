import itertools

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import seeds, small_net
from dropout_relu.constructions import build_uniform_growth, build_w_neg, figure1_network
from dropout_relu.exact import DropoutConfig, exact_criterion, pattern_outputs
from dropout_relu.invariance import (ABS_TOL, REL_TOL, LayerScaling, check_monotone,
                                     check_supermodular, compensate_input_scaling,
                                     count_negative_biases, count_negative_weights, invariance_suite,
                                     is_nonnegative, psi_convexity_slack, rescale_layers,
                                     rescale_output_layer, scaling_family)
from dropout_relu.network import (DropoutPattern, ExampleDistribution, LayeredNetwork, dropout_forward,
                                  forward)
from dropout_relu.constructions import point_distribution


def all_patterns(net):
    sizes = [net.input_dim, *net.hidden_widths]
    for bits in itertools.product((False, True), repeat=sum(sizes)):
        bits, masks = list(bits), []
        for s in sizes:
            masks.append(np.array(bits[:s]))
            bits = bits[s:]
        yield DropoutPattern(masks[0], tuple(masks[1:]))


def close(a, b):
    return np.all(np.abs(np.asarray(a) - np.asarray(b)) <= ABS_TOL + REL_TOL * np.abs(b))


class TestInputScaling:
    def test_identity(self):
        net = small_net(1)
        assert compensate_input_scaling(net, np.ones(net.input_dim)).allclose(net)

    def test_figure1_every_pattern(self):
        net = figure1_network()
        net2 = compensate_input_scaling(net, [2.0, 0.5])
        for R in all_patterns(net):
            assert dropout_forward(net2, [2.0, -0.5], R) == dropout_forward(net, [1.0, -1.0], R)

    @given(seeds)
    @settings(max_examples=100, deadline=None)
    def test_random(self, seed):
        net = small_net(seed)
        rng = np.random.default_rng(seed)
        a = rng.uniform(0.1, 10, net.input_dim) * rng.choice([-1, 1], net.input_dim)
        dist = ExampleDistribution(rng.normal(size=(2, net.input_dim)), rng.normal(size=2))
        net2 = compensate_input_scaling(net, a)
        x = dist.inputs[0]
        assert close(pattern_outputs(net2, a * x)[0], pattern_outputs(net, x)[0])
        assert exact_criterion(net2, dist.scale_inputs(a)).criterion == pytest.approx(
            exact_criterion(net, dist).criterion, abs=1e-12, rel=1e-12)

    def test_power_of_two_scaling_is_bit_exact(self):
        net = small_net(9)
        a = 2.0 ** np.arange(-2, net.input_dim - 2)
        x = np.random.default_rng(9).normal(size=net.input_dim)
        np.testing.assert_array_equal(pattern_outputs(compensate_input_scaling(net, a), a * x)[0],
                                      pattern_outputs(net, x)[0])

    def test_zero_entry_rejected(self):
        with pytest.raises(ValueError):
            compensate_input_scaling(figure1_network(), [1.0, 0.0])


class TestLayerRescaling:
    def test_unit_product_preserves_everything(self):
        net = figure1_network()
        dist = point_distribution([1.0, -1.0], 8.0, mixture=False)
        a, b = exact_criterion(net, dist), exact_criterion(rescale_layers(net, (2.0, 0.5)), dist)
        assert (a.criterion, a.risk, a.penalty) == (b.criterion, b.risk, b.penalty)

    def test_identity(self):
        net = small_net(2)
        assert rescale_layers(net, np.ones(net.depth)).allclose(net)

    def test_figure1_times_three(self):
        net = figure1_network()
        R = DropoutPattern.all_kept(net)
        x = [1.0, -1.0]
        assert dropout_forward(rescale_layers(net, (3.0, 1.0)), x, R) == 3 * dropout_forward(net, x, R)

    @given(seeds)
    @settings(max_examples=100, deadline=None)
    def test_ratio_is_product(self, seed):
        net = small_net(seed)
        rng = np.random.default_rng(seed)
        c = rng.uniform(0.2, 5.0, net.depth)
        x = rng.normal(size=net.input_dim)
        assert close(pattern_outputs(rescale_layers(net, c), x)[0],
                     np.prod(c) * pattern_outputs(net, x)[0])

    def test_bias_products(self):
        net = small_net(3, max_droppable=10)
        while net.depth < 3:
            net = small_net(int(np.random.default_rng(net.depth).integers(1000)) + 4)
        c = np.arange(1.0, net.depth + 1)
        out = rescale_layers(net, c)
        for j, b in enumerate(out.biases):
            np.testing.assert_allclose(b, np.prod(c[: j + 1]) * net.biases[j], rtol=1e-15)
        assert out.output_bias == pytest.approx(np.prod(c) * net.output_bias, rel=1e-15)

    @pytest.mark.parametrize("factors", [(1.0, 0.0), (-1.0, 2.0), ()])
    def test_invalid(self, factors):
        with pytest.raises(ValueError):
            LayerScaling(factors)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            rescale_layers(figure1_network(), (1.0, 2.0, 3.0))

    def test_family_constant(self):
        net = small_net(13)
        dist = ExampleDistribution(np.random.default_rng(13).normal(size=(2, net.input_dim)), [1.0, 0.0])
        rows = scaling_family(net, dist, [0.25, 1.0, 3.0], layers=(0, net.depth - 1))
        vals = [j for _, j in rows]
        assert vals == pytest.approx([vals[1]] * 3, rel=1e-12, abs=1e-12)


class TestOutputRescaling:
    def test_identity(self):
        net = small_net(4)
        assert rescale_output_layer(net, 1.0).allclose(net)

    def test_figure1(self):
        net2 = rescale_output_layer(figure1_network(), 2.0)
        r = exact_criterion(net2, point_distribution([1.0, -1.0], 16.0, mixture=False))
        assert r.criterion == 216.0

    @given(seeds)
    @settings(max_examples=100, deadline=None)
    def test_loss_identity(self, seed):
        net = small_net(seed)
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=net.input_dim), float(rng.normal())
        c = 10.0
        lhs = (pattern_outputs(net, x)[0] - y) ** 2
        rhs = (pattern_outputs(rescale_output_layer(net, c), x)[0] - c * y) ** 2 / c**2
        np.testing.assert_allclose(rhs, lhs, rtol=1e-10, atol=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            rescale_output_layer(figure1_network(), 0.0)


class TestSupermodular:
    @given(seeds)
    @settings(max_examples=50, deadline=None)
    def test_nonnegative_nets(self, seed):
        rep = check_supermodular(small_net(seed, nonnegative=True), trials=1000, seed=seed)
        assert rep.violations == 0 and rep.trials == 1000

    def test_linear_net_equality(self):
        net = LayeredNetwork((np.eye(2),), (np.full(2, 10.0),), np.ones(2), 0.0)
        rep = check_supermodular(net, trials=500)
        assert abs(rep.worst_slack) < 1e-12

    def test_figure1_across_kink(self):
        net = figure1_network()
        x = np.array([1.0, -1.0])
        steps = [np.array(v) for v in itertools.product((0.0, 0.25, 0.5, 1.0), repeat=2)]
        for d1, d2 in itertools.product(steps, repeat=2):
            slack = forward(net, x) + forward(net, x + d1 + d2) - forward(net, x + d1) - forward(net, x + d2)
            assert slack >= 0.0
        assert check_supermodular(net, trials=2000, seed=3).violations == 0

    def test_requires_nonnegative_weights(self):
        with pytest.raises(ValueError):
            check_supermodular(build_w_neg(2, 2, 2))

    def test_negative_weights_can_violate(self):
        net = LayeredNetwork((np.array([[1.0, -1.0]]),), (np.zeros(1),), -np.ones(1), 0.0)
        assert check_monotone(net, trials=200) > 0


class TestPsiConvexity:
    @given(seeds)
    @settings(max_examples=50, deadline=None)
    def test_nonnegative_nets(self, seed):
        assert psi_convexity_slack(small_net(seed, nonnegative=True)) >= -1e-9


class TestCounting:
    def test_w_neg(self):
        assert count_negative_weights(build_w_neg(4, 4, 2)) == 6

    def test_nonnegative_constructions(self):
        assert count_negative_weights(figure1_network()) == 0
        assert count_negative_weights(build_uniform_growth(3, 2, 3, 1.0)) == 0
        assert is_nonnegative(figure1_network())

    def test_biases_separate(self):
        net = figure1_network().replace(biases=(np.array([-1.0, 0.0]),), output_bias=-0.5)
        assert count_negative_weights(net) == 0 and count_negative_biases(net) == 2


class TestSuite:
    def test_all_pass(self):
        report = invariance_suite(trials=100, seed=0)
        assert set(report) == {"input_scaling", "layer_rescaling", "layer_rescaling_ratio",
                               "output_scaling"}
        for name, r in report.items():
            assert r["passed"], name
            assert r["trials"] == 100

    def test_other_keep_probability(self):
        assert all(r["passed"] for r in invariance_suite(trials=20, seed=1, p=0.3).values())
