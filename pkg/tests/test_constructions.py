import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import seeds, small_net
from dropout_relu.closed_forms import growth_weight, wneg_output_scale
from dropout_relu.constructions import (ConstructionSpec, build_uniform_growth, build_w_neg,
                                        build_w_neg_k2, embed_network, figure1_network,
                                        first_one_gadget, point_distribution, zero_embed)
from dropout_relu.exact import exact_criterion
from dropout_relu.invariance import count_negative_weights
from dropout_relu.network import (DropoutPattern, ExampleDistribution, dropout_forward, forward,
                                  relu)


def binary_inputs(K):
    return [np.array(b, dtype=float) for b in itertools.product((0, 1), repeat=K)]


class TestFirstOneGadget:
    @pytest.mark.parametrize("x,expect", [((1, 1), (1, 0)), ((0, 1), (0, 1)), ((0, 0), (0, 0))])
    def test_k2(self, x, expect):
        np.testing.assert_array_equal(relu(first_one_gadget(2) @ np.array(x, float)), expect)

    def test_k4_rows(self):
        G = first_one_gadget(4)
        np.testing.assert_array_equal(G[3], [-1, -1, -1, 1])
        np.testing.assert_array_equal(relu(G @ np.array([0, 0, 0, 1.0])), [0, 0, 0, 1])

    @pytest.mark.parametrize("K", [1, 2, 3, 4, 6])
    def test_exactly_one_fires_at_first_one(self, K):
        G = first_one_gadget(K)
        for x in binary_inputs(K)[1:]:
            h = relu(G @ x)
            assert h.sum() == 1.0
            assert h[int(np.argmax(x))] == 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            first_one_gadget(0)


class TestWNeg:
    def test_small_formula(self):
        net = build_w_neg(2, 2, 2)
        np.testing.assert_array_equal(net.output_weights, [0.25, 0.25])
        r = exact_criterion(net, point_distribution(np.ones(2), 1.0))
        assert r.criterion == pytest.approx(0.3125, abs=1e-12)

    def test_output_bias_passes_through(self):
        net = build_w_neg(2, 2, 2, output_bias=0.2)
        assert forward(net, [0.0, 0.0]) == 0.2

    @pytest.mark.parametrize("K,n,d", [(2, 2, 2), (4, 8, 2), (3, 6, 3), (4, 8, 4)])
    def test_first_layer_sum(self, K, n, d):
        net = build_w_neg(K, n, d)
        for x in binary_inputs(K)[1:]:
            assert relu(net.weights[0] @ x).sum() == n / K

    @pytest.mark.parametrize("K,n,d", [(2, 2, 2), (2, 4, 3), (5, 10, 2)])
    def test_structure(self, K, n, d):
        net = build_w_neg(K, n, d)
        assert net.hidden_widths == [n] * (d - 1)
        assert all(np.all(b == 0) for b in net.biases) and net.output_bias == 0.0
        assert all(np.all(w == 1) for w in net.weights[1:])
        np.testing.assert_array_equal(net.output_weights, wneg_output_scale(K, n, d))
        assert count_negative_weights(net) == (n // K) * K * (K - 1) // 2

    def test_optimized_matches_formula_without_bias(self):
        a = build_w_neg(2, 4, 2, c_policy="optimized")
        b = build_w_neg(2, 4, 2, c_policy="formula")
        np.testing.assert_allclose(a.output_weights, b.output_weights, rtol=1e-12)

    def test_k2_variant_defaults(self):
        net = build_w_neg_k2(4)
        assert net.output_bias == 0.2
        dist = point_distribution(np.ones(2), 1.0)
        formula = build_w_neg(2, 4, 2, output_bias=0.2)
        assert exact_criterion(net, dist).criterion <= exact_criterion(formula, dist).criterion

    @pytest.mark.parametrize("K,n,d", [(2, 3, 2), (3, 4, 2), (2, 2, 1), (0, 2, 2)])
    def test_invalid(self, K, n, d):
        with pytest.raises(ValueError):
            build_w_neg(K, n, d)

    def test_bad_policy(self):
        with pytest.raises(ValueError):
            build_w_neg(2, 2, 2, c_policy="guess")


class TestUniformGrowth:
    def test_small(self):
        net = build_uniform_growth(2, 2, 2, 1.0)
        assert growth_weight(2, 2, 2, 1.0) == 0.5
        assert forward(net, [1.0, 1.0]) == 1.0
        r = exact_criterion(net, point_distribution(np.ones(2), 1.0))
        assert r.criterion == pytest.approx(0.625, abs=1e-12)

    def test_boundary(self):
        net = build_uniform_growth(3, 2, 3, 12.0)
        assert all(np.all(w == 1.0) for w in net.weights)
        assert forward(net, np.ones(3)) == pytest.approx(12.0, rel=1e-12)

    @given(st.integers(1, 5), st.integers(1, 6), st.integers(2, 5), st.floats(0.0, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_interpolates(self, K, n, d, frac):
        y = frac * K * n ** (d - 1)
        net = build_uniform_growth(K, n, d, y)
        assert forward(net, np.ones(K)) == pytest.approx(y, abs=1e-10, rel=1e-10)
        assert max(np.abs(w).max() for w in net.connection_weights()) <= 1.0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            build_uniform_growth(2, 2, 2, 5.0)
        with pytest.raises(ValueError):
            build_uniform_growth(2, 2, 2, -0.1)


class TestFigure1:
    def test_values(self):
        net = figure1_network()
        assert forward(net, [1.0, -1.0]) == 0.0
        assert forward(net, [1.0, 1.0]) == 4.0
        assert forward(net, [0.0, 0.0]) == 0.0


class TestPointDistribution:
    def test_mixture(self):
        d = point_distribution(np.ones(5), 1.0)
        entries = list(d.entries())
        np.testing.assert_array_equal(entries[0][0], np.ones(5))
        np.testing.assert_array_equal(entries[1][0], np.zeros(5))
        assert [(e[1], e[2]) for e in entries] == [(1.0, 0.5), (0.0, 0.5)]

    def test_point_mass(self):
        d = point_distribution([1.0, -1.0], 8.0, mixture=False)
        assert len(d) == 1 and d.probabilities[0] == 1.0


class TestZeroEmbedding:
    def test_example(self):
        d = zero_embed(point_distribution(np.ones(2), 1.0), 7, (3, 4))
        np.testing.assert_array_equal(d.inputs, [[0, 0, 0, 1, 1, 0, 0], [0] * 7])
        np.testing.assert_array_equal(d.targets, [1.0, 0.0])

    def test_nonzero_fill(self):
        d = zero_embed(point_distribution(np.ones(2), 1.0, mixture=False), 4, (1, 2), fill=[0.5, 2.0])
        np.testing.assert_array_equal(d.inputs, [[0.5, 1, 1, 2.0]])

    def test_identity(self):
        dist = point_distribution([1.0, -1.0], 8.0)
        d = zero_embed(dist, 2, (0, 1))
        np.testing.assert_array_equal(d.inputs, dist.inputs)
        net = figure1_network()
        assert embed_network(net, 2, (0, 1)).allclose(net)

    @given(seeds)
    @settings(max_examples=30, deadline=None)
    def test_criterion_preserved(self, seed):
        net = small_net(seed, max_droppable=8)
        rng = np.random.default_rng(seed)
        K = net.input_dim
        new_dim = K + int(rng.integers(1, 3))
        pos = rng.permutation(new_dim)[:K]
        dist = ExampleDistribution(rng.normal(size=(2, K)), rng.normal(size=2))
        a = exact_criterion(net, dist).criterion
        b = exact_criterion(embed_network(net, new_dim, pos), zero_embed(dist, new_dim, pos)).criterion
        assert b == pytest.approx(a, rel=1e-12, abs=1e-12)

    @given(seeds)
    @settings(max_examples=50, deadline=None)
    def test_patternwise(self, seed):
        net = small_net(seed)
        rng = np.random.default_rng(seed)
        K = net.input_dim
        new_dim = K + 2
        pos = rng.permutation(new_dim)[:K]
        x = rng.normal(size=K)
        big = zero_embed(ExampleDistribution(x[None, :], [0.0]), new_dim, pos).inputs[0]
        im = rng.random(K) < 0.5
        hm = tuple(rng.random(n) < 0.5 for n in net.hidden_widths)
        big_mask = rng.random(new_dim) < 0.5
        big_mask[pos] = im
        a = dropout_forward(net, x, DropoutPattern(im, hm))
        b = dropout_forward(embed_network(net, new_dim, pos), big, DropoutPattern(big_mask, hm))
        assert b == pytest.approx(a, rel=1e-13, abs=1e-13)

    def test_conflicts(self):
        dist = point_distribution(np.ones(2), 1.0)
        with pytest.raises(ValueError):
            zero_embed(dist, 3, (0, 0))
        with pytest.raises(ValueError):
            zero_embed(dist, 3, (0, 3))
        with pytest.raises(ValueError):
            zero_embed(dist, 3, (0, 1), fill=[1.0, 2.0])


class TestConstructionSpec:
    @pytest.mark.parametrize("spec,check", [
        (ConstructionSpec("figure1"), lambda n: n.allclose(figure1_network())),
        (ConstructionSpec("w_neg", K=2, n=4, d=3), lambda n: n.allclose(build_w_neg(2, 4, 3))),
        (ConstructionSpec("w_neg_k2", n=4), lambda n: n.output_bias == 0.2),
        (ConstructionSpec("uniform_growth", K=2, n=2, d=2, y=1.0),
         lambda n: n.allclose(build_uniform_growth(2, 2, 2, 1.0))),
    ])
    def test_build(self, spec, check):
        assert check(spec.build())

    @pytest.mark.parametrize("kw", [dict(kind="nope"), dict(kind="w_neg", K=3, n=4),
                                    dict(kind="w_neg", d=1), dict(kind="uniform_growth", y=100.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ConstructionSpec(**kw)
