import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import seeds, small_net
from dropout_relu import io
from dropout_relu.constructions import build_w_neg, point_distribution
from dropout_relu.network import ExampleDistribution, LayeredNetwork


def same_bits(a, b):
    return all(np.array_equal(np.asarray(u).view(np.uint64), np.asarray(v).view(np.uint64))
               for u, v in zip(a, b))


def net_arrays(net):
    return [*net.weights, *net.biases, net.output_weights, np.array([net.output_bias])]


class TestNetworkJSON:
    @given(seeds)
    @settings(max_examples=50, deadline=None)
    def test_round_trip_bit_exact(self, seed):
        net = small_net(seed)
        back = io.network_from_dict(json.loads(io.dumps(io.network_to_dict(net))))
        assert same_bits(net_arrays(net), net_arrays(back))

    def test_fields(self):
        doc = io.network_to_dict(build_w_neg(2, 4, 3))
        assert set(doc) == {"input_dim", "hidden_widths", "weights", "biases", "output_weights",
                            "output_bias"}
        assert doc["input_dim"] == 2 and doc["hidden_widths"] == [4, 4]
        assert doc["weights"][0][1] == [-1.0, 1.0]

    def test_awkward_floats(self, tmp_path):
        vals = np.array([0.1, 1 / 3, 5e-324, 1.7976931348623157e308, -0.0, 3 * 2.0**-1074])
        net = LayeredNetwork((vals[None, :],), (np.array([-0.0]),), np.array([1e-300]), 2.0 / 3)
        io.save_network(net, tmp_path / "n.json")
        assert same_bits(net_arrays(net), net_arrays(io.load_network(tmp_path / "n.json")))

    def test_missing_field(self):
        doc = io.network_to_dict(small_net(2))
        del doc["biases"]
        with pytest.raises(io.FormatError, match="biases"):
            io.network_from_dict(doc)

    def test_inconsistent_dims(self):
        doc = io.network_to_dict(small_net(2))
        doc["input_dim"] += 1
        with pytest.raises(io.FormatError):
            io.network_from_dict(doc)

    def test_bad_shapes(self):
        doc = io.network_to_dict(small_net(2))
        doc["output_weights"] = [1.0] * 17
        with pytest.raises(io.FormatError):
            io.network_from_dict(doc)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(io.FormatError, match="invalid JSON"):
            io.load_network(tmp_path / "bad.json")


class TestDistribution:
    @pytest.mark.parametrize("suffix", [".json", ".csv"])
    def test_round_trip(self, tmp_path, suffix):
        rng = np.random.default_rng(0)
        dist = ExampleDistribution(rng.normal(size=(4, 3)), rng.normal(size=4), rng.dirichlet(np.ones(4)))
        io.save_distribution(dist, tmp_path / f"d{suffix}")
        back = io.load_distribution(tmp_path / f"d{suffix}")
        assert same_bits([dist.inputs, dist.targets, dist.probabilities],
                         [back.inputs, back.targets, back.probabilities])

    def test_csv_header(self):
        text = io.distribution_to_csv(point_distribution([1.0, -1.0], 8.0))
        assert text.splitlines()[0] == "x1,x2,y,weight"

    def test_weights_normalised(self):
        d = io.distribution_from_records([{"x": [1], "y": 1, "weight": 2}, {"x": [0], "y": 0, "weight": 6}])
        np.testing.assert_array_equal(d.probabilities, [0.25, 0.75])

    def test_weight_defaults_to_one(self):
        d = io.distribution_from_records([{"x": [1, 2], "y": 1}, {"x": [0, 0], "y": 0}])
        np.testing.assert_array_equal(d.probabilities, [0.5, 0.5])

    @pytest.mark.parametrize("records", [[], {"x": [1]}, [{"y": 1}], [{"x": [1], "y": 1}, {"x": [1, 2], "y": 0}],
                                         [{"x": [1], "y": 1, "weight": -1}]])
    def test_malformed_records(self, records):
        with pytest.raises(io.FormatError):
            io.distribution_from_records(records)

    @pytest.mark.parametrize("text", ["x1,y,weight\n", "a,b,c\n1,2,3\n", "x1,y,weight\n1,2\n",
                                      "x1,y,weight\n1,zz,1\n"])
    def test_malformed_csv(self, text):
        with pytest.raises(io.FormatError):
            io.distribution_from_csv(text)


class TestTables:
    @given(st.lists(st.tuples(st.integers(-5, 5), st.floats(allow_nan=False, allow_infinity=False),
                              st.sampled_from(["gt", "lt", "eq"])), min_size=1, max_size=10))
    @settings(max_examples=50)
    def test_csv_round_trip(self, rows):
        dicts = [{"a": a, "b": b, "c": c} for a, b, c in rows]
        back = io.csv_to_rows(io.rows_to_csv(dicts, ("a", "b", "c")))
        assert back == [{"a": a, "b": float(b), "c": c} for a, b, c in rows]
