"""Explicit networks and example distributions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .closed_forms import growth_weight, wneg_output_scale
from .exact import DropoutConfig, optimize_output_scale
from .network import ExampleDistribution, LayeredNetwork


def first_one_gadget(K: int) -> np.ndarray:
    """``K x K`` block whose row ``i`` is ``-1`` before ``i``, ``1`` at ``i`` and 0 after.

    On a binary input exactly one ReLU of the block outputs 1 (the one at the
    first nonzero coordinate) unless the input is all zeros.
    """
    if K < 1:
        raise ValueError("K must be positive")
    return np.eye(K) - np.tril(np.ones((K, K)), k=-1)


def figure1_network() -> LayeredNetwork:
    """Two inputs, two ReLUs, linear output; every weight 1, every bias 0."""
    return LayeredNetwork(weights=(np.ones((2, 2)),), biases=(np.zeros(2),),
                          output_weights=np.ones(2), output_bias=0.0)


def point_distribution(x, y: float, mixture: bool = True) -> ExampleDistribution:
    """``P_(x,y)``: half on ``(x, y)`` and half on ``(0, 0)``; or a point mass if ``mixture=False``."""
    x = np.asarray(x, dtype=np.float64)
    if not mixture:
        return ExampleDistribution(x[None, :], [y], [1.0])
    return ExampleDistribution(np.stack([x, np.zeros_like(x)]), [y, 0.0], [0.5, 0.5])


def build_w_neg(K: int, n: int, d: int, c_policy: str = "formula", output_bias: float = 0.0,
                config: Optional[DropoutConfig] = None) -> LayeredNetwork:
    """Negative-weight network: ``n/K`` first-one gadgets, all-ones middle layers, output weights ``c``.

    ``c_policy='formula'`` uses the closed-form minimiser for zero output bias;
    ``'optimized'`` minimises J_D on P_(1,1) over ``c`` with the bias in place.
    """
    if d < 2:
        raise ValueError("depth d must be at least 2")
    if K < 1 or n < 1 or n % K:
        raise ValueError(f"width n={n} must be a positive multiple of K={K}")
    first = np.tile(first_one_gadget(K), (n // K, 1))
    weights = (first, *[np.ones((n, n))] * (d - 2))
    biases = tuple(np.zeros(n) for _ in range(d - 1))
    net = LayeredNetwork(weights, biases, np.ones(n), output_bias)
    if c_policy == "formula":
        c = wneg_output_scale(K, n, d)
    elif c_policy == "optimized":
        c = optimize_output_scale(net, point_distribution(np.ones(K), 1.0),
                                  config or DropoutConfig()).c_star
    else:
        raise ValueError(f"c_policy must be 'formula' or 'optimized', got {c_policy!r}")
    return net.replace(output_weights=np.full(n, c))


def build_w_neg_k2(n: int, d: int = 2, output_bias: float = 0.2, c_policy: str = "optimized",
                   config: Optional[DropoutConfig] = None) -> LayeredNetwork:
    return build_w_neg(2, n, d, c_policy=c_policy, output_bias=output_bias, config=config)


def build_uniform_growth(K: int, n: int, d: int, y: float) -> LayeredNetwork:
    """Every weight equal to ``c`` with ``c^d K n^(d-1) = y``; biases zero."""
    c = growth_weight(K, n, d, y)
    widths = [K] + [n] * (d - 1)
    weights = tuple(np.full((widths[j + 1], widths[j]), c) for j in range(d - 1))
    return LayeredNetwork(weights, tuple(np.zeros(n) for _ in range(d - 1)), np.full(n, c), 0.0)


def _check_positions(K: int, new_dim: int, positions: Sequence[int]) -> np.ndarray:
    pos = np.asarray(positions, dtype=int)
    if pos.shape != (K,):
        raise ValueError(f"need {K} positions, got {pos.size}")
    if len(set(pos.tolist())) != K or pos.min(initial=0) < 0 or pos.max(initial=0) >= new_dim:
        raise ValueError(f"positions {pos.tolist()} must be distinct indices below {new_dim}")
    return pos


def zero_embed(dist: ExampleDistribution, new_dim: int, positions: Sequence[int],
               fill=None) -> ExampleDistribution:
    """Place each example's features at ``positions`` and ``fill`` in the remaining coordinates."""
    K = dist.input_dim
    pos = _check_positions(K, new_dim, positions)
    rest = np.setdiff1d(np.arange(new_dim), pos)
    fill = np.zeros(rest.size) if fill is None else np.asarray(fill, dtype=np.float64)
    if fill.shape != rest.shape:
        raise ValueError(f"fill must have length {rest.size}, got {fill.size}")
    xs = np.empty((len(dist), new_dim))
    xs[:, pos] = dist.inputs
    xs[:, rest] = fill
    return ExampleDistribution(xs, dist.targets, dist.probabilities)


def embed_network(net: LayeredNetwork, new_dim: int, positions: Sequence[int]) -> LayeredNetwork:
    """Same network reading its inputs at ``positions``, with zero weight on the new features."""
    pos = _check_positions(net.input_dim, new_dim, positions)
    first = np.zeros((net.hidden_widths[0], new_dim))
    first[:, pos] = net.weights[0]
    return net.replace(weights=(first, *net.weights[1:]))


KINDS = ("figure1", "w_neg", "w_neg_k2", "uniform_growth")


@dataclass(frozen=True)
class ConstructionSpec:
    kind: str
    K: int = 2
    n: int = 2
    d: int = 2
    y: float = 1.0
    output_bias: Optional[float] = None
    c_policy: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown construction {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.kind in ("w_neg", "w_neg_k2"):
            K = 2 if self.kind == "w_neg_k2" else self.K
            if self.d < 2 or self.n < 1 or self.n % K:
                raise ValueError(f"w_neg needs d >= 2 and n a positive multiple of K={K}")
        if self.kind == "uniform_growth" and not 0 <= self.y <= self.K * self.n ** (self.d - 1):
            raise ValueError(f"y={self.y} outside [0, K n^(d-1)]")

    def build(self, config: Optional[DropoutConfig] = None) -> LayeredNetwork:
        if self.kind == "figure1":
            return figure1_network()
        if self.kind == "w_neg":
            return build_w_neg(self.K, self.n, self.d, self.c_policy or "formula",
                               0.0 if self.output_bias is None else self.output_bias, config)
        if self.kind == "w_neg_k2":
            return build_w_neg_k2(self.n, self.d,
                                  0.2 if self.output_bias is None else self.output_bias,
                                  self.c_policy or "optimized", config)
        return build_uniform_growth(self.K, self.n, self.d, self.y)
