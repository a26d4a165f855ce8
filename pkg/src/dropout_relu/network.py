"""Fully connected ReLU networks with a linear output node.

A network has ``K`` inputs, ``d - 1`` hidden ReLU layers and one linear
output.  Dropout acts on every non-output node: a dropped node outputs 0,
a kept node's output is divided by the keep probability ``p``.  Biases are
never dropped or rescaled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when arrays do not fit the network they are used with."""


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LayeredNetwork:
    """Weights ``W_1..W_{d-1}``, biases ``b_1..b_{d-1}``, output weights ``w`` and bias ``b``.

    ``weights[j]`` has shape ``(n_{j+1}, n_j)`` with ``n_0 = K``.  Instances are
    immutable; transformations build new networks.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    output_weights: np.ndarray
    output_bias: float = 0.0

    def __post_init__(self):
        weights = tuple(_frozen(w, 2, f"weights[{j}]") for j, w in enumerate(self.weights))
        biases = tuple(_frozen(b, 1, f"biases[{j}]") for j, b in enumerate(self.biases))
        out_w = _frozen(self.output_weights, 1, "output_weights")
        out_b = float(self.output_bias)
        if not weights:
            raise ShapeError("a network needs at least one hidden layer")
        if len(biases) != len(weights):
            raise ShapeError(f"{len(weights)} weight matrices but {len(biases)} bias vectors")
        for j, (w, b) in enumerate(zip(weights, biases)):
            if b.shape != (w.shape[0],):
                raise ShapeError(f"biases[{j}] has shape {b.shape}, expected ({w.shape[0]},)")
            if j > 0 and w.shape[1] != weights[j - 1].shape[0]:
                raise ShapeError(
                    f"weights[{j}] expects {w.shape[1]} inputs but layer {j} has "
                    f"{weights[j - 1].shape[0]} nodes"
                )
        if out_w.shape != (weights[-1].shape[0],):
            raise ShapeError(
                f"output_weights has shape {out_w.shape}, expected ({weights[-1].shape[0]},)"
            )
        if not np.isfinite(out_b):
            raise ValueError("output_bias must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "output_weights", out_w)
        object.__setattr__(self, "output_bias", out_b)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def hidden_widths(self) -> list[int]:
        return [w.shape[0] for w in self.weights]

    @property
    def depth(self) -> int:
        """Number of layers counting the output but not the inputs."""
        return len(self.weights) + 1

    @property
    def droppable_count(self) -> int:
        return self.input_dim + sum(self.hidden_widths)

    def replace(self, **changes) -> "LayeredNetwork":
        fields = dict(
            weights=self.weights,
            biases=self.biases,
            output_weights=self.output_weights,
            output_bias=self.output_bias,
        )
        fields.update(changes)
        return LayeredNetwork(**fields)

    def connection_weights(self) -> list[np.ndarray]:
        """All connection weights, layer by layer, output weights last."""
        return [*self.weights, self.output_weights]

    def squared_weight_norm(self) -> float:
        """Sum of squared connection weights; biases are excluded."""
        return float(sum(np.sum(w * w) for w in self.connection_weights()))

    def allclose(self, other: "LayeredNetwork", atol: float = 0.0) -> bool:
        if self.hidden_widths != other.hidden_widths or self.input_dim != other.input_dim:
            return False
        pairs = list(zip(self.connection_weights(), other.connection_weights()))
        pairs += list(zip(self.biases, other.biases))
        pairs.append((np.array(self.output_bias), np.array(other.output_bias)))
        return all(np.allclose(a, b, rtol=0.0, atol=atol) for a, b in pairs)


@dataclass(frozen=True, eq=False)
class DropoutPattern:
    """Keep indicators for the inputs and for every hidden layer (the output is always kept)."""

    input_mask: np.ndarray
    hidden_masks: tuple[np.ndarray, ...]

    def __post_init__(self):
        inp = np.asarray(self.input_mask, dtype=bool)
        hid = tuple(np.asarray(m, dtype=bool) for m in self.hidden_masks)
        object.__setattr__(self, "input_mask", inp)
        object.__setattr__(self, "hidden_masks", hid)

    @classmethod
    def all_kept(cls, net: LayeredNetwork) -> "DropoutPattern":
        return cls(np.ones(net.input_dim, bool), tuple(np.ones(n, bool) for n in net.hidden_widths))

    @classmethod
    def all_dropped(cls, net: LayeredNetwork) -> "DropoutPattern":
        return cls(np.zeros(net.input_dim, bool), tuple(np.zeros(n, bool) for n in net.hidden_widths))

    @classmethod
    def from_bits(cls, net: LayeredNetwork, bits: Sequence[int]) -> "DropoutPattern":
        """Split a flat bit vector ordered (inputs, layer 1, ..., layer d-1)."""
        bits = np.asarray(bits, dtype=bool)
        if bits.shape != (net.droppable_count,):
            raise ShapeError(f"expected {net.droppable_count} bits, got {bits.shape}")
        cuts = np.cumsum([net.input_dim, *net.hidden_widths])
        parts = np.split(bits, cuts[:-1])
        return cls(parts[0], tuple(parts[1:]))

    def check(self, net: LayeredNetwork) -> None:
        if self.input_mask.shape != (net.input_dim,):
            raise ShapeError(
                f"input mask has shape {self.input_mask.shape}, network has {net.input_dim} inputs"
            )
        if len(self.hidden_masks) != len(net.hidden_widths):
            raise ShapeError(
                f"pattern has {len(self.hidden_masks)} hidden masks, "
                f"network has {len(net.hidden_widths)} hidden layers"
            )
        for j, (m, n) in enumerate(zip(self.hidden_masks, net.hidden_widths)):
            if m.shape != (n,):
                raise ShapeError(f"hidden mask {j} has shape {m.shape}, layer has {n} nodes")


@dataclass(frozen=True, eq=False)
class ExampleDistribution:
    """A finite distribution over ``(x, y)`` examples."""

    inputs: np.ndarray
    targets: np.ndarray
    probabilities: np.ndarray = field(default=None)

    def __post_init__(self):
        xs = np.array(self.inputs, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[None, :]
        if xs.ndim != 2 or xs.shape[0] == 0:
            raise ShapeError(f"inputs must be a nonempty (m, K) array, got shape {xs.shape}")
        ys = np.array(self.targets, dtype=np.float64).reshape(-1)
        if ys.shape != (xs.shape[0],):
            raise ShapeError(f"{xs.shape[0]} inputs but {ys.size} targets")
        if self.probabilities is None:
            ps = np.full(xs.shape[0], 1.0 / xs.shape[0])
        else:
            ps = np.array(self.probabilities, dtype=np.float64).reshape(-1)
        if ps.shape != ys.shape:
            raise ShapeError(f"{ys.size} examples but {ps.size} probabilities")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("examples must be finite")
        if np.any(ps < 0) or abs(ps.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be non-negative and sum to 1 (sum={ps.sum()!r})")
        for name, arr in (("inputs", xs), ("targets", ys), ("probabilities", ps)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_entries(cls, entries) -> "ExampleDistribution":
        """Build from ``(x, y, weight)`` triples."""
        entries = list(entries)
        if not entries:
            raise ValueError("a distribution needs at least one example")
        xs, ys, ws = zip(*entries)
        return cls(np.array(xs, dtype=np.float64), ys, ws)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def __len__(self) -> int:
        return self.targets.size

    def entries(self):
        for x, y, w in zip(self.inputs, self.targets, self.probabilities):
            yield x, float(y), float(w)

    def scale_inputs(self, scale) -> "ExampleDistribution":
        """The distribution of ``(A x, y)`` for diagonal ``A`` given as a vector or scalar."""
        return ExampleDistribution(self.inputs * np.asarray(scale, dtype=float), self.targets,
                                   self.probabilities)

    def scale_targets(self, c: float) -> "ExampleDistribution":
        return ExampleDistribution(self.inputs, self.targets * c, self.probabilities)


def relu(a):
    return np.maximum(a, 0.0)


def _check_input(net: LayeredNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ShapeError(f"input has shape {x.shape}, network expects ({net.input_dim},)")
    return x


def forward(net: LayeredNetwork, x) -> float:
    """The network's output on ``x`` without dropout."""
    h = _check_input(net, x)
    for w, b in zip(net.weights, net.biases):
        h = relu(w @ h + b)
    return float(net.output_weights @ h + net.output_bias)


def forward_batch(net: LayeredNetwork, xs) -> np.ndarray:
    """Row-wise :func:`forward` for an ``(m, K)`` array."""
    h = np.asarray(xs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.input_dim:
        raise ShapeError(f"inputs have shape {h.shape}, network expects (m, {net.input_dim})")
    for w, b in zip(net.weights, net.biases):
        h = relu(h @ w.T + b)
    return h @ net.output_weights + net.output_bias


def check_keep_probability(p: float) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"keep probability must lie in (0, 1), got {p!r}")
    return p


def dropout_forward(net: LayeredNetwork, x, pattern: DropoutPattern, p: float = 0.5) -> float:
    """Output ``D(W, x, R)`` of ``net`` on ``x`` under dropout pattern ``pattern``."""
    x = _check_input(net, x)
    pattern.check(net)
    p = check_keep_probability(p)
    h = np.where(pattern.input_mask, x / p, 0.0)
    for w, b, mask in zip(net.weights, net.biases, pattern.hidden_masks):
        h = relu(w @ h + b)
        h = np.where(mask, h / p, 0.0)
    return float(net.output_weights @ h + net.output_bias)


def dropout_forward_batch(net: LayeredNetwork, x, input_masks, hidden_masks, p: float) -> np.ndarray:
    """Outputs on one input ``x`` for a batch of patterns.

    ``input_masks`` is ``(B, K)``; ``hidden_masks[j]`` is ``(B, n_j)``.
    """
    x = _check_input(net, x)
    h = np.where(input_masks, x / p, 0.0)
    for w, b, mask in zip(net.weights, net.biases, hidden_masks):
        h = relu(h @ w.T + b)
        h = np.where(mask, h / p, 0.0)
    return h @ net.output_weights + net.output_bias


def risk(net: LayeredNetwork, dist: ExampleDistribution) -> float:
    """Expected square loss of ``net`` under ``dist`` without dropout."""
    if dist.input_dim != net.input_dim:
        raise ShapeError(f"distribution has {dist.input_dim} features, network expects {net.input_dim}")
    residual = forward_batch(net, dist.inputs) - dist.targets
    return float(np.sum(dist.probabilities * residual**2))
