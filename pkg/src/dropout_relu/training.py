"""SGD training with dropout, weight decay, or no regularization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .network import DropoutPattern, ExampleDistribution, LayeredNetwork

REGULARIZERS = ("none", "dropout", "weight_decay")


class TrainingDiverged(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters.  Learning rate at step ``t`` is ``lr_base / (1 + lr_decay * t)``."""

    regularizer: str = "none"
    keep_probability: float = 0.5
    weight_decay: float = 0.0
    max_iters: int = 10_000
    lr_base: float = 0.1
    lr_decay: float = 0.1
    momentum: float = 0.0
    seed: int = 0
    sampling: str = "uniform"
    init_gain: float = 1.0

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.keep_probability < 1.0:
            raise ValueError("keep_probability must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.sampling not in ("uniform", "cyclic"):
            raise ValueError("sampling must be 'uniform' or 'cyclic'")

    def learning_rates(self) -> np.ndarray:
        t = np.arange(self.max_iters, dtype=np.float64)
        return self.lr_base / (1.0 + self.lr_decay * t)


def init_network(K: int, n: int, d: int, seed=0, gain: float = 1.0,
                 widths: Optional[list[int]] = None) -> LayeredNetwork:
    """Weights and biases uniform on ``+-gain/sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    sizes = [K, *(widths if widths is not None else [n] * (d - 1)), 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = gain / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return LayeredNetwork(tuple(weights[:-1]), tuple(biases[:-1]), weights[-1][0], biases[-1][0])


def pack(net: LayeredNetwork):
    """Padded ``(W, B, widths)`` arrays for the compiled kernels."""
    widths = np.array([net.input_dim, *net.hidden_widths, 1], dtype=np.int64)
    L, maxw = len(widths) - 1, int(widths.max())
    W = np.zeros((L, maxw, maxw))
    B = np.zeros((L, maxw))
    mats = [*net.weights, net.output_weights[None, :]]
    vecs = [*net.biases, np.array([net.output_bias])]
    for l, (m, v) in enumerate(zip(mats, vecs)):
        W[l, : m.shape[0], : m.shape[1]] = m
        B[l, : v.size] = v
    return W, B, widths


def unpack(W: np.ndarray, B: np.ndarray, widths: np.ndarray) -> LayeredNetwork:
    L = len(widths) - 1
    mats = [W[l, : widths[l + 1], : widths[l]].copy() for l in range(L)]
    vecs = [B[l, : widths[l + 1]].copy() for l in range(L)]
    return LayeredNetwork(tuple(mats[:-1]), tuple(vecs[:-1]), mats[-1][0], float(vecs[-1][0]))


def _mask_array(net: LayeredNetwork, pattern: Optional[DropoutPattern], maxw: int) -> np.ndarray:
    masks = np.ones((net.depth, maxw), dtype=np.uint8)
    if pattern is not None:
        pattern.check(net)
        for l, m in enumerate([pattern.input_mask, *pattern.hidden_masks]):
            masks[l, : m.size] = m
    return masks


def loss_and_gradients(net: LayeredNetwork, x, y: float, pattern: Optional[DropoutPattern] = None,
                       p: float = 0.5) -> tuple[float, LayeredNetwork]:
    """Square loss on ``(x, y)`` under ``pattern`` (no dropout if None) and its gradient.

    The gradient is returned as a network whose parameters are the partial derivatives.
    """
    W, B, widths = pack(net)
    L, maxw = W.shape[0], W.shape[1]
    masks = _mask_array(net, pattern, maxw)
    inv_p = 1.0 if pattern is None else 1.0 / p
    gW, gB = np.zeros_like(W), np.zeros_like(B)
    scratch = [np.zeros((L, maxw)) for _ in range(3)]
    loss = _kernels.loss_and_grad(W, B, widths, np.asarray(x, dtype=np.float64), float(y),
                                  masks, inv_p, *scratch, gW, gB)
    return float(loss), unpack(gW, gB, widths)


def _as_dataset(data) -> ExampleDistribution:
    if isinstance(data, ExampleDistribution):
        return data
    X, Y = data
    return ExampleDistribution(X, Y)


def sgd_train(net0: LayeredNetwork, dataset, config: TrainConfig) -> LayeredNetwork:
    """Train a copy of ``net0`` with per-example SGD; ``net0`` is left untouched.

    Each step picks one example (by the dataset probabilities, or cyclically),
    draws a fresh dropout pattern when training with dropout, and backpropagates
    through the kept nodes only.  Weight decay adds ``lambda * w`` to the
    gradient of every connection weight, never to biases.
    """
    data = _as_dataset(dataset)
    if data.input_dim != net0.input_dim:
        raise ValueError(f"dataset has {data.input_dim} features, network expects {net0.input_dim}")
    W, B, widths = pack(net0)
    L, maxw = W.shape[0], W.shape[1]
    rng = np.random.default_rng(config.seed)
    T = config.max_iters
    if config.sampling == "uniform":
        order = rng.choice(len(data), size=T, p=data.probabilities)
    else:
        order = np.arange(T) % len(data)
    if config.regularizer == "dropout":
        masks = (rng.random((T, L, maxw)) < config.keep_probability).astype(np.uint8)
        inv_p = 1.0 / config.keep_probability
    else:
        masks = np.ones((1, L, maxw), dtype=np.uint8)
        inv_p = 1.0
    wd = config.weight_decay if config.regularizer == "weight_decay" else 0.0
    failed = _kernels.sgd_loop(W, B, widths, np.ascontiguousarray(data.inputs),
                               np.ascontiguousarray(data.targets), order.astype(np.int64),
                               masks, inv_p, config.learning_rates(), float(config.momentum), wd)
    if failed >= 0:
        raise TrainingDiverged(f"loss exceeded {_kernels.DIVERGENCE_LIMIT:g} at step {failed}")
    return unpack(W, B, widths)
