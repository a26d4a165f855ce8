"""Scale transformations that leave dropout unchanged, and structural property checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exact import DropoutConfig, criterion, pattern_outputs, psi
from .network import ExampleDistribution, LayeredNetwork, forward_batch

# a pattern-wise identity holds if |a - b| <= ABS_TOL + REL_TOL * |b|
ABS_TOL = 1e-12
REL_TOL = 1e-10


@dataclass(frozen=True)
class LayerScaling:
    factors: tuple[float, ...]

    def __post_init__(self):
        f = tuple(float(c) for c in self.factors)
        if not f or any(not c > 0 for c in f):
            raise ValueError(f"layer scale factors must be positive, got {f}")
        object.__setattr__(self, "factors", f)

    @property
    def product(self) -> float:
        return float(np.prod(self.factors))


def compensate_input_scaling(net: LayeredNetwork, A_diag) -> LayeredNetwork:
    """Network ``W'`` with ``D(W', A x, R) = D(W, x, R)`` for diagonal ``A``."""
    a = np.asarray(A_diag, dtype=np.float64)
    if a.shape != (net.input_dim,):
        raise ValueError(f"A_diag must have length {net.input_dim}")
    if np.any(a == 0):
        raise ValueError("diagonal scaling must be full rank (no zero entries)")
    return net.replace(weights=(net.weights[0] / a, *net.weights[1:]))


def rescale_layers(net: LayeredNetwork, scaling) -> LayeredNetwork:
    """Scale layer ``j``'s weights by ``c_j`` and its biases by ``c_1 ... c_j``.

    The output of every dropout pattern is multiplied by the product of all factors.
    """
    if not isinstance(scaling, LayerScaling):
        scaling = LayerScaling(tuple(scaling))
    c = scaling.factors
    if len(c) != net.depth:
        raise ValueError(f"need {net.depth} factors (one per layer), got {len(c)}")
    cum = np.cumprod(c)
    weights = tuple(cj * w for cj, w in zip(c, net.weights))
    biases = tuple(cum[j] * b for j, b in enumerate(net.biases))
    return LayeredNetwork(weights, biases, c[-1] * net.output_weights, cum[-1] * net.output_bias)


def rescale_output_layer(net: LayeredNetwork, c: float) -> LayeredNetwork:
    if not c > 0:
        raise ValueError(f"output scale must be positive, got {c!r}")
    return net.replace(output_weights=c * net.output_weights, output_bias=c * net.output_bias)


def count_negative_weights(net: LayeredNetwork) -> int:
    """Connection weights strictly below zero; biases are not counted."""
    return int(sum(np.count_nonzero(w < 0) for w in net.connection_weights()))


def count_negative_biases(net: LayeredNetwork) -> int:
    return int(sum(np.count_nonzero(b < 0) for b in net.biases) + (net.output_bias < 0))


def is_nonnegative(net: LayeredNetwork) -> bool:
    return count_negative_weights(net) == 0


@dataclass(frozen=True)
class SupermodularReport:
    trials: int
    violations: int
    worst_slack: float


def check_supermodular(net: LayeredNetwork, trials: int = 1000, seed: int = 0,
                       tol: float = 1e-9) -> SupermodularReport:
    """Probe ``f(x) + f(x + d1 + d2) >= f(x + d1) + f(x + d2)`` for ``d1, d2 >= 0``.

    Only claimed for networks whose connection weights are all non-negative.
    """
    if not is_nonnegative(net):
        raise ValueError("supermodularity is only guaranteed for non-negative connection weights")
    rng = np.random.default_rng(seed)
    K = net.input_dim
    x = rng.uniform(-1.0, 1.0, size=(trials, K))
    d1 = rng.uniform(0.0, 1.0, size=(trials, K))
    d2 = rng.uniform(0.0, 1.0, size=(trials, K))
    f = lambda z: forward_batch(net, z)  # noqa: E731
    slack = f(x) + f(x + d1 + d2) - f(x + d1) - f(x + d2)
    return SupermodularReport(trials, int(np.count_nonzero(slack < -tol)), float(slack.min()))


def check_monotone(net: LayeredNetwork, trials: int = 1000, seed: int = 0) -> int:
    """Count probes where ``f(x + delta) < f(x)`` for some ``delta >= 0``."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(trials, net.input_dim))
    delta = rng.uniform(0.0, 1.0, size=x.shape)
    return int(np.count_nonzero(forward_batch(net, x + delta) < forward_batch(net, x)))


def psi_convexity_slack(net: LayeredNetwork, config: DropoutConfig = DropoutConfig()) -> float:
    """``min over ell`` of ``psi(ell+1) - 2 psi(ell) + psi(ell-1)``; non-negative for monotone nets."""
    values = [psi(net, ell, config) for ell in range(net.input_dim + 1)]
    second = np.diff(values, n=2)
    return float(second.min()) if second.size else 0.0


def scaling_family(net: LayeredNetwork, dist: ExampleDistribution, ts: Sequence[float],
                   layers: tuple[int, int] = (0, 1),
                   config: DropoutConfig = DropoutConfig()) -> list[tuple[float, float]]:
    """``(t, J_D)`` along ``t -> rescale_layers`` with factor ``t`` on one layer and ``1/t`` on another."""
    i, j = layers
    rows = []
    for t in ts:
        c = np.ones(net.depth)
        c[i] *= t
        c[j] /= t
        rows.append((float(t), criterion(rescale_layers(net, c), dist, config).criterion))
    return rows


# --------------------------------------------------------------------------
# randomized suite


def random_network(rng: np.random.Generator, K: int, widths: Sequence[int],
                   nonnegative: bool = False, bias_scale: float = 0.5,
                   nonnegative_biases: bool = False) -> LayeredNetwork:
    """Gaussian weights, or uniform on [0, 1) when ``nonnegative``; Gaussian biases."""
    sizes = [K, *widths]
    draw = (lambda shape: rng.uniform(0.0, 1.0, shape)) if nonnegative else \
        (lambda shape: rng.normal(0.0, 1.0, shape))
    weights = tuple(draw((sizes[j + 1], sizes[j])) for j in range(len(widths)))
    bias = (lambda n: np.abs(rng.normal(0.0, bias_scale, n))) if nonnegative_biases else \
        (lambda n: rng.normal(0.0, bias_scale, n))
    biases = tuple(bias(n) for n in widths)
    return LayeredNetwork(weights, biases, draw(widths[-1]), float(bias(1)[0]))


def random_small_network(rng: np.random.Generator, nonnegative: bool = False,
                         max_droppable: int = 10, nonnegative_biases: bool = False) -> LayeredNetwork:
    while True:
        K = int(rng.integers(1, 4))
        widths = [int(w) for w in rng.integers(1, 4, size=int(rng.integers(1, 4)))]
        if K + sum(widths) <= max_droppable:
            return random_network(rng, K, widths, nonnegative,
                                  nonnegative_biases=nonnegative_biases)


def _worst(a: np.ndarray, b: np.ndarray) -> tuple[float, float, bool]:
    diff = np.abs(a - b)
    rel = diff / np.maximum(np.abs(b), np.finfo(float).tiny)
    ok = bool(np.all(diff <= ABS_TOL + REL_TOL * np.abs(b)))
    return float(diff.max()), float(np.where(diff > 0, rel, 0.0).max()), ok


@dataclass
class _Tally:
    trials: int = 0
    max_abs: float = 0.0
    max_rel: float = 0.0
    passed: bool = True

    def add(self, a, b):
        m_abs, m_rel, ok = _worst(np.asarray(a, float), np.asarray(b, float))
        self.max_abs = max(self.max_abs, m_abs)
        self.max_rel = max(self.max_rel, m_rel)
        self.passed &= ok

    def as_dict(self):
        return {"trials": self.trials, "max_abs": self.max_abs, "max_rel": self.max_rel,
                "passed": self.passed}


def invariance_suite(trials: int = 100, seed: int = 0, p: float = 0.5) -> dict:
    """Pattern-wise checks of input scaling, layer rescaling and output scaling on random nets."""
    rng = np.random.default_rng(seed)
    config = DropoutConfig(keep_probability=p)
    t1, t2, t2_ratio, t3 = _Tally(), _Tally(), _Tally(), _Tally()
    for _ in range(trials):
        net = random_small_network(rng)
        K = net.input_dim
        dist = ExampleDistribution(rng.normal(size=(3, K)), rng.normal(size=3),
                                   rng.dirichlet(np.ones(3)))
        x = dist.inputs[0]

        # input scaling
        a = rng.uniform(0.1, 10.0, K) * rng.choice([-1.0, 1.0], K)
        net_a = compensate_input_scaling(net, a)
        t1.add(pattern_outputs(net_a, a * x, p)[0], pattern_outputs(net, x, p)[0])
        r, r_a = criterion(net, dist, config), criterion(net_a, dist.scale_inputs(a), config)
        t1.add([r_a.criterion, r_a.risk], [r.criterion, r.risk])
        t1.trials += 1

        # layer rescaling with unit product, then arbitrary factors
        c = rng.uniform(0.2, 5.0, net.depth)
        c[-1] = 1.0 / np.prod(c[:-1])
        net_c = rescale_layers(net, c)
        t2.add(pattern_outputs(net_c, x, p)[0], pattern_outputs(net, x, p)[0])
        r_c = criterion(net_c, dist, config)
        t2.add([r_c.criterion, r_c.risk, r_c.penalty], [r.criterion, r.risk, r.penalty])
        t2.trials += 1
        g = rng.uniform(0.2, 5.0, net.depth)
        t2_ratio.add(pattern_outputs(rescale_layers(net, g), x, p)[0],
                     np.prod(g) * pattern_outputs(net, x, p)[0])
        t2_ratio.trials += 1

        # output scaling: (D(W) - y)^2 == (D(W') - c y)^2 / c^2
        c_out = float(rng.uniform(0.1, 10.0))
        y = dist.targets[0]
        lhs = (pattern_outputs(net, x, p)[0] - y) ** 2
        rhs = (pattern_outputs(rescale_output_layer(net, c_out), x, p)[0] - c_out * y) ** 2 / c_out**2
        t3.add(rhs, lhs)
        t3.trials += 1

    return {
        "input_scaling": t1.as_dict(),
        "layer_rescaling": t2.as_dict(),
        "layer_rescaling_ratio": t2_ratio.as_dict(),
        "output_scaling": t3.as_dict(),
    }
