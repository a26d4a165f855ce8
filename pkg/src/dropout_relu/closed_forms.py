"""Closed-form values for the explicit constructions and the depth-2 weight-decay optimum.

All dropout formulas here assume keep probability 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import ExampleDistribution, LayeredNetwork, forward, risk

# For K = 2, every non-negative network has J_D >= 1/8 on P_((1,1),1), while the
# biased negative-weight construction tends to 1/10 as the width grows.
K2_NONNEGATIVE_LOWER_BOUND = 1.0 / 8.0
K2_WNEG_LIMIT = 1.0 / 10.0


def _check_architecture(K: int, n: int, d: int) -> None:
    if K < 1 or n < 1 or d < 2:
        raise ValueError(f"need K >= 1, n >= 1, d >= 2; got K={K}, n={n}, d={d}")
    if n % K:
        raise ValueError(f"width n={n} must be a multiple of K={K}")


def wneg_output_scale(K: int, n: int, d: int) -> float:
    """Output weight ``c`` of the negative-weight network that minimises its J_D."""
    _check_architecture(K, n, d)
    return K / (2.0 * n ** (d - 1) * (1.0 + K / n) * (1.0 + 1.0 / n) ** (d - 2))


def wneg_criterion_formula(K: int, n: int, d: int) -> float:
    """J_D of the negative-weight network on P_(1,1)."""
    _check_architecture(K, n, d)
    return 0.5 * (1.0 - (1.0 - 2.0**-K) / ((1.0 + K / n) * (1.0 + 1.0 / n) ** (d - 2)))


def nonnegative_lower_bound(K: int) -> float:
    """Lower bound ``1/(36K)`` on J_D(P_(1,1)) for non-negative networks (proved for K > 18)."""
    return 1.0 / (36.0 * K)


# --------------------------------------------------------------------------
# uniform growth network


def _check_growth(K: int, n: int, d: int, y: float) -> None:
    if K < 1 or n < 1 or d < 2:
        raise ValueError(f"need K >= 1, n >= 1, d >= 2; got K={K}, n={n}, d={d}")
    if not 0.0 <= y <= K * n ** (d - 1):
        raise ValueError(f"target y={y} outside [0, K n^(d-1)] = [0, {K * n ** (d - 1)}]")


def growth_weight(K: int, n: int, d: int, y: float) -> float:
    _check_growth(K, n, d, y)
    return (y / (K * n ** (d - 1))) ** (1.0 / d)


@dataclass(frozen=True)
class GrowthMoments:
    mean: float
    second_moment: float
    variance: float

    def __iter__(self):
        return iter((self.mean, self.second_moment, self.variance))


def growth_moments(K: int, n: int, d: int, y: float) -> GrowthMoments:
    """Moments of the dropout output of the uniform growth network on the all-ones input."""
    _check_growth(K, n, d, y)
    second = y * y * (1.0 + 1.0 / K) * (1.0 + 1.0 / n) ** (d - 1)
    return GrowthMoments(float(y), second, second - y * y)


def growth_l2_bound(K: int, n: int, d: int, y: float, lam: float) -> float:
    """Upper bound on the L2 criterion of the growth network (its risk is zero)."""
    _check_growth(K, n, d, y)
    return lam * y ** (2.0 / d) / 2.0 * (K * n + n * n * (d - 2) + n)


# --------------------------------------------------------------------------
# weight decay, depth 2, distribution P_(x,1)


def _norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    nx = math.sqrt(float(x @ x))
    if nx == 0.0:
        raise ValueError("x must be nonzero")
    return nx


def weight_decay_activation(lam: float, x) -> float:
    """Output activation ``A`` on ``x`` of the minimiser of J_2 for P_(x,1)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return max(0.0, 1.0 - 2.0 * lam / _norm(x))


def weight_decay_aversion(lam: float, x) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    _norm(x)
    return min(0.25, lam * lam / float(x @ x))


def j2_of_activation(A: float, lam: float, x) -> float:
    """J_2 of the cheapest network whose output activation on ``x`` is ``A``."""
    if A < 0:
        raise ValueError("activation must be non-negative")
    return 0.5 * (((1.0 - A) / 2.0) ** 2 + ((1.0 + A) / 2.0 - 1.0) ** 2
                  + lam * 2.0 * A / _norm(x))


def l2_criterion(net: LayeredNetwork, dist: ExampleDistribution, lam: float) -> float:
    """Risk plus ``lam/2`` times the squared connection weights (biases unpenalised)."""
    return risk(net, dist) + 0.5 * lam * net.squared_weight_norm()


@dataclass(frozen=True, eq=False)
class WeightDecayOptimum:
    activation_A: float
    output_bias: float
    per_node_budget: np.ndarray
    network: LayeredNetwork
    j2_value: float
    risk: float


def build_weight_decay_optimum(lam: float, x, n: int = 1,
                               budget_split: str = "even") -> WeightDecayOptimum:
    """Depth-2 network minimising J_2 on P_(x,1) while maximising risk among minimisers.

    The total squared-weight budget ``2A/|x|`` is split over the hidden
    nodes, evenly or all on the first node.  Node ``j`` with budget ``B_j``
    gets input weights ``alpha_j x`` with ``alpha_j = sqrt(B_j / (2 x.x))`` and
    output weight ``sqrt(B_j / 2)``.
    """
    from .constructions import point_distribution

    x = np.asarray(x, dtype=np.float64)
    A = weight_decay_activation(lam, x)
    xx = float(x @ x)
    total = 2.0 * A / math.sqrt(xx)
    if budget_split == "even":
        budget = np.full(n, total / n)
    elif budget_split == "single":
        budget = np.zeros(n)
        budget[0] = total
    else:
        raise ValueError(f"budget_split must be 'even' or 'single', got {budget_split!r}")
    alpha = np.sqrt(budget / (2.0 * xx))
    b_star = (1.0 - A) / 2.0
    net = LayeredNetwork(
        weights=(np.outer(alpha, x),),
        biases=(np.zeros(n),),
        output_weights=np.sqrt(budget / 2.0),
        output_bias=b_star,
    )
    dist = point_distribution(x, 1.0)
    return WeightDecayOptimum(
        activation_A=A,
        output_bias=b_star,
        per_node_budget=budget,
        network=net,
        j2_value=l2_criterion(net, dist, lam),
        risk=risk(net, dist),
    )


@dataclass(frozen=True)
class WeightDecaySearch:
    j2: np.ndarray
    risk: np.ndarray


def search_weight_decay_minimum(lams, xs, n: int = 4, restarts: int = 10, steps: int = 50_000,
                                seed: int = 0, lr: float | None = None) -> WeightDecaySearch:
    """Full-batch gradient descent on J_2 over depth-2 networks, for many problems at once.

    ``lams`` has shape ``(C,)`` and ``xs`` shape ``(C, K)``; each problem is the
    distribution P_(x,1).  Every problem gets ``restarts`` random starts and the
    lowest J_2 found (with its risk) is returned.  This is a falsification
    check on :func:`build_weight_decay_optimum`, not a solver.
    """
    lams = np.asarray(lams, dtype=np.float64).reshape(-1)
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    C, K = xs.shape
    rng = np.random.default_rng(seed)
    R = restarts
    lam = np.repeat(lams, R)[:, None]                 # (C R, 1)
    X = np.repeat(xs, R, axis=0)                      # (C R, K)
    xx = np.sum(X * X, axis=1, keepdims=True)
    step = (0.5 / (1.0 + xx)) if lr is None else np.full_like(xx, lr)
    V = rng.normal(0.0, 0.5 / math.sqrt(K), size=(C * R, n, K))
    a = np.zeros((C * R, n))
    w = rng.normal(0.0, 0.5, size=(C * R, n))
    b = np.zeros((C * R, 1))

    def evaluate(V, a, w, b):
        pre_x = np.einsum("rnk,rk->rn", V, X) + a
        h_x, h_0 = np.maximum(pre_x, 0.0), np.maximum(a, 0.0)
        f_x = np.sum(w * h_x, axis=1, keepdims=True) + b
        f_0 = np.sum(w * h_0, axis=1, keepdims=True) + b
        return pre_x, h_x, h_0, f_x, f_0

    for _ in range(steps):
        pre_x, h_x, h_0, f_x, f_0 = evaluate(V, a, w, b)
        r_x, r_0 = 0.5 * 2.0 * (f_x - 1.0), 0.5 * 2.0 * f_0
        g_w = r_x * h_x + r_0 * h_0 + lam * w
        g_b = r_x + r_0
        d_x = r_x * w * (pre_x > 0)
        d_0 = r_0 * w * (a > 0)
        g_V = d_x[:, :, None] * X[:, None, :] + lam[:, :, None] * V
        g_a = d_x + d_0
        V -= step[:, :, None] * g_V
        a -= step * g_a
        w -= step * g_w
        b -= step * g_b

    _, _, _, f_x, f_0 = evaluate(V, a, w, b)
    risks = (0.5 * (f_x - 1.0) ** 2 + 0.5 * f_0**2).reshape(C, R)
    l2 = (np.sum(V * V, axis=(1, 2)) + np.sum(w * w, axis=1)).reshape(C, R)
    j2 = risks + 0.5 * lams[:, None] * l2
    best = np.argmin(j2, axis=1)
    rows = np.arange(C)
    return WeightDecaySearch(j2[rows, best], risks[rows, best])


def check_weight_decay_optimum(opt: WeightDecayOptimum, x) -> dict:
    """Residuals of the defining identities of a constructed optimum."""
    x = np.asarray(x, dtype=np.float64)
    A = opt.activation_A
    return {
        "forward_x": forward(opt.network, x) - (1.0 + A) / 2.0,
        "forward_0": forward(opt.network, np.zeros_like(x)) - (1.0 - A) / 2.0,
        "risk": opt.risk - (1.0 - A) ** 2 / 4.0,
        "budget": opt.network.squared_weight_norm() - 2.0 * A / _norm(x),
    }
