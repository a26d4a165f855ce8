"""Dropout criterion, dropout penalty and related expectations over dropout patterns.

Exact mode enumerates every keep/drop pattern of the droppable nodes (inputs
and hidden units).  Patterns are visited as a binary counter whose low bits
are the inputs, followed by hidden layer 1, 2, ...; pattern probability is
``p**kept * (1 - p)**dropped``.  The index range is cut into fixed-size chunks
and the per-chunk sums are combined with ``math.fsum``, so results do not
depend on how many worker threads processed the chunks.

Monte Carlo mode draws patterns (and examples) i.i.d. from numpy's PCG64
generator seeded with ``DropoutConfig.seed``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .network import (
    ExampleDistribution,
    LayeredNetwork,
    ShapeError,
    check_keep_probability,
    dropout_forward_batch,
    forward,
    risk,
)

EXACT = "exact"
MONTE_CARLO = "monte-carlo"

_CHUNK = 1 << 16
# upper bound on random draws held in memory per Monte Carlo batch
_MC_CELLS = 1 << 22
_MC_BATCH = 4096


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class DropoutConfig:
    keep_probability: float = 0.5
    mode: str = EXACT
    sample_count: int = 100_000
    seed: int = 0
    enumeration_cap: int = 26
    threads: int = 1

    def __post_init__(self):
        check_keep_probability(self.keep_probability)
        if self.mode not in (EXACT, MONTE_CARLO):
            raise ValueError(f"mode must be {EXACT!r} or {MONTE_CARLO!r}, got {self.mode!r}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @classmethod
    def monte_carlo(cls, sample_count: int, seed: int = 0, keep_probability: float = 0.5):
        return cls(keep_probability=keep_probability, mode=MONTE_CARLO,
                   sample_count=sample_count, seed=seed)


@dataclass(frozen=True)
class CriterionReport:
    risk: float
    criterion: float
    penalty: float
    mode: str
    keep_probability: float
    pattern_count: Optional[int] = None
    sample_count: Optional[int] = None
    std_error: Optional[float] = None
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


# --------------------------------------------------------------------------
# pattern enumeration


class _PatternSpace:
    """Cartesian product of a set of input masks and all hidden-layer bit patterns."""

    def __init__(self, net: LayeredNetwork, p: float, input_masks=None, input_probs=None):
        self.net = net
        self.p = p
        K = net.input_dim
        if input_masks is None:
            input_masks = _bits(np.arange(1 << K), K)
            input_probs = _bernoulli_probs(input_masks, p)
        self.input_masks = np.asarray(input_masks, dtype=bool)
        self.input_probs = np.asarray(input_probs, dtype=np.float64)
        self.hidden_bits = sum(net.hidden_widths)
        self.size = len(self.input_masks) << self.hidden_bits

    def chunk(self, start: int, stop: int):
        idx = np.arange(start, stop, dtype=np.int64)
        m = len(self.input_masks)
        in_idx, hid_idx = idx % m, idx // m
        hid = _bits(hid_idx, self.hidden_bits)
        prob = self.input_probs[in_idx] * _bernoulli_probs(hid, self.p)
        cuts = np.cumsum(self.net.hidden_widths)[:-1]
        return self.input_masks[in_idx], np.split(hid, cuts, axis=1), prob


def _bits(idx: np.ndarray, width: int) -> np.ndarray:
    return ((idx[:, None] >> np.arange(width, dtype=np.int64)) & 1).astype(bool)


def _bernoulli_probs(bits: np.ndarray, p: float) -> np.ndarray:
    kept = bits.sum(axis=1)
    return p**kept * (1.0 - p) ** (bits.shape[1] - kept)


def _check_cap(net: LayeredNetwork, config: DropoutConfig, extra: str = "") -> None:
    n = net.droppable_count
    if n > config.enumeration_cap:
        raise EnumerationTooLarge(
            f"network has {n} droppable nodes ({2**n} patterns{extra}), above the exact-mode "
            f"cap of {config.enumeration_cap}; use Monte Carlo mode "
            f"(DropoutConfig(mode='monte-carlo')) or raise enumeration_cap"
        )


def _shifted_moments(space: _PatternSpace, xs: np.ndarray, shifts: np.ndarray, threads: int = 1):
    """Exact ``(E[D - s], E[(D - s)^2])`` for each input row of ``xs`` with shift ``s``."""
    starts = range(0, space.size, _CHUNK)

    def work(start):
        masks, hidden, prob = space.chunk(start, min(start + _CHUNK, space.size))
        out = np.empty((len(xs), 2))
        for e, (x, s) in enumerate(zip(xs, shifts)):
            dev = dropout_forward_batch(space.net, x, masks, hidden, space.p) - s
            out[e, 0] = np.sum(prob * dev)
            out[e, 1] = np.sum(prob * dev * dev)
        return out

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    stacked = np.stack(parts)
    return np.array([[math.fsum(stacked[:, e, k]) for k in range(2)] for e in range(len(xs))])


def pattern_outputs(net: LayeredNetwork, x, p: float = 0.5, cap: int = 26):
    """Outputs and probabilities of every dropout pattern, in enumeration order."""
    _check_cap(net, DropoutConfig(keep_probability=p, enumeration_cap=cap))
    space = _PatternSpace(net, check_keep_probability(p))
    masks, hidden, prob = space.chunk(0, space.size)
    return dropout_forward_batch(net, x, masks, hidden, p), prob


def output_moments(net: LayeredNetwork, x, config: DropoutConfig = DropoutConfig()):
    """``(E[D(W, x, R)], E[D(W, x, R)^2])`` over dropout patterns."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if config.mode == MONTE_CARLO:
        dist = ExampleDistribution(x, [0.0], [1.0])
        d, _ = _sample_outputs(net, dist, config)
        return float(np.mean(d)), float(np.mean(d * d))
    _check_cap(net, config)
    space = _PatternSpace(net, config.keep_probability)
    m1, m2 = _shifted_moments(space, x, np.zeros(1), config.threads)[0]
    return float(m1), float(m2)


# --------------------------------------------------------------------------
# criterion and penalty


def _check_dist(net: LayeredNetwork, dist: ExampleDistribution) -> None:
    if dist.input_dim != net.input_dim:
        raise ShapeError(f"distribution has {dist.input_dim} features, network expects {net.input_dim}")


def exact_criterion(net: LayeredNetwork, dist: ExampleDistribution,
                    config: DropoutConfig = DropoutConfig()) -> CriterionReport:
    """Dropout criterion ``J_D`` by full enumeration of dropout patterns."""
    _check_dist(net, dist)
    _check_cap(net, config)
    space = _PatternSpace(net, config.keep_probability)
    moments = _shifted_moments(space, dist.inputs, dist.targets, config.threads)
    jd = math.fsum(w * m for w, m in zip(dist.probabilities, moments[:, 1]))
    r = risk(net, dist)
    return CriterionReport(risk=r, criterion=jd, penalty=jd - r, mode=EXACT,
                           keep_probability=config.keep_probability, pattern_count=space.size)


def _mc_batch(net: LayeredNetwork) -> int:
    return max(1, min(_MC_BATCH, _MC_CELLS // max(1, net.droppable_count)))


def _sample_outputs(net: LayeredNetwork, dist: ExampleDistribution, config: DropoutConfig):
    """Draw ``sample_count`` (example, pattern) pairs; return outputs and example indices."""
    rng = np.random.default_rng(config.seed)
    p = config.keep_probability
    total = config.sample_count
    batch = _mc_batch(net)
    outputs = np.empty(total)
    examples = np.empty(total, dtype=np.int64)
    done = 0
    while done < total:
        b = min(batch, total - done)
        ex = rng.choice(len(dist), size=b, p=dist.probabilities)
        in_masks = rng.random((b, net.input_dim)) < p
        hid = [rng.random((b, n)) < p for n in net.hidden_widths]
        out = np.empty(b)
        for e in np.unique(ex):
            sel = ex == e
            out[sel] = dropout_forward_batch(net, dist.inputs[e], in_masks[sel],
                                             [h[sel] for h in hid], p)
        outputs[done:done + b] = out
        examples[done:done + b] = ex
        done += b
    return outputs, examples


def sample_mean_and_error(values: np.ndarray) -> tuple[float, float]:
    """Sample mean and its standard error, computed on data shifted by the first value."""
    n = values.size
    shift = float(values[0])
    dev = values - shift
    s1, s2 = math.fsum(dev), math.fsum(dev * dev)
    mean = shift + s1 / n
    if n < 2:
        return mean, float("nan")
    var = max(0.0, (s2 - s1 * s1 / n) / (n - 1))
    return mean, math.sqrt(var / n)


def monte_carlo_criterion(net: LayeredNetwork, dist: ExampleDistribution,
                          config: DropoutConfig) -> CriterionReport:
    """Unbiased estimate of ``J_D`` from i.i.d. (example, pattern) draws."""
    _check_dist(net, dist)
    if config.sample_count < 2:
        raise ValueError("Monte Carlo estimation needs at least 2 samples")
    outputs, examples = _sample_outputs(net, dist, config)
    jd, se = sample_mean_and_error((outputs - dist.targets[examples]) ** 2)
    r = risk(net, dist)
    return CriterionReport(risk=r, criterion=jd, penalty=jd - r, mode=MONTE_CARLO,
                           keep_probability=config.keep_probability,
                           sample_count=config.sample_count, std_error=se, seed=config.seed)


def criterion(net: LayeredNetwork, dist: ExampleDistribution,
              config: DropoutConfig = DropoutConfig()) -> CriterionReport:
    """Dispatch on ``config.mode``."""
    if config.mode == MONTE_CARLO:
        return monte_carlo_criterion(net, dist, config)
    return exact_criterion(net, dist, config)


def exact_penalty(net: LayeredNetwork, dist: ExampleDistribution,
                  config: DropoutConfig = DropoutConfig()) -> CriterionReport:
    """Same report as :func:`exact_criterion`; ``penalty = J_D - R`` is the headline."""
    return exact_criterion(net, dist, config)


# --------------------------------------------------------------------------
# psi, penalty decomposition, output scale


def psi(net: LayeredNetwork, ell: int, config: DropoutConfig = DropoutConfig(), x=None) -> float:
    """Mean dropout output when exactly ``ell`` inputs are kept.

    The kept inputs are a uniformly random ``ell``-subset; hidden units are
    dropped independently as usual.  ``x`` defaults to all ones.
    """
    K = net.input_dim
    if not 0 <= ell <= K:
        raise ValueError(f"ell must lie in [0, {K}], got {ell}")
    x = np.ones(K) if x is None else np.asarray(x, dtype=np.float64)
    p = config.keep_probability
    if config.mode == MONTE_CARLO:
        rng = np.random.default_rng(config.seed)
        total, batch, acc = config.sample_count, _mc_batch(net), []
        done = 0
        while done < total:
            b = min(batch, total - done)
            order = np.argsort(rng.random((b, K)), axis=1)
            masks = np.zeros((b, K), bool)
            np.put_along_axis(masks, order[:, :ell], True, axis=1)
            hid = [rng.random((b, n)) < p for n in net.hidden_widths]
            acc.append(dropout_forward_batch(net, x, masks, hid, p))
            done += b
        return sample_mean_and_error(np.concatenate(acc))[0]
    _check_cap(net, config, extra=" before restricting the input masks")
    subsets = list(combinations(range(K), ell))
    masks = np.zeros((len(subsets), K), bool)
    for i, s in enumerate(subsets):
        masks[i, list(s)] = True
    space = _PatternSpace(net, p, masks, np.full(len(subsets), 1.0 / len(subsets)))
    return float(_shifted_moments(space, x[None, :], np.zeros(1), config.threads)[0, 0])


@dataclass(frozen=True)
class PenaltyDecomposition:
    e_delta_sq: float
    e_delta: float
    penalty: float

    def __iter__(self):
        return iter((self.e_delta_sq, self.e_delta, self.penalty))


def penalty_decomposition(net: LayeredNetwork, x, y: float, p: float = 0.5,
                          cap: int = 26) -> PenaltyDecomposition:
    """Single-example penalty split as ``E(delta^2) + 2 (W(x) - y) E(delta)``.

    ``delta`` is the change that dropout causes in the output node's input,
    ``w . (H(W, x, R) - h)``, which equals ``D(W, x, R) - W(x)``.
    """
    config = DropoutConfig(keep_probability=p, enumeration_cap=cap)
    _check_cap(net, config)
    x = np.asarray(x, dtype=np.float64)
    plain = forward(net, x)
    space = _PatternSpace(net, config.keep_probability)
    e_delta, e_delta_sq = _shifted_moments(space, x[None, :], np.array([plain]))[0]
    return PenaltyDecomposition(float(e_delta_sq), float(e_delta),
                                float(e_delta_sq + 2.0 * (plain - y) * e_delta))


@dataclass(frozen=True)
class OutputScale:
    c_star: float
    criterion: float
    quadratic: tuple[float, float, float]

    def __iter__(self):
        return iter((self.c_star, self.criterion))


def optimize_output_scale(net: LayeredNetwork, dist: ExampleDistribution,
                          config: DropoutConfig = DropoutConfig(), direction=None) -> OutputScale:
    """Best common scale ``c`` for output weights ``c * u``.

    ``J_D(c) = alpha c^2 + beta c + gamma`` where ``alpha`` and ``beta`` come
    from the first two moments of ``Z = u . H(W, x, R)``.  ``u`` defaults to
    the network's current output weights; the output bias is kept.
    """
    _check_dist(net, dist)
    u = net.output_weights if direction is None else np.asarray(direction, dtype=np.float64)
    probe = net.replace(output_weights=u, output_bias=0.0)
    if config.mode == MONTE_CARLO:
        z, examples = _sample_outputs(probe, dist, config)
        resid = net.output_bias - dist.targets[examples]
        alpha = float(np.mean(z * z))
        beta = float(2.0 * np.mean(z * resid))
        gamma = float(np.mean(resid * resid))
    else:
        _check_cap(net, config)
        space = _PatternSpace(probe, config.keep_probability)
        moments = _shifted_moments(space, dist.inputs, np.zeros(len(dist)), config.threads)
        resid = net.output_bias - dist.targets
        w = dist.probabilities
        alpha = math.fsum(w * moments[:, 1])
        beta = 2.0 * math.fsum(w * resid * moments[:, 0])
        gamma = math.fsum(w * resid * resid)
    if alpha < -1e-12:
        raise ArithmeticError(f"second moment came out negative ({alpha!r})")
    c_star = 0.0 if alpha <= 0.0 else -beta / (2.0 * alpha)
    return OutputScale(c_star, alpha * c_star**2 + beta * c_star + gamma, (alpha, beta, gamma))
