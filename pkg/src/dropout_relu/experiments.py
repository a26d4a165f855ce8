"""Desk-scale training experiments: negative-weight counts and input-scale sensitivity."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .invariance import count_negative_weights
from .network import ExampleDistribution, risk
from .training import TrainConfig, TrainingDiverged, init_network, sgd_train

SCALES = (0.5, 0.75, 1.0, 1.25, 1.5)


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _seeds(*key: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(list(key)).generate_state(count)]


# --------------------------------------------------------------------------
# negative weights


NEGWEIGHTS_CONFIG = TrainConfig(max_iters=10_000, lr_base=0.1, lr_decay=0.1, momentum=0.0)


@dataclass
class NegWeightsResult:
    rows: list[dict]

    @property
    def gt(self) -> int:
        return sum(r["outcome"] == "gt" for r in self.rows)

    @property
    def lt(self) -> int:
        return sum(r["outcome"] == "lt" for r in self.rows)

    @property
    def eq(self) -> int:
        return sum(r["outcome"] == "eq" for r in self.rows)

    def table(self) -> dict:
        return {"gt": self.gt, "lt": self.lt, "eq": self.eq}


def negweights_dataset(K: int = 5) -> ExampleDistribution:
    return ExampleDistribution(np.stack([np.zeros(K), np.ones(K)]), [0.0, 1.0])


def negweights_rep(seed: int, config: TrainConfig = NEGWEIGHTS_CONFIG, K: int = 5, n: int = 50,
                   d: int = 3, max_attempts: int = 20) -> dict:
    """One clone-and-train comparison: dropout copy vs unregularized copy.

    At the default learning rate a minority of dropout runs blow up.  Such an
    attempt is discarded and the repetition redrawn from seeds derived from
    ``(seed, attempt)``; ``attempts`` in the result records how many were needed.
    """
    data = negweights_dataset(K)
    for attempt in range(max_attempts):
        init_seed, drop_seed, plain_seed = _seeds(seed, attempt, count=3)
        net0 = init_network(K, n, d, seed=init_seed, gain=config.init_gain)
        try:
            dropped = sgd_train(net0, data, replace(config, regularizer="dropout", seed=drop_seed))
            plain = sgd_train(net0, data, replace(config, regularizer="none", seed=plain_seed))
        except TrainingDiverged:
            continue
        neg_d, neg_p = count_negative_weights(dropped), count_negative_weights(plain)
        outcome = "gt" if neg_d > neg_p else "lt" if neg_d < neg_p else "eq"
        return {"seed": seed, "attempts": attempt + 1, "neg_dropout": neg_d, "neg_plain": neg_p,
                "outcome": outcome, "loss_plain": risk(plain, data)}
    raise TrainingDiverged(f"seed {seed}: training diverged in all {max_attempts} attempts")


def experiment_negweights(reps: int = 100, seed: int = 0, config: TrainConfig = NEGWEIGHTS_CONFIG,
                          threads: int = 1) -> NegWeightsResult:
    """Repetition ``i`` uses seed ``seed + i``."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    rows = _map(lambda i: {"rep": i, **negweights_rep(seed + i, config)}, range(reps), threads)
    return NegWeightsResult(rows)


# --------------------------------------------------------------------------
# input scale


SCALE_CONFIG = TrainConfig(max_iters=100_000, lr_base=0.01, lr_decay=1e-5, momentum=0.5)
SCALE_WEIGHT_DECAY = 0.5


@dataclass
class ScaleResult:
    rows: list[dict]

    def aggregate(self) -> list[dict]:
        """Mean training loss per scale across runs."""
        out = []
        for s in sorted({r["scale"] for r in self.rows}):
            sel = [r for r in self.rows if r["scale"] == s]
            out.append({"scale": s, **{k: math.fsum(r[k] for r in sel) / len(sel)
                                       for k in ("loss_dropout", "loss_wd", "loss_none")}})
        return out

    def spread(self, key: str) -> float:
        vals = [r[key] for r in self.aggregate()]
        return max(vals) - min(vals)


def scale_dataset(rng: np.random.Generator, K: int = 5, m: int = 10) -> ExampleDistribution:
    """``m`` points uniform on ``[-1, 1]^K`` labelled by the product of coordinate signs."""
    X = rng.uniform(-1.0, 1.0, size=(m, K))
    return ExampleDistribution(X, np.prod(np.sign(X), axis=1))


def scale_run(run: int, seed: int = 0, config: TrainConfig = SCALE_CONFIG, K: int = 5, n: int = 5,
              d: int = 2, scales=SCALES, weight_decay: float = SCALE_WEIGHT_DECAY) -> list[dict]:
    data_seed, init_seed = _seeds(seed, run, count=2)
    base = scale_dataset(np.random.default_rng(data_seed), K)
    net0 = init_network(K, n, d, seed=init_seed, gain=config.init_gain)
    rows = []
    for k, s in enumerate(scales):
        data = base.scale_inputs(s)
        s_drop, s_wd, s_none = _seeds(seed, run, k, count=3)
        trained = {
            "loss_dropout": sgd_train(net0, data, replace(config, regularizer="dropout", seed=s_drop)),
            "loss_wd": sgd_train(net0, data, replace(config, regularizer="weight_decay",
                                                      weight_decay=weight_decay, seed=s_wd)),
            "loss_none": sgd_train(net0, data, replace(config, regularizer="none", seed=s_none)),
        }
        rows.append({"run": run, "scale": s, **{key: risk(net, data) for key, net in trained.items()}})
    return rows


def experiment_scale(runs: int = 10, seed: int = 0, config: TrainConfig = SCALE_CONFIG,
                     threads: int = 1, weight_decay: float = SCALE_WEIGHT_DECAY) -> ScaleResult:
    """Training loss (plain risk of the trained network) per input scale and regularizer."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    per_run = _map(lambda r: scale_run(r, seed, config, weight_decay=weight_decay), range(runs), threads)
    return ScaleResult([row for rows in per_run for row in rows])
