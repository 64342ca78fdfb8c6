"""Pruning / sparsification masks and uplink payload bit accounting."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from lightpfl.errors import DomainError, InputError

PRUNE_STRATEGIES = ("random", "magnitude", "importance")
SPARSE_STRATEGIES = ("random", "topk")
K_MIN = 1e-3


class DegeneratePayloadWarning(UserWarning):
    """A rate that keeps no elements was priced."""


@dataclass(frozen=True)
class Mask:
    indicator: np.ndarray
    rate: float
    kind: str  # "prune" (length d^P) or "sparse" (length d^B)

    @property
    def count(self) -> int:
        return int(self.indicator.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.indicator)

    def __len__(self):
        return self.indicator.size


@dataclass(frozen=True)
class BitsConfig:
    fpp: int
    d_base: int

    def __post_init__(self):
        if self.fpp not in (32, 64):
            raise InputError(f"FPP must be 32 or 64, got {self.fpp}")
        if self.d_base < 1:
            raise InputError("d_base must be positive")


def rate_to_count(rate: float, length: int) -> int:
    """Round-half-up of rate * length, clamped to [0, length]."""
    if not 0.0 <= rate <= 1.0:
        raise InputError(f"rate {rate} outside [0, 1]")
    return int(min(max(math.floor(rate * length + 0.5), 0), length))


def _select(scores: np.ndarray, count: int) -> np.ndarray:
    # stable sort on negated scores: equal scores keep the lowest index first
    order = np.argsort(-scores, kind="stable")
    ind = np.zeros(scores.size, dtype=bool)
    ind[order[:count]] = True
    return ind


def _random_indicator(length: int, count: int, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ind = np.zeros(length, dtype=bool)
    ind[rng.choice(length, size=count, replace=False)] = True
    return ind


def _mask(ind: np.ndarray, kind: str) -> Mask:
    n = ind.size
    return Mask(ind, float(ind.sum()) / n if n else 1.0, kind)


def make_prune_mask(weights, r: float, strategy: str = "magnitude", grads=None, seed=None) -> Mask:
    """Keep round(r * d^P) personalization weights.

    ``magnitude`` keeps the largest |w|, ``importance`` the largest (w * g)^2,
    and ``random`` a seeded uniform subset.
    """
    w = np.asarray(weights, dtype=np.float64)
    count = rate_to_count(r, w.size)
    if strategy == "magnitude":
        ind = _select(np.abs(w), count)
    elif strategy == "importance":
        if grads is None:
            raise InputError("importance pruning needs gradients")
        g = np.asarray(grads, dtype=np.float64)
        if g.shape != w.shape:
            raise InputError("grads and weights differ in length")
        ind = _select((w * g) ** 2, count)
    elif strategy == "random":
        ind = _random_indicator(w.size, count, seed)
    else:
        raise InputError(f"unknown prune strategy {strategy!r}")
    return _mask(ind, "prune")


def make_sparse_mask(grads, k: float, strategy: str = "topk", seed=None) -> Mask:
    """Keep round(k * d^B) base-gradient coordinates (largest |g| for topk)."""
    g = np.asarray(grads, dtype=np.float64)
    count = rate_to_count(k, g.size)
    if strategy == "topk":
        ind = _select(np.abs(g), count)
    elif strategy == "random":
        ind = _random_indicator(g.size, count, seed)
    else:
        raise InputError(f"unknown sparsification strategy {strategy!r}")
    return _mask(ind, "sparse")


def apply_mask(x, m: Mask) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != m.indicator.shape:
        raise InputError(f"vector length {x.size} != mask length {m.indicator.size}")
    return x * m.indicator


def log2_binomial(n: int, m: int) -> float:
    return (math.lgamma(n + 1) - math.lgamma(m + 1) - math.lgamma(n - m + 1)) / math.log(2.0)


def exact_bits(k: float, cfg: BitsConfig) -> float:
    """Values plus sign bits, and log2 C(d^B, k d^B) bits for the positions."""
    m = rate_to_count(k, cfg.d_base)
    if m == 0:
        warnings.warn("rate keeps no elements; payload is empty", DegeneratePayloadWarning)
        return 0.0
    return m * (cfg.fpp + 1) + log2_binomial(cfg.d_base, m)


def approx_bits(k: float, cfg: BitsConfig) -> float:
    """Stirling form k d^B (log2(1/k) + FPP + 1)."""
    if not k > 0:
        raise DomainError("approx_bits needs k > 0")
    if k > 1:
        raise DomainError("approx_bits needs k <= 1")
    return k * cfg.d_base * (math.log2(1.0 / k) + cfg.fpp + 1)
