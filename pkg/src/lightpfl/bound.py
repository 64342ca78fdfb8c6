"""Compression penalty terms, optimizer coefficients and the convergence bound."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lightpfl.errors import InputError
from lightpfl.model import BoundConstants


def pruning_penalty(r: float, c: BoundConstants) -> float:
    """Pruning penalty L1 M sqrt(1 - r) + (L2 eta^2 - eta) G^2 / 2 + 3 eta sigma^2 / 2."""
    if not 0.0 <= r <= 1.0:
        raise InputError("pruning rate outside [0, 1]")
    eta = c.eta
    return (c.L1 * c.M * np.sqrt(1.0 - r)
            + (c.L2 * eta**2 - eta) * c.G**2 / 2.0
            + 1.5 * eta * c.sigma**2)


def sparsification_penalty(k, gamma, c: BoundConstants) -> float:
    """Sparsification penalty ((L2 eta^2 - 3 eta) G^2 / 2) sum_i gamma_i k_i + eta G^2."""
    k = np.atleast_1d(np.asarray(k, dtype=np.float64))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
    if k.shape != gamma.shape:
        raise InputError("k and gamma must have the same length")
    eta = c.eta
    return float((c.L2 * eta**2 - 3.0 * eta) * c.G**2 / 2.0 * np.dot(gamma, k) + eta * c.G**2)


def objective_weights(c: BoundConstants) -> tuple[float, float]:
    """prune_weight = 2 L1 M / (eta T), sparse_weight = (3 - L2 eta) G^2 / T."""
    prune_weight = 2.0 * c.L1 * c.M / (c.eta * c.T)
    sparse_weight = (3.0 - c.L2 * c.eta) * c.G**2 / c.T
    return prune_weight, sparse_weight


def surrogate_objective(r, k, gamma, prune_weight: float, sparse_weight: float) -> float:
    """sum_n gamma_n (prune_weight sqrt(1 - r_n) - sparse_weight k_n)."""
    r = np.asarray(r, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    return float(np.dot(gamma, prune_weight * np.sqrt(np.clip(1.0 - r, 0.0, None)) - sparse_weight * k))


def _check_gamma(gamma):
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma < 0) or abs(gamma.sum() - 1.0) > 1e-9:
        raise InputError("gamma must be nonnegative and sum to 1")
    return gamma


def convergence_bound(r_hist, k_hist, gamma, c: BoundConstants, initial_losses,
                      optimal_losses=None) -> float:
    """Right-hand side of the time-averaged squared gradient norm bound.

    ``r_hist`` and ``k_hist`` have shape (T, N).  The sparsification term
    weights the same all-client value sparsification_penalty(k_t) by gamma_n for every n.
    ``optimal_losses`` defaults to 0, a valid lower bound for cross-entropy.
    """
    if not c.step_condition_holds:
        raise InputError(f"step condition violated: eta * L2 = {c.eta * c.L2:.4g} > 3")
    r_hist = np.atleast_2d(np.asarray(r_hist, dtype=np.float64))
    k_hist = np.atleast_2d(np.asarray(k_hist, dtype=np.float64))
    gamma = _check_gamma(gamma)
    if r_hist.shape != k_hist.shape or r_hist.shape[1] != gamma.size:
        raise InputError("rate histories must be (T, N) with N = len(gamma)")
    T = r_hist.shape[0]
    if T < 1:
        raise InputError("need at least one round")
    F1 = np.asarray(initial_losses, dtype=np.float64)
    Fs = np.zeros_like(F1) if optimal_losses is None else np.asarray(optimal_losses, dtype=np.float64)
    head = 2.0 / (c.eta * T) * float(np.dot(gamma, F1 - Fs))
    total = 0.0
    for t in range(T):
        p2 = sparsification_penalty(k_hist[t], gamma, c)
        for n in range(gamma.size):
            total += gamma[n] * (pruning_penalty(r_hist[t, n], c) + p2)
    return head + 2.0 / (c.eta * T) * total


@dataclass
class AssumptionMonitor:
    """Running empirical checks of the bounded-gradient and smoothness assumptions.

    Observed maxima are compared to the frozen constants; ``violations`` maps
    assumption names to (observed, bound) pairs.
    """

    constants: BoundConstants
    max_grad_sq: float = 0.0
    max_weight_norm: float = 0.0
    mean_var: list = field(default_factory=list)
    max_L1_ratio: float = 0.0
    max_L2_ratio: float = 0.0

    def observe(self, stoch_grad, full_grad, weights):
        g = np.asarray(stoch_grad)
        self.max_grad_sq = max(self.max_grad_sq, float(g @ g))
        self.max_weight_norm = max(self.max_weight_norm, float(np.linalg.norm(weights)))
        diff = g - np.asarray(full_grad)
        self.mean_var.append(float(diff @ diff))

    def observe_pair(self, w0, w1, F0, F1, g0, g1):
        step = float(np.linalg.norm(np.asarray(w1) - np.asarray(w0)))
        if step <= 1e-12:
            return
        self.max_L1_ratio = max(self.max_L1_ratio, abs(F1 - F0) / step)
        self.max_L2_ratio = max(self.max_L2_ratio,
                                float(np.linalg.norm(np.asarray(g1) - np.asarray(g0))) / step)

    def summary(self) -> dict:
        c = self.constants
        return {
            "smoothness_L1": (self.max_L1_ratio, c.L1),
            "smoothness_L2": (self.max_L2_ratio, c.L2),
            "variance_sigma2": (float(np.mean(self.mean_var)) if self.mean_var else 0.0, c.sigma**2),
            "gradient_G2": (self.max_grad_sq, c.G**2),
            "weights_M": (self.max_weight_norm, c.M),
        }

    @property
    def violations(self) -> dict:
        return {k: v for k, v in self.summary().items() if v[0] > v[1]}

    def diagnose(self) -> list[str]:
        """Human-readable list of breached assumptions."""
        names = {
            "smoothness_L1": "smoothness: Lipschitz risk (L1)",
            "smoothness_L2": "smoothness: Lipschitz gradient (L2)",
            "variance_sigma2": "unbiased gradients: bounded variance (sigma)",
            "gradient_G2": "boundedness: stochastic gradient norm (G)",
            "weights_M": "boundedness: weight norm (M)",
        }
        return [f"{names[k]}: observed {v[0]:.4g} > bound {v[1]:.4g}"
                for k, v in self.violations.items()]
